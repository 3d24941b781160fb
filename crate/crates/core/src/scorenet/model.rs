use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpCache};
use crate::error::{CldError, Result};
use crate::kernels::{self, CldParams};
use crate::samplers::VelocityScore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMode {
    /// `α = ℓ⁻¹ v / Σvv + α'`: analytic Normal score plus a learned residual.
    Mixed,
    /// `α = α'`.
    Raw,
}

impl std::str::FromStr for ScoreMode {
    type Err = CldError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mixed" => Ok(Self::Mixed),
            "raw" => Ok(Self::Raw),
            other => Err(CldError::InvalidArgument(format!("unknown score mode {other}"))),
        }
    }
}

/// Time-dependent scalars of the parameterization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelScales {
    /// `ℓ_t` of the HSM kernel.
    pub ell: f64,
    /// `Σ_t^vv` of the HSM kernel.
    pub svv: f64,
}

/// Velocity score `s_θ = -ℓ_t α_θ` backed by an MLP on `(x, v, t/T)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedScoreModel {
    pub net: Mlp,
    pub p: CldParams,
    pub mode: ScoreMode,
}

impl MixedScoreModel {
    pub fn new(net: Mlp, p: CldParams, mode: ScoreMode) -> Result<Self> {
        let d = net.output_dim();
        if net.input_dim() != 2 * d + 1 {
            return Err(CldError::InvalidArgument(format!(
                "network maps {} -> {d}, expected {} inputs",
                net.input_dim(),
                2 * d + 1
            )));
        }
        Ok(Self { net, p, mode })
    }

    /// Default architecture `[2d+1, h, h, h, d]`.
    pub fn default_widths(d: usize, hidden: usize) -> Vec<usize> {
        vec![2 * d + 1, hidden, hidden, hidden, d]
    }

    pub fn d(&self) -> usize {
        self.net.output_dim()
    }

    pub fn scales(&self, t: f64) -> Result<ModelScales> {
        let k = kernels::hsm_kernel(&self.p, t)?;
        Ok(ModelScales {
            ell: kernels::ell(&k, self.p.eps_num)?,
            svv: k.svv + self.p.eps_num,
        })
    }

    pub fn input(&self, x: &[f64], v: &[f64], t: f64) -> Vec<f64> {
        let mut inp = Vec::with_capacity(2 * x.len() + 1);
        inp.extend_from_slice(x);
        inp.extend_from_slice(v);
        inp.push(t / self.p.t_final);
        inp
    }

    /// `α_θ(u, t)` for one row; `cache` receives the network activations.
    pub fn alpha_cached(&self, x: &[f64], v: &[f64], t: f64, sc: &ModelScales, cache: &mut MlpCache) -> Vec<f64> {
        let mut a = self.net.forward_cached(&self.input(x, v, t), cache);
        if self.mode == ScoreMode::Mixed {
            for (ai, vi) in a.iter_mut().zip(v) {
                *ai += vi / (sc.ell * sc.svv);
            }
        }
        a
    }

    pub fn alpha(&self, x: &[f64], v: &[f64], t: f64) -> Result<Vec<f64>> {
        let sc = self.scales(t)?;
        Ok(self.alpha_cached(x, v, t, &sc, &mut MlpCache::default()))
    }
}

impl VelocityScore for MixedScoreModel {
    fn dim(&self) -> usize {
        self.d()
    }

    fn score_v(&self, x: &[f64], v: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let sc = self.scales(t)?;
        let d = self.d();
        out.par_chunks_mut(d)
            .zip(x.par_chunks(d).zip(v.par_chunks(d)))
            .for_each_init(MlpCache::default, |c, (o, (xr, vr))| {
                let a = self.alpha_cached(xr, vr, t, &sc, c);
                for (oi, ai) in o.iter_mut().zip(a) {
                    *oi = -sc.ell * ai;
                }
            });
        Ok(())
    }

    fn score_v_div(&self, x: &[f64], v: &[f64], t: f64, out: &mut [f64]) -> Option<f64> {
        let sc = self.scales(t).ok()?;
        let d = self.d();
        let a = self.alpha_cached(x, v, t, &sc, &mut MlpCache::default());
        for (oi, ai) in out.iter_mut().zip(a) {
            *oi = -sc.ell * ai;
        }
        let jac = self.net.input_jacobian(&self.input(x, v, t));
        let mut tr: f64 = -sc.ell * (0..d).map(|j| jac[j][d + j]).sum::<f64>();
        if self.mode == ScoreMode::Mixed {
            tr -= d as f64 / sc.svv;
        }
        Some(tr)
    }
}
