//! Probability-flow ODE: sampling and likelihood evaluation.

mod rk45;

pub use rk45::{rk45, Rk45Options, Rk45Output};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CldError, Result};
use crate::kernels::CldParams;
use crate::rng::{self, normal, stream_rng};
use crate::samplers::{StateBatch, VelocityScore};
use crate::stats::MeanSe;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeDist {
    Rademacher,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DivergenceMode {
    /// Analytic trace from the score, when the score provides it.
    Exact,
    /// Hutchinson probes with finite-difference Jacobian-vector products.
    Hutchinson,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OdeConfig {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    pub hutchinson_probes: usize,
    pub probe_dist: ProbeDist,
    pub divergence: DivergenceMode,
}

impl Default for OdeConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-5,
            atol: 1e-5,
            max_steps: 100_000,
            hutchinson_probes: 1,
            probe_dist: ProbeDist::Rademacher,
            divergence: DivergenceMode::Exact,
        }
    }
}

impl OdeConfig {
    fn rk(&self) -> Rk45Options {
        Rk45Options {
            rtol: self.rtol,
            atol: self.atol,
            max_steps: self.max_steps,
            h0: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0) || self.hutchinson_probes == 0 {
            return Err(CldError::InvalidArgument("bad ODE configuration".into()));
        }
        Ok(())
    }
}

/// Generative ODE field in reverse time, evaluated with the score at
/// diffusion time `t`:
/// `dx̄ = -βM⁻¹v̄`, `dv̄ = βx̄ + Γβ(s + M⁻¹v̄)`.
pub fn cld_ode_rhs<S: VelocityScore + ?Sized>(
    p: &CldParams,
    score: &S,
    x: &[f64],
    v: &[f64],
    t: f64,
    dx: &mut [f64],
    dv: &mut [f64],
) -> Result<()> {
    score.score_v(x, v, t, dv)?;
    let (b, g, mi) = (p.beta, p.gamma_fric, p.inv_mass());
    for i in 0..x.len() {
        dx[i] = -b * mi * v[i];
        dv[i] = b * x[i] + g * b * (dv[i] + mi * v[i]);
    }
    Ok(())
}

/// Forward-time field `F = -rhs` on the packed state `[x, v]`.
fn forward_field<S: VelocityScore + ?Sized>(
    p: &CldParams,
    score: &S,
    t: f64,
    u: &[f64],
    out: &mut [f64],
) -> Result<()> {
    let m = u.len() / 2;
    let (x, v) = u.split_at(m);
    let (dx, dv) = out.split_at_mut(m);
    cld_ode_rhs(p, score, x, v, t, dx, dv)?;
    out.iter_mut().for_each(|o| *o = -*o);
    Ok(())
}

/// Integrate prior draws from `T` to `ε` along the probability flow, then
/// apply the score-free denoising step. Rows are integrated in chunks.
pub fn ode_sample<S: VelocityScore + ?Sized>(
    p: &CldParams,
    score: &S,
    batch: StateBatch,
    cfg: &OdeConfig,
    chunk_rows: usize,
) -> Result<(StateBatch, usize)> {
    let d = batch.d;
    let eps = p.eps_cutoff;
    let rk = cfg.rk();
    let chunk = chunk_rows.max(1) * d;
    let parts: Vec<Result<(Vec<f64>, usize)>> = batch
        .x
        .par_chunks(chunk)
        .zip(batch.v.par_chunks(chunk))
        .map(|(xc, vc)| {
            let mut u = xc.to_vec();
            u.extend_from_slice(vc);
            let out = rk45(|t, y, o| forward_field(p, score, t, y, o), &u, p.t_final, eps, &rk)?;
            Ok((out.y, out.nfe))
        })
        .collect();
    let mut x = Vec::with_capacity(batch.x.len());
    let mut v = Vec::with_capacity(batch.v.len());
    let mut nfe = 0;
    for part in parts {
        let (u, k) = part?;
        let m = u.len() / 2;
        x.extend_from_slice(&u[..m]);
        v.extend_from_slice(&u[m..]);
        nfe += k;
    }
    let mut out = StateBatch::new(batch.n, d, x, v, eps);
    crate::samplers::denoise(p, &mut out, eps);
    Ok((out, nfe))
}

/// `log p_EQ(x, v)` for one state.
pub fn prior_log_density(p: &CldParams, x: &[f64], v: &[f64]) -> f64 {
    let d = x.len() as f64;
    let qx: f64 = x.iter().map(|a| a * a).sum();
    let qv: f64 = v.iter().map(|a| a * a).sum::<f64>() / p.mass;
    -d * LN_2PI - 0.5 * d * p.mass.ln() - 0.5 * (qx + qv)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodResult {
    /// Estimate of `log p_ε(x₀, v₀)`.
    pub logp_joint: f64,
    pub nfe: usize,
    /// `-logp_joint - H(p(v₀))` for this single velocity draw.
    pub bound_nats: f64,
    pub bound_bpd: f64,
}

/// Velocity-entropy term `H = (d/2) log(2πe γM)`.
pub fn velocity_entropy(p: &CldParams, d: usize) -> f64 {
    0.5 * d as f64 * (LN_2PI + 1.0 + p.v0_var().ln())
}

/// Joint log-likelihood of `(x0, v0)` at time `ε` by integrating the flow
/// forward to `T` with the instantaneous change of variables.
///
/// `nfe` counts evaluations of the augmented field; each evaluation costs
/// one score call plus, in Hutchinson mode, two per probe.
pub fn log_likelihood_joint<S: VelocityScore + ?Sized>(
    p: &CldParams,
    score: &S,
    x0: &[f64],
    v0: &[f64],
    cfg: &OdeConfig,
    seed: u64,
    stream: u64,
) -> Result<LikelihoodResult> {
    cfg.validate()?;
    let d = x0.len();
    let m = 2 * d;
    let mut r = stream_rng(seed, rng::tag::PROBE, stream);
    let probes: Vec<Vec<f64>> = (0..cfg.hutchinson_probes)
        .map(|_| {
            (0..m)
                .map(|_| match cfg.probe_dist {
                    ProbeDist::Rademacher => rng::rademacher(&mut r),
                    ProbeDist::Gaussian => normal(&mut r),
                })
                .collect()
        })
        .collect();
    let (b, g, mi) = (p.beta, p.gamma_fric, p.inv_mass());
    let exact = cfg.divergence == DivergenceMode::Exact;

    let field = |t: f64, y: &[f64], out: &mut [f64]| -> Result<()> {
        let (u, du) = (&y[..m], &mut out[..m]);
        let div = if exact {
            let (x, v) = u.split_at(d);
            let mut s = vec![0.0; d];
            let tr = score
                .score_v_div(x, v, t, &mut s)
                .ok_or_else(|| CldError::InvalidArgument("score has no exact divergence".into()))?;
            for i in 0..d {
                du[i] = b * mi * v[i];
                du[d + i] = -(b * x[i] + g * b * (s[i] + mi * v[i]));
            }
            -g * b * (tr + d as f64 * mi)
        } else {
            forward_field(p, score, t, u, du)?;
            hutchinson_div(p, score, t, u, &probes)?
        };
        out[m] = div;
        Ok(())
    };

    let mut y0 = Vec::with_capacity(m + 1);
    y0.extend_from_slice(x0);
    y0.extend_from_slice(v0);
    y0.push(0.0);
    let out = rk45(field, &y0, p.eps_cutoff, p.t_final, &cfg.rk())?;
    let (x_t, v_t) = out.y[..m].split_at(d);
    let logp = prior_log_density(p, x_t, v_t) + out.y[m];
    let bound = -logp - velocity_entropy(p, d);
    Ok(LikelihoodResult {
        logp_joint: logp,
        nfe: out.nfe,
        bound_nats: bound,
        bound_bpd: bound / (d as f64 * std::f64::consts::LN_2),
    })
}

/// Mean of `εᵀ (∂F/∂u) ε` over the probes via central differences.
fn hutchinson_div<S: VelocityScore + ?Sized>(
    p: &CldParams,
    score: &S,
    t: f64,
    u: &[f64],
    probes: &[Vec<f64>],
) -> Result<f64> {
    let m = u.len();
    let scale = u.iter().fold(1.0f64, |a, b| a.max(b.abs()));
    let h = 1e-5 * scale;
    let mut up = vec![0.0; m];
    let mut um = vec![0.0; m];
    let mut fp = vec![0.0; m];
    let mut fm = vec![0.0; m];
    let mut acc = 0.0;
    for e in probes {
        for i in 0..m {
            up[i] = u[i] + h * e[i];
            um[i] = u[i] - h * e[i];
        }
        forward_field(p, score, t, &up, &mut fp)?;
        forward_field(p, score, t, &um, &mut fm)?;
        acc += (0..m).map(|i| e[i] * (fp[i] - fm[i])).sum::<f64>() / (2.0 * h);
    }
    Ok(acc / probes.len() as f64)
}

/// Hutchinson estimate `εᵀ A ε` for a dense `m × m` matrix with one probe.
pub fn hutchinson_linear<R: rand::Rng + ?Sized>(a: &[f64], m: usize, dist: ProbeDist, rng: &mut R) -> f64 {
    let e: Vec<f64> = (0..m)
        .map(|_| match dist {
            ProbeDist::Rademacher => rng::rademacher(rng),
            ProbeDist::Gaussian => normal(rng),
        })
        .collect();
    (0..m)
        .map(|i| e[i] * (0..m).map(|j| a[i * m + j] * e[j]).sum::<f64>())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NllBound {
    pub nll_bound_nats: f64,
    pub nll_bound_bpd: f64,
    /// Mean of `log p(x₀, v₀)` over the velocity draws.
    pub logp_joint: MeanSe,
    pub nfe: usize,
    pub n_v: usize,
}

/// `-E_v[log p(x₀, v₀)] - H(p(v₀))`, an upper bound on `-log p(x₀)`.
pub fn nll_bound<S: VelocityScore + ?Sized>(
    p: &CldParams,
    score: &S,
    x0: &[f64],
    n_v: usize,
    cfg: &OdeConfig,
    seed: u64,
    stream: u64,
) -> Result<NllBound> {
    if n_v == 0 {
        return Err(CldError::InvalidArgument("n_v must be at least 1".into()));
    }
    let d = x0.len();
    let sd = p.v0_var().sqrt();
    let results: Vec<Result<LikelihoodResult>> = (0..n_v)
        .into_par_iter()
        .map(|j| {
            let key = (stream << 16) | j as u64;
            let mut r = stream_rng(seed, rng::tag::DATA, key);
            let v0: Vec<f64> = (0..d).map(|_| sd * normal(&mut r)).collect();
            log_likelihood_joint(p, score, x0, &v0, cfg, seed, key)
        })
        .collect();
    let mut lp = Vec::with_capacity(n_v);
    let mut nfe = 0;
    for res in results {
        let res = res?;
        lp.push(res.logp_joint);
        nfe += res.nfe;
    }
    let logp = MeanSe::from_values(&lp);
    let nats = -logp.mean - velocity_entropy(p, d);
    Ok(NllBound {
        nll_bound_nats: nats,
        nll_bound_bpd: nats / (d as f64 * std::f64::consts::LN_2),
        logp_joint: logp,
        nfe,
        n_v,
    })
}
