use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CldError, Result};
use crate::kernels::{self, CldParams};
use crate::mixtures::GaussianMixture;
use crate::rng::{self, normal, stream_rng};
use crate::samplers::VelocityScore;

/// Which perturbation kernel the objective conditions on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    /// Conditions on `x0`; `v0 ~ N(0, γM)` is marginalized.
    Hsm,
    /// Conditions on `(x0, v0)` with `v0` drawn explicitly.
    Dsm,
}

impl std::str::FromStr for KernelKind {
    type Err = CldError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hsm" => Ok(Self::Hsm),
            "dsm" => Ok(Self::Dsm),
            other => Err(CldError::InvalidArgument(format!("unknown objective {other}"))),
        }
    }
}

/// Loss weighting `λ(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    /// `λ = Γβ`.
    Ml,
    /// `λ = ℓ_t⁻²`, which makes the noise-prediction prefactor 1.
    Reweighted,
    /// Fixed constant.
    Constant(f64),
}

impl Weighting {
    pub fn lambda(&self, p: &CldParams, ell: f64) -> f64 {
        match *self {
            Weighting::Ml => p.gamma_fric * p.beta,
            Weighting::Reweighted => 1.0 / (ell * ell),
            Weighting::Constant(c) => c,
        }
    }
}

/// One reparameterized draw `u_t = μ_t + L_t ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbed {
    pub t: f64,
    pub x0: Vec<f64>,
    pub v0: Vec<f64>,
    /// Kernel mean `μ_t`.
    pub mx: Vec<f64>,
    pub mv: Vec<f64>,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub eps_x: Vec<f64>,
    pub eps_v: Vec<f64>,
    /// `ℓ_t` of the kernel used; the conditional velocity score is `-ℓ ε_v`.
    pub ell: f64,
}

/// Draw data, (for DSM) an initial velocity and kernel noise at time `t`.
pub fn perturb<R: Rng + ?Sized>(
    p: &CldParams,
    mix: &GaussianMixture,
    t: f64,
    kind: KernelKind,
    rng: &mut R,
) -> Result<Perturbed> {
    let d = mix.d;
    let k = match kind {
        KernelKind::Hsm => kernels::hsm_kernel(p, t)?,
        KernelKind::Dsm => kernels::dsm_kernel(p, t)?,
    };
    let l = kernels::cholesky2(&k, p.eps_num)?;
    let mut x0 = vec![0.0; d];
    mix.sample_into(rng, &mut x0);
    let v0: Vec<f64> = match kind {
        KernelKind::Hsm => vec![0.0; d],
        KernelKind::Dsm => {
            let sd = p.v0_var().sqrt();
            (0..d).map(|_| sd * normal(rng)).collect()
        }
    };
    let mut out = Perturbed {
        t,
        mx: vec![0.0; d],
        mv: vec![0.0; d],
        x: vec![0.0; d],
        v: vec![0.0; d],
        eps_x: vec![0.0; d],
        eps_v: vec![0.0; d],
        ell: 1.0 / l.lvv,
        x0,
        v0,
    };
    for i in 0..d {
        let (mx, mv) = k.mean(out.x0[i], out.v0[i]);
        let (e1, e2) = (normal(rng), normal(rng));
        let (nx, nv) = l.apply(e1, e2);
        out.mx[i] = mx;
        out.mv[i] = mv;
        out.x[i] = mx + nx;
        out.v[i] = mv + nv;
        out.eps_x[i] = e1;
        out.eps_v[i] = e2;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSample {
    pub t: f64,
    pub loss: f64,
    pub kind: KernelKind,
    pub ell: f64,
    pub lambda: f64,
}

/// `λ ℓ² ‖ε_v - α‖²` with `α = -s/ℓ`, i.e. `λ ‖s + ℓ ε_v‖²`.
pub fn per_sample_loss(score: &[f64], eps_v: &[f64], ell: f64, lambda: f64) -> f64 {
    lambda
        * score
            .iter()
            .zip(eps_v)
            .map(|(s, e)| (s + ell * e).powi(2))
            .sum::<f64>()
}

fn loss_batch<S: VelocityScore + ?Sized>(
    model: &S,
    p: &CldParams,
    mix: &GaussianMixture,
    t_batch: &[f64],
    w: Weighting,
    kind: KernelKind,
    seed: u64,
) -> Result<Vec<LossSample>> {
    t_batch
        .par_iter()
        .enumerate()
        .map(|(i, &t)| {
            let mut r = stream_rng(seed, rng::tag::DATA, i as u64);
            let pt = perturb(p, mix, t, kind, &mut r)?;
            let mut s = vec![0.0; mix.d];
            model.score_v(&pt.x, &pt.v, t, &mut s)?;
            let lambda = w.lambda(p, pt.ell);
            Ok(LossSample {
                t,
                loss: per_sample_loss(&s, &pt.eps_v, pt.ell, lambda),
                kind,
                ell: pt.ell,
                lambda,
            })
        })
        .collect()
}

/// Hybrid score matching losses, one sample per entry of `t_batch`.
pub fn hsm_loss<S: VelocityScore + ?Sized>(
    model: &S,
    p: &CldParams,
    mix: &GaussianMixture,
    t_batch: &[f64],
    w: Weighting,
    seed: u64,
) -> Result<Vec<LossSample>> {
    loss_batch(model, p, mix, t_batch, w, KernelKind::Hsm, seed)
}

/// Denoising score matching losses conditioned on `(x0, v0)`.
pub fn dsm_loss<S: VelocityScore + ?Sized>(
    model: &S,
    p: &CldParams,
    mix: &GaussianMixture,
    t_batch: &[f64],
    w: Weighting,
    seed: u64,
) -> Result<Vec<LossSample>> {
    loss_batch(model, p, mix, t_batch, w, KernelKind::Dsm, seed)
}

/// `E[L_HSM] - E[L_DSM] = d (ℓ_HSM² - ℓ_DSM²)` for unit weighting and any
/// fixed score model. Negative, since conditioning on `v0` sharpens the kernel.
pub fn hsm_dsm_offset(p: &CldParams, t: f64, d: usize) -> Result<f64> {
    let lh = kernels::ell(&kernels::hsm_kernel(p, t)?, p.eps_num)?;
    let ld = kernels::ell(&kernels::dsm_kernel(p, t)?, p.eps_num)?;
    Ok(d as f64 * (lh * lh - ld * ld))
}
