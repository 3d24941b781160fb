use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::losses::{perturb, KernelKind};
use crate::error::Result;
use crate::kernels::CldParams;
use crate::mixtures::GaussianMixture;
use crate::rng::{self, stream_rng};
use crate::samplers::VelocityScore;
use crate::scorenet::{MixedScoreModel, MlpCache};
use crate::stats::{paired_diff, MeanSe};

/// `C_FID = -2 εᵀ α(μ_t) + ‖ε‖²`, with `E[C_FID] = d`.
pub fn c_fid(eps_v: &[f64], alpha_mu: &[f64]) -> f64 {
    eps_v
        .iter()
        .zip(alpha_mu)
        .map(|(e, a)| e * e - 2.0 * e * a)
        .sum()
}

/// `C_ML = ℓ² C_FID`, with `E[C_ML] = ℓ² d`.
pub fn c_ml(eps_v: &[f64], alpha_mu: &[f64], ell: f64) -> f64 {
    ell * ell * c_fid(eps_v, alpha_mu)
}

/// Plain loss, its control-variate form and the control itself.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvSample {
    pub t: f64,
    pub plain: f64,
    pub cv: f64,
    pub control: f64,
    pub ell: f64,
}

fn cv_batch<S: VelocityScore + ?Sized>(
    model: &S,
    p: &CldParams,
    mix: &GaussianMixture,
    t_batch: &[f64],
    kind: KernelKind,
    seed: u64,
    ml: bool,
) -> Result<Vec<CvSample>> {
    let d = mix.d;
    t_batch
        .par_iter()
        .enumerate()
        .map(|(i, &t)| {
            let mut r = stream_rng(seed, rng::tag::DATA, i as u64);
            let pt = perturb(p, mix, t, kind, &mut r)?;
            let mut su = vec![0.0; d];
            let mut sm = vec![0.0; d];
            model.score_v(&pt.x, &pt.v, t, &mut su)?;
            model.score_v(&pt.mx, &pt.mv, t, &mut sm)?;
            let au: Vec<f64> = su.iter().map(|s| -s / pt.ell).collect();
            let am: Vec<f64> = sm.iter().map(|s| -s / pt.ell).collect();
            let e = &pt.eps_v;
            let plain: f64 = e.iter().zip(&au).map(|(e, a)| (e - a).powi(2)).sum();
            let cv: f64 = (0..d)
                .map(|j| au[j] * au[j] - 2.0 * e[j] * (au[j] - am[j]))
                .sum();
            let control = c_fid(e, &am);
            let w = if ml { pt.ell * pt.ell } else { 1.0 };
            Ok(CvSample {
                t,
                plain: w * plain,
                cv: w * cv,
                control: w * control,
                ell: pt.ell,
            })
        })
        .collect()
}

/// `L_FID = ‖ε - α(u)‖²` and `L^C_FID = ‖α(u)‖² - 2εᵀ[α(u) - α(μ_t)]`.
pub fn cv_loss_fid<S: VelocityScore + ?Sized>(
    model: &S,
    p: &CldParams,
    mix: &GaussianMixture,
    t_batch: &[f64],
    kind: KernelKind,
    seed: u64,
) -> Result<Vec<CvSample>> {
    cv_batch(model, p, mix, t_batch, kind, seed, false)
}

/// The maximum-likelihood counterparts, scaled by `ℓ_t²`.
pub fn cv_loss_ml<S: VelocityScore + ?Sized>(
    model: &S,
    p: &CldParams,
    mix: &GaussianMixture,
    t_batch: &[f64],
    kind: KernelKind,
    seed: u64,
) -> Result<Vec<CvSample>> {
    cv_batch(model, p, mix, t_batch, kind, seed, true)
}

/// Per-parameter gradient statistics of the first network layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvGradientStudy {
    pub t: f64,
    pub n: usize,
    /// Sum over parameters of the per-sample gradient variance.
    pub trace_plain: f64,
    pub trace_cv: f64,
    /// Largest |mean difference| / SE across parameters.
    pub max_z_mean_diff: f64,
}

impl CvGradientStudy {
    pub fn reduction(&self) -> f64 {
        1.0 - self.trace_cv / self.trace_plain
    }
}

/// Compare first-layer gradients of the plain and control-variate FID
/// losses (HSM kernel) at fixed `t`.
pub fn cv_gradient_study(
    model: &MixedScoreModel,
    mix: &GaussianMixture,
    t: f64,
    n: usize,
    seed: u64,
) -> Result<CvGradientStudy> {
    let p = &model.p;
    let sc = model.scales(t)?;
    let (w0, b0) = model.net.layer_offsets(0);
    let n_first = b0 + model.net.widths[1] - w0;
    let np = model.net.n_params();
    let rows: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = stream_rng(seed, rng::tag::DATA, i as u64);
            let pt = perturb(p, mix, t, KernelKind::Hsm, &mut r)?;
            let mut cu = MlpCache::default();
            let mut cm = MlpCache::default();
            let au = model.alpha_cached(&pt.x, &pt.v, t, &sc, &mut cu);
            model.alpha_cached(&pt.mx, &pt.mv, t, &sc, &mut cm);
            let e = &pt.eps_v;
            let up_plain: Vec<f64> = e.iter().zip(&au).map(|(e, a)| -2.0 * (e - a)).collect();
            let up_u: Vec<f64> = e.iter().zip(&au).map(|(e, a)| 2.0 * (a - e)).collect();
            let up_mu: Vec<f64> = e.iter().map(|e| 2.0 * e).collect();
            let mut gp = vec![0.0; np];
            let mut gc = vec![0.0; np];
            model.net.backward(&cu, &up_plain, Some(&mut gp));
            model.net.backward(&cu, &up_u, Some(&mut gc));
            model.net.backward(&cm, &up_mu, Some(&mut gc));
            Ok((gp[w0..w0 + n_first].to_vec(), gc[w0..w0 + n_first].to_vec()))
        })
        .collect();
    let mut gp = Vec::with_capacity(n);
    let mut gc = Vec::with_capacity(n);
    for row in rows {
        let (a, b) = row?;
        gp.push(a);
        gc.push(b);
    }
    let mut trace_plain = 0.0;
    let mut trace_cv = 0.0;
    let mut max_z = 0.0f64;
    for j in 0..n_first {
        let a: Vec<f64> = gp.iter().map(|g| g[j]).collect();
        let b: Vec<f64> = gc.iter().map(|g| g[j]).collect();
        trace_plain += MeanSe::from_values(&a).variance();
        trace_cv += MeanSe::from_values(&b).variance();
        let diff = paired_diff(&a, &b);
        if diff.se > 0.0 {
            max_z = max_z.max(diff.mean.abs() / diff.se);
        }
    }
    Ok(CvGradientStudy {
        t,
        n,
        trace_plain,
        trace_cv,
        max_z_mean_diff: max_z,
    })
}
