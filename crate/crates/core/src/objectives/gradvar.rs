use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::losses::{perturb, KernelKind};
use crate::error::Result;
use crate::kernels::CldParams;
use crate::mixtures::GaussianMixture;
use crate::rng::{self, stream_rng};
use crate::samplers::VelocityScore;
use crate::stats::MeanSe;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradVarPoint {
    pub t: f64,
    pub trace_hsm: f64,
    pub trace_dsm: f64,
}

fn trace_cov<S: VelocityScore + ?Sized>(
    model: &S,
    p: &CldParams,
    mix: &GaussianMixture,
    t: f64,
    kind: KernelKind,
    n_mc: usize,
    seed: u64,
    ti: usize,
) -> Result<f64> {
    let d = mix.d;
    let tag = match kind {
        KernelKind::Hsm => 0u64,
        KernelKind::Dsm => 1u64,
    };
    let rows: Vec<Result<Vec<f64>>> = (0..n_mc)
        .into_par_iter()
        .map(|i| {
            let key = (tag << 40) | ((ti as u64) << 24) | i as u64;
            let mut r = stream_rng(seed, rng::tag::STUDY, key);
            let pt = perturb(p, mix, t, kind, &mut r)?;
            let mut s = vec![0.0; d];
            model.score_v(&pt.x, &pt.v, t, &mut s)?;
            Ok(s.iter().zip(&pt.eps_v).map(|(s, e)| s + pt.ell * e).collect())
        })
        .collect();
    let rows: Vec<Vec<f64>> = rows.into_iter().collect::<Result<_>>()?;
    Ok((0..d)
        .map(|j| {
            let col: Vec<f64> = rows.iter().map(|r| r[j]).collect();
            MeanSe::from_values(&col).variance()
        })
        .sum())
}

/// `Tr Cov` of `s_θ(u_t, t) - ∇_v log p_t(u_t | ·)` under both kernels.
pub fn grad_variance_study<S: VelocityScore + ?Sized>(
    model: &S,
    mix: &GaussianMixture,
    p: &CldParams,
    t_grid: &[f64],
    n_mc: usize,
    seed: u64,
) -> Result<Vec<GradVarPoint>> {
    t_grid
        .iter()
        .enumerate()
        .map(|(ti, &t)| {
            Ok(GradVarPoint {
                t,
                trace_hsm: trace_cov(model, p, mix, t, KernelKind::Hsm, n_mc, seed, ti)?,
                trace_dsm: trace_cov(model, p, mix, t, KernelKind::Dsm, n_mc, seed, ti)?,
            })
        })
        .collect()
}
