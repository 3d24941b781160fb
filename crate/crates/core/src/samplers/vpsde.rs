use rayon::prelude::*;

use super::schedule::TimeSchedule;
use super::score::DataScore;
use crate::error::Result;
use crate::mixtures::VpsdeParams;
use crate::rng::{self, stream_rng};

/// `n × d` standard-normal prior draws.
pub fn vpsde_prior(n: usize, d: usize, seed: u64) -> Vec<f64> {
    let mut x = vec![0.0; n * d];
    x.par_chunks_mut(d).enumerate().for_each(|(i, row)| {
        let mut r = stream_rng(seed, rng::tag::PRIOR, i as u64);
        rng::fill_normal(&mut r, row);
    });
    x
}

/// Euler–Maruyama on `dx̄ = [½β x̄ + β s] dt + √β dw`, then one noise-free
/// denoising step of length `ε`.
pub fn vpsde_em_run<S: DataScore + ?Sized>(
    vp: &VpsdeParams,
    score: &S,
    mut x: Vec<f64>,
    d: usize,
    sched: &TimeSchedule,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = x.len() / d;
    let mut rngs: Vec<_> = (0..n)
        .map(|i| stream_rng(seed, rng::tag::SAMPLER, i as u64))
        .collect();
    let mut s = vec![0.0; x.len()];
    let mut t = sched.t_final;
    for &dt in &sched.steps {
        let b = vp.beta(t);
        score.score_x(&x, t, &mut s)?;
        let sd = (b * dt).sqrt();
        x.par_chunks_mut(d)
            .zip(s.par_chunks(d))
            .zip(rngs.par_iter_mut())
            .for_each(|((xr, sr), r)| {
                for (xi, si) in xr.iter_mut().zip(sr) {
                    *xi += (0.5 * b * *xi + b * si) * dt + sd * rng::normal(r);
                }
            });
        t -= dt;
    }
    let eps = sched.eps_cutoff;
    if eps > 0.0 {
        let b = vp.beta(eps);
        score.score_x(&x, eps, &mut s)?;
        x.par_iter_mut()
            .zip(s.par_iter())
            .for_each(|(xi, si)| *xi += eps * (0.5 * b * *xi + b * si));
    }
    Ok(x)
}

/// Deterministic DDIM update from `t` to `t_next < t`.
pub fn ddim_step<S: DataScore + ?Sized>(
    vp: &VpsdeParams,
    score: &S,
    x: &mut [f64],
    t: f64,
    t_next: f64,
) -> Result<()> {
    let mut s = vec![0.0; x.len()];
    score.score_x(x, t, &mut s)?;
    let (a, a1) = (vp.alpha(t), vp.alpha(t_next));
    let (s2, s1) = (vp.sigma2(t), vp.sigma2(t_next).sqrt());
    let sg = s2.sqrt();
    x.par_iter_mut().zip(s.par_iter()).for_each(|(xi, si)| {
        *xi = a1 / a * (*xi + s2 * si) - s1 * sg * si;
    });
    Ok(())
}

/// DDIM over the schedule's time grid, ending at `ε`.
pub fn ddim_run<S: DataScore + ?Sized>(
    vp: &VpsdeParams,
    score: &S,
    mut x: Vec<f64>,
    sched: &TimeSchedule,
) -> Result<Vec<f64>> {
    let mut t = sched.t_final;
    for &dt in &sched.steps {
        let t_next = (t - dt).max(0.0);
        ddim_step(vp, score, &mut x, t, t_next)?;
        t = t_next;
    }
    Ok(x)
}
