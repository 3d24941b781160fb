use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::schedule::TimeSchedule;
use super::score::{StateBatch, VelocityScore};
use crate::error::{CldError, Result};
use crate::kernels::{self, CholFactor, CldParams};
use crate::rng::{self, normal, stream_rng, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CldSampler {
    Em,
    Sscs,
}

impl std::str::FromStr for CldSampler {
    type Err = CldError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "em" => Ok(Self::Em),
            "sscs" => Ok(Self::Sscs),
            other => Err(CldError::InvalidArgument(format!("unknown sampler {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerOptions {
    pub seed: u64,
    /// Also apply the velocity part of the final denoising step.
    pub denoise_velocity: bool,
    /// Skip the final denoising step altogether.
    pub skip_denoise: bool,
}

impl SamplerOptions {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            denoise_velocity: false,
            skip_denoise: false,
        }
    }
}

/// `n` draws from `p_EQ = N(0, I) × N(0, M I)` at time `T`.
pub fn prior_batch(p: &CldParams, n: usize, d: usize, seed: u64) -> StateBatch {
    let mut x = vec![0.0; n * d];
    let mut v = vec![0.0; n * d];
    let sm = p.mass.sqrt();
    x.par_chunks_mut(d)
        .zip(v.par_chunks_mut(d))
        .enumerate()
        .for_each(|(i, (xr, vr))| {
            let mut r = stream_rng(seed, rng::tag::PRIOR, i as u64);
            for j in 0..d {
                xr[j] = normal(&mut r);
                vr[j] = sm * normal(&mut r);
            }
        });
    StateBatch::new(n, d, x, v, p.t_final)
}

fn row_rngs(seed: u64, n: usize) -> Vec<StreamRng> {
    (0..n)
        .map(|i| stream_rng(seed, rng::tag::SAMPLER, i as u64))
        .collect()
}

fn draw(rngs: &mut [StreamRng], d: usize, out: &mut [f64]) {
    out.par_chunks_mut(d)
        .zip(rngs.par_iter_mut())
        .for_each(|(o, r)| rng::fill_normal(r, o));
}

/// One Euler–Maruyama step of the reverse SDE with caller-supplied noise.
///
/// Drift and score are taken at the pre-step state and time.
pub fn em_step_cld<S: VelocityScore + ?Sized>(
    p: &CldParams,
    score: &S,
    batch: &mut StateBatch,
    dt: f64,
    noise: &[f64],
) -> Result<()> {
    let mut s = vec![0.0; batch.x.len()];
    score.score_v(&batch.x, &batch.v, batch.t, &mut s)?;
    let (b, g, mi) = (p.beta, p.gamma_fric, p.inv_mass());
    let sd = (2.0 * g * b * dt).sqrt();
    batch
        .x
        .par_iter_mut()
        .zip(batch.v.par_iter_mut())
        .zip(s.par_iter().zip(noise.par_iter()))
        .for_each(|((x, v), (s, z))| {
            let (x0, v0) = (*x, *v);
            *x = x0 - b * mi * v0 * dt;
            *v = v0 + (b * x0 + b * g * mi * v0 + 2.0 * g * b * s) * dt + sd * z;
        });
    batch.t -= dt;
    Ok(())
}

fn half_factor(p: &CldParams, dt_half: f64) -> Result<(kernels::PerDimKernel, CholFactor)> {
    let k = kernels::sscs_half_moments(p, dt_half);
    let l = kernels::cholesky2(&k, 0.0).or_else(|_| kernels::cholesky2(&k, p.eps_num))?;
    Ok((k, l))
}

fn apply_half(k: &kernels::PerDimKernel, l: &CholFactor, batch: &mut StateBatch, e1: &[f64], e2: &[f64]) {
    batch
        .x
        .par_iter_mut()
        .zip(batch.v.par_iter_mut())
        .zip(e1.par_iter().zip(e2.par_iter()))
        .for_each(|((x, v), (a, b))| {
            let (mx, mv) = k.mean(*x, *v);
            let (nx, nv) = l.apply(*a, *b);
            *x = mx + nx;
            *v = mv + nv;
        });
}

/// One SSCS step: exact half-step of the linear part, Euler step of the
/// score part, exact half-step.
pub fn sscs_step<S: VelocityScore + ?Sized>(
    p: &CldParams,
    score: &S,
    batch: &mut StateBatch,
    dt: f64,
    rngs: &mut [StreamRng],
) -> Result<()> {
    let (k, l) = half_factor(p, 0.5 * dt)?;
    let len = batch.x.len();
    let d = batch.d;
    let mut e1 = vec![0.0; len];
    let mut e2 = vec![0.0; len];
    draw(rngs, d, &mut e1);
    draw(rngs, d, &mut e2);
    apply_half(&k, &l, batch, &e1, &e2);

    let mut s = vec![0.0; len];
    score.score_v(&batch.x, &batch.v, batch.t, &mut s)?;
    let c = dt * 2.0 * p.beta * p.gamma_fric;
    let mi = p.inv_mass();
    batch
        .v
        .par_iter_mut()
        .zip(s.par_iter())
        .for_each(|(v, s)| *v += c * (s + mi * *v));

    draw(rngs, d, &mut e1);
    draw(rngs, d, &mut e2);
    apply_half(&k, &l, batch, &e1, &e2);
    batch.t -= dt;
    Ok(())
}

/// `x0 = x_ε - ε β M⁻¹ v_ε`; the data update needs no score.
pub fn denoise(p: &CldParams, batch: &mut StateBatch, eps: f64) {
    let c = eps * p.beta * p.inv_mass();
    batch
        .x
        .par_iter_mut()
        .zip(batch.v.par_iter())
        .for_each(|(x, v)| *x -= c * v);
    batch.t -= eps;
}

/// Full denoising step including the velocity update (one score call).
pub fn denoise_velocity<S: VelocityScore + ?Sized>(
    p: &CldParams,
    score: &S,
    batch: &mut StateBatch,
    eps: f64,
) -> Result<()> {
    let mut s = vec![0.0; batch.x.len()];
    score.score_v(&batch.x, &batch.v, batch.t.max(eps), &mut s)?;
    let (b, g, mi) = (p.beta, p.gamma_fric, p.inv_mass());
    batch
        .x
        .par_iter_mut()
        .zip(batch.v.par_iter_mut())
        .zip(s.par_iter())
        .for_each(|((x, v), s)| {
            let (x0, v0) = (*x, *v);
            *x = x0 - eps * b * mi * v0;
            *v = v0 + eps * (b * x0 + g * b * mi * v0 + 2.0 * g * b * s);
        });
    batch.t -= eps;
    Ok(())
}

fn finish<S: VelocityScore + ?Sized>(
    p: &CldParams,
    score: &S,
    batch: &mut StateBatch,
    sched: &TimeSchedule,
    opts: &SamplerOptions,
) -> Result<()> {
    if opts.skip_denoise {
        return Ok(());
    }
    if opts.denoise_velocity {
        denoise_velocity(p, score, batch, sched.eps_cutoff)
    } else {
        denoise(p, batch, sched.eps_cutoff);
        Ok(())
    }
}

/// Euler–Maruyama over a schedule, followed by denoising.
pub fn em_run_cld<S: VelocityScore + ?Sized>(
    p: &CldParams,
    score: &S,
    mut batch: StateBatch,
    sched: &TimeSchedule,
    opts: &SamplerOptions,
) -> Result<StateBatch> {
    let mut rngs = row_rngs(opts.seed, batch.n);
    let mut noise = vec![0.0; batch.x.len()];
    for &dt in &sched.steps {
        draw(&mut rngs, batch.d, &mut noise);
        em_step_cld(p, score, &mut batch, dt, &noise)?;
    }
    batch.t = sched.eps_cutoff;
    finish(p, score, &mut batch, sched, opts)?;
    Ok(batch)
}

/// Symmetric splitting sampler over a schedule, followed by denoising.
pub fn sscs_run<S: VelocityScore + ?Sized>(
    p: &CldParams,
    score: &S,
    mut batch: StateBatch,
    sched: &TimeSchedule,
    opts: &SamplerOptions,
) -> Result<StateBatch> {
    let mut rngs = row_rngs(opts.seed, batch.n);
    for &dt in &sched.steps {
        sscs_step(p, score, &mut batch, dt, &mut rngs)?;
    }
    batch.t = sched.eps_cutoff;
    finish(p, score, &mut batch, sched, opts)?;
    Ok(batch)
}
