use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mlp::{Mlp, MlpCache};
use super::model::MixedScoreModel;
use crate::error::{CldError, Result};
use crate::mixtures::{self, GaussianMixture};
use crate::objectives::{perturb, KernelKind, Weighting};
use crate::rng::{self, stream_rng};
use crate::stats::MeanSe;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_iters: usize,
    pub batch: usize,
    pub lr: f64,
    pub warmup: usize,
    pub ema_rate: f64,
    pub objective: KernelKind,
    pub weighting: Weighting,
    /// Training times are uniform on `[t_cut, T]`.
    pub t_cut: f64,
    pub seed: u64,
    /// Samples with `t` below this feed the small-time gradient statistic.
    pub small_t: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_iters: 200_000,
            batch: 512,
            lr: 2e-4,
            warmup: 10_000,
            ema_rate: 0.9999,
            objective: KernelKind::Hsm,
            weighting: Weighting::Reweighted,
            t_cut: 1e-5,
            seed: 0,
            small_t: 0.01,
        }
    }
}

/// Adam with linear learning-rate warmup.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup: usize,
    pub step: usize,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64, warmup: usize) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup,
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn current_lr(&self) -> f64 {
        if self.warmup == 0 {
            self.lr
        } else {
            self.lr * ((self.step + 1) as f64 / self.warmup as f64).min(1.0)
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        let lr = self.current_lr();
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean batch loss per iteration.
    pub losses: Vec<f64>,
    /// Norm of the batch gradient per iteration.
    pub grad_norms: Vec<f64>,
    /// Largest per-sample `‖∂L/∂α'‖` among samples with `t < small_t`.
    pub max_small_t_upstream: f64,
    /// Non-averaged parameters at the end of training.
    pub raw_params: Vec<f64>,
}

const CHUNK: usize = 32;

struct ChunkOut {
    grad: Vec<f64>,
    loss: f64,
    max_up: f64,
}

fn batch_gradient(model: &MixedScoreModel, mix: &GaussianMixture, cfg: &TrainConfig, iter: usize) -> Result<ChunkOut> {
    let np = model.net.n_params();
    let p = &model.p;
    let d = mix.d;
    let span = p.t_final - cfg.t_cut;
    let chunks: Vec<Result<ChunkOut>> = (0..cfg.batch.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut out = ChunkOut {
                grad: vec![0.0; np],
                loss: 0.0,
                max_up: 0.0,
            };
            let mut cache = MlpCache::default();
            for i in c * CHUNK..((c + 1) * CHUNK).min(cfg.batch) {
                let key = (iter as u64) * cfg.batch as u64 + i as u64;
                let mut r = stream_rng(cfg.seed, rng::tag::TRAIN, key);
                let t = cfg.t_cut + span * rng::uniform(&mut r);
                let pt = perturb(p, mix, t, cfg.objective, &mut r)?;
                let sc = model.scales(t)?;
                let a = model.alpha_cached(&pt.x, &pt.v, t, &sc, &mut cache);
                let lambda = cfg.weighting.lambda(p, pt.ell);
                let mut up = vec![0.0; d];
                let mut up_norm = 0.0;
                for j in 0..d {
                    let resid = -sc.ell * a[j] + pt.ell * pt.eps_v[j];
                    out.loss += lambda * resid * resid;
                    up[j] = -2.0 * lambda * resid * sc.ell;
                    up_norm += up[j] * up[j];
                }
                if t < cfg.small_t {
                    out.max_up = out.max_up.max(up_norm.sqrt());
                }
                model.net.backward(&cache, &up, Some(&mut out.grad));
            }
            Ok(out)
        })
        .collect();
    let mut total = ChunkOut {
        grad: vec![0.0; np],
        loss: 0.0,
        max_up: 0.0,
    };
    for c in chunks {
        let c = c?;
        for (g, h) in total.grad.iter_mut().zip(&c.grad) {
            *g += h;
        }
        total.loss += c.loss;
        total.max_up = total.max_up.max(c.max_up);
    }
    let inv = 1.0 / cfg.batch as f64;
    total.grad.iter_mut().for_each(|g| *g *= inv);
    total.loss *= inv;
    Ok(total)
}

/// Fit the network residual with fresh data every iteration. The returned
/// model carries the exponential moving average of the parameters.
pub fn train(
    mut model: MixedScoreModel,
    mix: &GaussianMixture,
    cfg: &TrainConfig,
) -> Result<(MixedScoreModel, TrainReport)> {
    if cfg.batch == 0 || !(cfg.t_cut < model.p.t_final) {
        return Err(CldError::InvalidArgument("bad training configuration".into()));
    }
    let np = model.net.n_params();
    let mut opt = Adam::new(np, cfg.lr, cfg.warmup);
    let mut ema = model.net.params.clone();
    let mut report = TrainReport {
        losses: Vec::with_capacity(cfg.n_iters),
        grad_norms: Vec::with_capacity(cfg.n_iters),
        max_small_t_upstream: 0.0,
        raw_params: Vec::new(),
    };
    for iter in 0..cfg.n_iters {
        let out = batch_gradient(&model, mix, cfg, iter)?;
        let gn = out.grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !out.loss.is_finite() || !gn.is_finite() {
            return Err(CldError::Diverged {
                step: iter,
                msg: format!("loss = {}, grad norm = {gn}", out.loss),
            });
        }
        opt.update(&mut model.net.params, &out.grad);
        for (e, p) in ema.iter_mut().zip(&model.net.params) {
            *e = cfg.ema_rate * *e + (1.0 - cfg.ema_rate) * p;
        }
        report.losses.push(out.loss);
        report.grad_norms.push(gn);
        report.max_small_t_upstream = report.max_small_t_upstream.max(out.max_up);
    }
    report.raw_params = std::mem::replace(&mut model.net.params, ema);
    Ok((model, report))
}

/// `E‖∂α'/∂u‖_F²` over exact diffused samples at each time.
pub fn jacobian_frobenius(
    model: &MixedScoreModel,
    mix: &GaussianMixture,
    t_grid: &[f64],
    n_mc: usize,
    seed: u64,
) -> Result<Vec<(f64, MeanSe)>> {
    let d = mix.d;
    let net: &Mlp = &model.net;
    t_grid
        .iter()
        .enumerate()
        .map(|(ti, &t)| {
            let dm = mixtures::diffuse(mix, &model.p, t)?;
            let vals: Vec<f64> = (0..n_mc)
                .into_par_iter()
                .map(|i| {
                    let mut r = stream_rng(seed, rng::tag::STUDY, ((ti as u64) << 32) | i as u64);
                    let mut x = vec![0.0; d];
                    let mut v = vec![0.0; d];
                    dm.sample_into(&mut r, &mut x, &mut v);
                    let jac = net.input_jacobian(&model.input(&x, &v, t));
                    jac.iter()
                        .map(|row| row[..2 * d].iter().map(|a| a * a).sum::<f64>())
                        .sum()
                })
                .collect();
            Ok((t, MeanSe::from_values(&vals)))
        })
        .collect()
}
