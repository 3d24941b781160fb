//! Experiment bodies. Each returns a result table, summary metrics and the
//! list of metrics that could not be computed.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cld_core::experiments::{analytical_table, damping_study, sample_with_analytic_score, DampingConfig, TableConfig, TableSampler};
use cld_core::mixtures::{xi_experiment, xi_grid};
use cld_core::objectives::{grad_variance_study, ImportanceModel, KernelKind, Weighting};
use cld_core::probflow::{nll_bound, ode_sample, DivergenceMode, OdeConfig};
use cld_core::samplers::{em_run_cld, prior_batch, sscs_run, SamplerOptions};
use cld_core::scorenet::{jacobian_frobenius, load_checkpoint, save_checkpoint, train, MixedScoreModel, Mlp, ScoreMode, TrainConfig};
use cld_core::{make_schedule, nine_gaussians, CldParams, GaussianMixture, MixtureScore, ScheduleKind, VelocityScore, VpsdeParams};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::output::Table;

pub struct Ctx {
    pub seed: u64,
    pub params: CldParams,
}

pub struct Outcome {
    pub table: Table,
    pub metrics: Value,
    pub failures: Vec<String>,
}

impl Outcome {
    fn ok(table: Table, metrics: Value) -> Self {
        Self { table, metrics, failures: Vec::new() }
    }
}

fn num(x: f64) -> Value {
    // JSON has no NaN or infinity; CSV cells show them as empty
    serde_json::Number::from_f64(x).map_or(Value::Null, Value::Number)
}

fn load_model(path: &Path) -> Result<MixedScoreModel> {
    let (model, _) = load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(model)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TableSettings {
    pub n_samples: usize,
    pub steps: Vec<usize>,
    pub schedule: ScheduleKind,
}

impl Default for TableSettings {
    fn default() -> Self {
        let d = TableConfig::default();
        Self { n_samples: d.n_samples, steps: d.steps, schedule: d.schedule }
    }
}

pub fn analytical(ctx: &Ctx, s: &TableSettings) -> Result<Outcome> {
    let cfg = TableConfig {
        params: ctx.params,
        vp: VpsdeParams::default(),
        n_samples: s.n_samples,
        steps: s.steps.clone(),
        schedule: s.schedule,
        seed: ctx.seed,
    };
    let cells = analytical_table(&nine_gaussians(), &cfg)?;
    let mut t = Table::new(["sampler", "n_steps", "nll", "se"]);
    for c in &cells {
        t.push(vec![json!(c.sampler.label()), json!(c.n_steps), num(c.nll.mean), num(c.nll.se)]);
    }
    let failures = cells
        .iter()
        .filter(|c| !c.nll.mean.is_finite())
        .map(|c| format!("nll {} n={} not finite", c.sampler.label(), c.n_steps))
        .collect();
    Ok(Outcome { metrics: json!({ "cells": cells.len() }), table: t, failures })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct XiSettings {
    pub points: usize,
    pub n_mc: usize,
}

impl Default for XiSettings {
    fn default() -> Self {
        Self { points: 50, n_mc: 100_000 }
    }
}

/// `M = γ = 1` with the same `βΓ/M` as the default parameters.
pub fn xi_params() -> CldParams {
    CldParams::new(8.0, 2.0, 1.0)
}

pub fn xi(ctx: &Ctx, s: &XiSettings) -> Result<Outcome> {
    let pts = xi_experiment(&ctx.params, &VpsdeParams::default(), &nine_gaussians(), &xi_grid(s.points), s.n_mc, ctx.seed)?;
    let mut t = Table::new(["t", "xi_cld", "xi_vpsde", "n_mc", "seed"]);
    for p in &pts {
        t.push(vec![num(p.t), num(p.xi_cld.mean), num(p.xi_vpsde.mean), json!(s.n_mc), json!(ctx.seed)]);
    }
    let below = pts.iter().filter(|p| p.xi_cld.mean < p.xi_vpsde.mean).count();
    Ok(Outcome::ok(t, json!({ "points": pts.len(), "cld_below_vpsde": below })))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JacobianSettings {
    pub checkpoint: Option<PathBuf>,
    pub points: usize,
    pub n_mc: usize,
}

impl Default for JacobianSettings {
    fn default() -> Self {
        Self { checkpoint: None, points: 20, n_mc: 2000 }
    }
}

pub fn jacobian(ctx: &Ctx, s: &JacobianSettings) -> Result<Outcome> {
    let Some(path) = &s.checkpoint else {
        bail!("jacobian needs --checkpoint");
    };
    let model = load_model(path)?;
    let res = jacobian_frobenius(&model, &nine_gaussians(), &xi_grid(s.points), s.n_mc, ctx.seed)?;
    let mut t = Table::new(["t", "frobenius_sq", "se"]);
    for (time, m) in &res {
        t.push(vec![num(*time), num(m.mean), num(m.se)]);
    }
    let peak = res.iter().map(|(_, m)| m.mean).fold(0.0, f64::max);
    Ok(Outcome::ok(t, json!({ "max_frobenius_sq": num(peak) })))
}

pub fn damping(ctx: &Ctx, s: &DampingConfig) -> Result<Outcome> {
    let cfg = DampingConfig { seed: ctx.seed, ..s.clone() };
    let res = damping_study(&nine_gaussians(), &cfg)?;
    let mut t = Table::new(["ratio", "gamma_fric", "dt", "time_to_equilibrium", "autocorr_sign_changes", "final_distance"]);
    let mut failures = Vec::new();
    for r in &res {
        let tte = r.time_to_equilibrium.map_or(Value::Null, num);
        if r.time_to_equilibrium.is_none() {
            failures.push(format!("ratio {} did not reach equilibrium within the horizon", r.ratio));
        }
        t.push(vec![num(r.ratio), num(r.gamma_fric), num(r.dt), tte, json!(r.autocorr_sign_changes), num(r.final_distance)]);
    }
    let fastest = res
        .iter()
        .filter_map(|r| r.time_to_equilibrium.map(|x| (r.ratio, x)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(r, _)| r);
    Ok(Outcome { table: t, metrics: json!({ "fastest_ratio": fastest }), failures })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GradVarSettings {
    pub t_grid: Vec<f64>,
    pub n_mc: usize,
    /// Component width of the data; `None` keeps the standard 0.04.
    pub sigma: Option<f64>,
    /// Trained model; the exact mixture score is used otherwise.
    pub checkpoint: Option<PathBuf>,
}

impl Default for GradVarSettings {
    fn default() -> Self {
        Self {
            t_grid: vec![0.005, 0.01, 0.02, 0.03, 0.05, 0.1, 0.3, 0.5, 1.0],
            n_mc: 20_000,
            sigma: None,
            checkpoint: None,
        }
    }
}

pub fn gradvar(ctx: &Ctx, s: &GradVarSettings) -> Result<Outcome> {
    let base = nine_gaussians();
    let mix = match s.sigma {
        Some(sigma) => GaussianMixture::new(base.weights, base.means, sigma)?,
        None => base,
    };
    let pts = match &s.checkpoint {
        Some(path) => {
            let model = load_model(path)?;
            grad_variance_study(&model, &mix, &ctx.params, &s.t_grid, s.n_mc, ctx.seed)?
        }
        None => {
            let model = MixtureScore::new(mix.clone(), ctx.params);
            grad_variance_study(&model, &mix, &ctx.params, &s.t_grid, s.n_mc, ctx.seed)?
        }
    };
    let mut t = Table::new(["t", "trace_hsm", "trace_dsm", "ratio"]);
    for p in &pts {
        t.push(vec![num(p.t), num(p.trace_hsm), num(p.trace_dsm), num(p.trace_dsm / p.trace_hsm)]);
    }
    let min_ratio = pts.iter().map(|p| p.trace_dsm / p.trace_hsm).fold(f64::INFINITY, f64::min);
    Ok(Outcome::ok(t, json!({ "min_ratio": num(min_ratio) })))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSettings {
    pub checkpoint: Option<PathBuf>,
    pub hidden: usize,
    pub iters: usize,
    pub batch: usize,
    pub lr: f64,
    pub warmup: usize,
    pub ema: f64,
    pub objective: KernelKind,
    pub weighting: Weighting,
    pub t_cut: f64,
    pub init_scale: f64,
    pub mode: ScoreMode,
    /// Rows of the loss curve are averages over this many iterations.
    pub log_every: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            checkpoint: None,
            hidden: 64,
            iters: 20_000,
            batch: 256,
            lr: 1e-3,
            warmup: 1000,
            ema: 0.999,
            objective: KernelKind::Hsm,
            weighting: Weighting::Reweighted,
            t_cut: 1e-5,
            init_scale: 0.1,
            mode: ScoreMode::Mixed,
            log_every: 100,
        }
    }
}

pub fn train_model(ctx: &Ctx, s: &TrainSettings) -> Result<Outcome> {
    let Some(path) = &s.checkpoint else {
        bail!("train needs --checkpoint to store the model");
    };
    if s.log_every == 0 {
        bail!("log_every must be positive");
    }
    let mix = nine_gaussians();
    let net = Mlp::init(&MixedScoreModel::default_widths(mix.d, s.hidden), ctx.seed, s.init_scale);
    let model = MixedScoreModel::new(net, ctx.params, s.mode)?;
    let cfg = TrainConfig {
        n_iters: s.iters,
        batch: s.batch,
        lr: s.lr,
        warmup: s.warmup,
        ema_rate: s.ema,
        objective: s.objective,
        weighting: s.weighting,
        t_cut: s.t_cut,
        seed: ctx.seed,
        ..TrainConfig::default()
    };
    let (model, report) = train(model, &mix, &cfg)?;
    save_checkpoint(path, &model, s.iters)?;
    let mut t = Table::new(["iter", "loss", "grad_norm"]);
    for (i, (l, g)) in report.losses.chunks(s.log_every).zip(report.grad_norms.chunks(s.log_every)).enumerate() {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        t.push(vec![json!(((i + 1) * s.log_every).min(report.losses.len())), num(mean(l)), num(mean(g))]);
    }
    let k = s.log_every.min(report.losses.len()).max(1);
    let tail = report.losses.iter().rev().take(k).sum::<f64>() / k as f64;
    Ok(Outcome::ok(
        t,
        json!({
            "final_loss": num(tail),
            "max_small_t_upstream": num(report.max_small_t_upstream),
            "checkpoint": path,
            "n_params": model.net.n_params(),
        }),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerChoice {
    Em,
    Sscs,
    Ode,
    VpsdeEm,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleSettings {
    pub sampler: SamplerChoice,
    /// Number of sampler steps.
    pub n: usize,
    pub n_samples: usize,
    pub schedule: ScheduleKind,
    pub denoise_velocity: bool,
    pub checkpoint: Option<PathBuf>,
}

impl Default for SampleSettings {
    fn default() -> Self {
        Self {
            sampler: SamplerChoice::Sscs,
            n: 275,
            n_samples: 10_000,
            schedule: ScheduleKind::Uniform,
            denoise_velocity: false,
            checkpoint: None,
        }
    }
}

fn run_cld<S: VelocityScore>(ctx: &Ctx, s: &SampleSettings, score: &S) -> Result<(Vec<f64>, Option<usize>)> {
    let p = &ctx.params;
    let prior = prior_batch(p, s.n_samples, score.dim(), ctx.seed);
    let mut opts = SamplerOptions::new(ctx.seed);
    opts.denoise_velocity = s.denoise_velocity;
    let sched = make_schedule(s.schedule, s.n, p.t_final, p.eps_cutoff)?;
    Ok(match s.sampler {
        SamplerChoice::Em => (em_run_cld(p, score, prior, &sched, &opts)?.x, None),
        SamplerChoice::Sscs => (sscs_run(p, score, prior, &sched, &opts)?.x, None),
        SamplerChoice::Ode => {
            let (out, nfe) = ode_sample(p, score, prior, &OdeConfig::default(), 1000)?;
            (out.x, Some(nfe))
        }
        SamplerChoice::VpsdeEm => unreachable!("handled by the caller"),
    })
}

pub fn sample(ctx: &Ctx, s: &SampleSettings) -> Result<Outcome> {
    let mix = nine_gaussians();
    let (x, nfe) = match (s.sampler, &s.checkpoint) {
        (SamplerChoice::VpsdeEm, Some(_)) => bail!("the VP sampler only runs with the analytic score"),
        (SamplerChoice::VpsdeEm, None) => {
            let x = sample_with_analytic_score(&mix, &ctx.params, &VpsdeParams::default(), TableSampler::VpsdeEm, s.n, s.schedule, s.n_samples, ctx.seed)?;
            (x, None)
        }
        (_, Some(path)) => run_cld(ctx, s, &load_model(path)?)?,
        (_, None) => run_cld(ctx, s, &MixtureScore::new(mix.clone(), ctx.params))?,
    };
    let cols: Vec<String> = (0..mix.d).map(|i| format!("x{i}")).collect();
    let mut t = Table::new(cols);
    for row in x.chunks(mix.d) {
        t.push(row.iter().map(|&v| num(v)).collect());
    }
    let nll = mix.data_nll_se(&x);
    let mut failures = Vec::new();
    if !nll.mean.is_finite() {
        failures.push("data nll not finite".to_string());
    }
    Ok(Outcome {
        table: t,
        metrics: json!({ "data_nll": num(nll.mean), "data_nll_se": num(nll.se), "nfe": nfe }),
        failures,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LikelihoodSettings {
    pub n_points: usize,
    /// Velocity draws per data point.
    pub n_v: usize,
    pub rtol: f64,
    pub atol: f64,
    /// Use Hutchinson probes instead of the exact divergence.
    pub hutchinson: bool,
    pub probes: usize,
    pub checkpoint: Option<PathBuf>,
}

impl Default for LikelihoodSettings {
    fn default() -> Self {
        Self { n_points: 100, n_v: 8, rtol: 1e-5, atol: 1e-5, hutchinson: false, probes: 1, checkpoint: None }
    }
}

fn bounds<S: VelocityScore>(ctx: &Ctx, s: &LikelihoodSettings, score: &S, mix: &GaussianMixture, xs: &[f64]) -> Result<(Table, Vec<String>, f64, f64)> {
    let cfg = OdeConfig {
        rtol: s.rtol,
        atol: s.atol,
        hutchinson_probes: s.probes,
        divergence: if s.hutchinson { DivergenceMode::Hutchinson } else { DivergenceMode::Exact },
        ..OdeConfig::default()
    };
    let mut cols: Vec<String> = (0..mix.d).map(|i| format!("x{i}")).collect();
    cols.extend(["nll_bound_nats", "nll_bound_bpd", "true_nll", "nfe"].map(String::from));
    let mut t = Table::new(cols);
    let mut failures = Vec::new();
    let (mut sum_b, mut sum_true, mut n_ok) = (0.0, 0.0, 0usize);
    for (i, x) in xs.chunks(mix.d).enumerate() {
        let truth = -mix.log_density(x);
        let mut row: Vec<Value> = x.iter().map(|&v| num(v)).collect();
        match nll_bound(&ctx.params, score, x, s.n_v, &cfg, ctx.seed, i as u64) {
            Ok(b) => {
                row.extend([num(b.nll_bound_nats), num(b.nll_bound_bpd), num(truth), json!(b.nfe)]);
                sum_b += b.nll_bound_nats;
                sum_true += truth;
                n_ok += 1;
            }
            Err(e) => {
                failures.push(format!("point {i}: {e}"));
                row.extend([Value::Null, Value::Null, num(truth), Value::Null]);
            }
        }
        t.push(row);
    }
    let n = n_ok.max(1) as f64;
    Ok((t, failures, sum_b / n, sum_true / n))
}

pub fn likelihood(ctx: &Ctx, s: &LikelihoodSettings) -> Result<Outcome> {
    let mix = nine_gaussians();
    let xs = mix.sample(s.n_points, ctx.seed);
    let (t, failures, mean_bound, mean_true) = match &s.checkpoint {
        Some(path) => bounds(ctx, s, &load_model(path)?, &mix, &xs)?,
        None => bounds(ctx, s, &MixtureScore::new(mix.clone(), ctx.params), &mix, &xs)?,
    };
    Ok(Outcome {
        table: t,
        metrics: json!({ "mean_nll_bound": num(mean_bound), "mean_true_nll": num(mean_true) }),
        failures,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IsWeightSettings {
    pub points: usize,
    pub t_min: f64,
    pub d: usize,
}

impl Default for IsWeightSettings {
    fn default() -> Self {
        Self { points: 200, t_min: 1e-5, d: 2 }
    }
}

pub fn isweights(ctx: &Ctx, s: &IsWeightSettings) -> Result<Outcome> {
    if s.points < 2 || s.t_min.is_nan() || s.t_min <= 0.0 {
        bail!("isweights needs at least 2 points and t_min > 0");
    }
    let im = ImportanceModel::new(ctx.params);
    let t_max = ctx.params.t_final;
    let mut t = Table::new(["t", "ml", "fid", "mlc", "fidc"]);
    let mut failures = Vec::new();
    for i in 0..s.points {
        let time = (s.t_min + (t_max - s.t_min) * i as f64 / (s.points - 1) as f64).clamp(s.t_min, t_max);
        let w = im.weights(time, s.d)?;
        for (name, v) in [("ml", w.ml), ("fid", w.fid), ("mlc", w.mlc), ("fidc", w.fidc)] {
            if !v.is_finite() {
                failures.push(format!("{name} not finite at t={time}"));
            }
        }
        t.push(vec![num(time), num(w.ml), num(w.fid), num(w.mlc), num(w.fidc)]);
    }
    Ok(Outcome { table: t, metrics: json!({ "points": s.points }), failures })
}
