//! End-to-end studies shared by the command-line runner and the tests.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::kernels::CldParams;
use crate::mixtures::{self, GaussianMixture, VpsdeParams};
use crate::samplers::{
    self, forward_trajectories, make_schedule, CldSampler, LangevinParams, MixtureScore,
    SamplerOptions, ScheduleKind, TrajectoryConfig, VpMixtureScore,
};
use crate::stats::MeanSe;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TableSampler {
    CldEm,
    CldSscs,
    VpsdeEm,
}

impl TableSampler {
    pub fn label(&self) -> &'static str {
        match self {
            TableSampler::CldEm => "cld_em",
            TableSampler::CldSscs => "cld_sscs",
            TableSampler::VpsdeEm => "vpsde_em",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableConfig {
    pub params: CldParams,
    pub vp: VpsdeParams,
    pub n_samples: usize,
    pub steps: Vec<usize>,
    pub schedule: ScheduleKind,
    pub seed: u64,
}

impl Default for TableConfig {
    fn default() -> Self {
        Self {
            params: CldParams::default().with_eps_cutoff(1e-5),
            vp: VpsdeParams::default(),
            n_samples: 100_000,
            steps: vec![20, 50, 100, 200],
            schedule: ScheduleKind::Uniform,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableCell {
    pub sampler: TableSampler,
    pub n_steps: usize,
    pub nll: MeanSe,
}

/// Sample `n_samples` points with one sampler using exact mixture scores.
pub fn sample_with_analytic_score(
    mix: &GaussianMixture,
    p: &CldParams,
    vp: &VpsdeParams,
    sampler: TableSampler,
    n_steps: usize,
    schedule: ScheduleKind,
    n_samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let sched = make_schedule(schedule, n_steps, p.t_final, p.eps_cutoff)?;
    let opts = SamplerOptions::new(seed);
    match sampler {
        TableSampler::CldEm | TableSampler::CldSscs => {
            let score = MixtureScore::new(mix.clone(), *p);
            let prior = samplers::prior_batch(p, n_samples, mix.d, seed);
            let kind = if sampler == TableSampler::CldEm {
                CldSampler::Em
            } else {
                CldSampler::Sscs
            };
            let out = match kind {
                CldSampler::Em => samplers::em_run_cld(p, &score, prior, &sched, &opts)?,
                CldSampler::Sscs => samplers::sscs_run(p, &score, prior, &sched, &opts)?,
            };
            Ok(out.x)
        }
        TableSampler::VpsdeEm => {
            let score = VpMixtureScore {
                mix: mix.clone(),
                vp: *vp,
            };
            let prior = samplers::vpsde_prior(n_samples, mix.d, seed);
            samplers::vpsde_em_run(vp, &score, prior, mix.d, &sched, seed)
        }
    }
}

/// Sample NLL under the true data density for every sampler and step count.
pub fn analytical_table(mix: &GaussianMixture, cfg: &TableConfig) -> Result<Vec<TableCell>> {
    let mut cells = Vec::new();
    for sampler in [TableSampler::CldEm, TableSampler::CldSscs, TableSampler::VpsdeEm] {
        for &n in &cfg.steps {
            let x = sample_with_analytic_score(
                mix,
                &cfg.params,
                &cfg.vp,
                sampler,
                n,
                cfg.schedule,
                cfg.n_samples,
                cfg.seed,
            )?;
            cells.push(TableCell {
                sampler,
                n_steps: n,
                nll: mix.data_nll_se(&x),
            });
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DampingConfig {
    pub beta: f64,
    pub mass: f64,
    /// Ratios `Γ² / 4M` to test.
    pub ratios: Vec<f64>,
    pub n_rows: usize,
    pub horizon: f64,
    pub threshold: f64,
    /// Offset added to every data coordinate so the start is off equilibrium.
    pub x_shift: f64,
    pub v0_var: f64,
    pub seed: u64,
}

impl Default for DampingConfig {
    fn default() -> Self {
        Self {
            beta: 4.0,
            mass: 0.25,
            ratios: vec![0.25, 1.0, 16.0, 256.0],
            n_rows: 10_000,
            horizon: 12.5,
            threshold: 0.05,
            x_shift: 0.5,
            v0_var: 0.04 * 0.25,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DampingResult {
    pub gamma_fric: f64,
    pub ratio: f64,
    pub dt: f64,
    pub time_to_equilibrium: Option<f64>,
    pub autocorr_sign_changes: usize,
    pub final_distance: f64,
}

/// Time to equilibrium per damping regime, from Euler–Maruyama simulation.
pub fn damping_study(mix: &GaussianMixture, cfg: &DampingConfig) -> Result<Vec<DampingResult>> {
    let mut x0 = mix.sample(cfg.n_rows, cfg.seed);
    x0.iter_mut().for_each(|a| *a += cfg.x_shift);
    cfg.ratios
        .iter()
        .map(|&ratio| {
            let g = (4.0 * cfg.mass * ratio).sqrt();
            let lp = LangevinParams {
                beta: cfg.beta,
                gamma_fric: g,
                mass: cfg.mass,
            };
            // keep the friction contraction per step small for EM accuracy
            let dt = (0.05 * cfg.mass / (cfg.beta * g)).min(1e-3);
            let n_steps = (cfg.horizon / dt).ceil() as usize;
            let record_every = ((0.01 / dt).round() as usize).max(1);
            let tr = forward_trajectories(
                &lp,
                &x0,
                mix.d,
                &TrajectoryConfig {
                    dt,
                    n_steps,
                    record_every,
                    v0_var: cfg.v0_var,
                    seed: cfg.seed,
                    keep_paths: 0,
                },
            );
            let dist = tr.distance(cfg.mass);
            Ok(DampingResult {
                gamma_fric: g,
                ratio,
                dt,
                time_to_equilibrium: tr.time_to_equilibrium(cfg.mass, cfg.threshold),
                autocorr_sign_changes: tr.autocorr_sign_changes(0.05),
                final_distance: *dist.last().unwrap(),
            })
        })
        .collect()
}

/// Record written next to every command-line result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub version: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub wall_time_s: f64,
    pub threads: usize,
    pub metrics: serde_json::Value,
    pub rng: String,
    pub failures: Vec<String>,
}

impl RunManifest {
    pub fn rng_description() -> String {
        "ChaCha8 keyed by (seed, namespace << 48 ^ work item)".to_string()
    }
}

/// Convenience: standard-normal data mixture for closed-form checks.
pub fn gaussian_data(d: usize) -> GaussianMixture {
    mixtures::GaussianMixture::standard_normal(d)
}
