use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::rng::{self, normal, stream_rng};

/// Forward Langevin parameters without the critical-damping constraint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LangevinParams {
    pub beta: f64,
    pub gamma_fric: f64,
    pub mass: f64,
}

impl LangevinParams {
    /// `Γ² / 4M`: below 1 is underdamped, above 1 overdamped.
    pub fn damping_ratio(&self) -> f64 {
        self.gamma_fric * self.gamma_fric / (4.0 * self.mass)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryConfig {
    pub dt: f64,
    pub n_steps: usize,
    pub record_every: usize,
    pub v0_var: f64,
    pub seed: u64,
    /// Number of rows whose first coordinate is stored as a path.
    pub keep_paths: usize,
}

/// Pooled moments of `(x_t, v_t)` over rows and dimensions.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MomentTrace {
    pub times: Vec<f64>,
    pub mean_x: Vec<f64>,
    pub mean_v: Vec<f64>,
    pub var_x: Vec<f64>,
    pub cov_xv: Vec<f64>,
    pub var_v: Vec<f64>,
    /// Correlation between `x_0` and `x_t`.
    pub autocorr_x: Vec<f64>,
    pub paths: Vec<Vec<(f64, f64)>>,
}

impl MomentTrace {
    /// Sup-distance of the moments to equilibrium `N(0,1) × N(0,M)`, with
    /// velocity quantities scaled by `√M` so both coordinates are unitless.
    pub fn distance(&self, mass: f64) -> Vec<f64> {
        let sm = mass.sqrt();
        (0..self.times.len())
            .map(|i| {
                [
                    (self.var_x[i] - 1.0).abs(),
                    self.cov_xv[i].abs() / sm,
                    (self.var_v[i] / mass - 1.0).abs(),
                    self.mean_x[i].abs(),
                    self.mean_v[i].abs() / sm,
                ]
                .into_iter()
                .fold(0.0, f64::max)
            })
            .collect()
    }

    /// First recorded time after which the distance stays below `threshold`.
    pub fn time_to_equilibrium(&self, mass: f64, threshold: f64) -> Option<f64> {
        let dist = self.distance(mass);
        match dist.iter().rposition(|&d| d >= threshold) {
            None => self.times.first().copied(),
            Some(i) if i + 1 < self.times.len() => Some(self.times[i + 1]),
            Some(_) => None,
        }
    }

    /// Number of sign changes of the `x` autocorrelation while it is
    /// clearly resolved (magnitude above `floor`).
    pub fn autocorr_sign_changes(&self, floor: f64) -> usize {
        let mut last = 0.0f64;
        let mut count = 0;
        for &a in &self.autocorr_x {
            if a.abs() < floor {
                continue;
            }
            if last != 0.0 && a.signum() != last.signum() {
                count += 1;
            }
            last = a;
        }
        count
    }
}

const CHUNK: usize = 256;
const NSUM: usize = 8;

/// Euler–Maruyama simulation of the forward Langevin SDE
/// `dx = βM⁻¹v dt`, `dv = -βx dt - βΓM⁻¹v dt + √(2Γβ) dw`
/// from the rows of `x0` (row-major, width `d`) with `v0 ~ N(0, v0_var)`.
pub fn forward_trajectories(lp: &LangevinParams, x0: &[f64], d: usize, cfg: &TrajectoryConfig) -> MomentTrace {
    let n = x0.len() / d;
    let rec = cfg.record_every.max(1);
    let n_rec = cfg.n_steps / rec + 1;
    let (b, g, mi) = (lp.beta, lp.gamma_fric, 1.0 / lp.mass);
    let sd = (2.0 * g * b * cfg.dt).sqrt();
    let sv0 = cfg.v0_var.sqrt();

    let chunks: Vec<(Vec<[f64; NSUM]>, Vec<Vec<(f64, f64)>>)> = x0
        .par_chunks(CHUNK * d)
        .enumerate()
        .map(|(c, block)| {
            let mut sums = vec![[0.0; NSUM]; n_rec];
            let mut paths = Vec::new();
            for (j, row) in block.chunks(d).enumerate() {
                let idx = c * CHUNK + j;
                let mut r = stream_rng(cfg.seed, rng::tag::SAMPLER, idx as u64);
                let keep = idx < cfg.keep_paths;
                let mut path = Vec::new();
                let mut x: Vec<f64> = row.to_vec();
                let mut v: Vec<f64> = (0..d).map(|_| sv0 * normal(&mut r)).collect();
                let mut acc = |k: usize, x: &[f64], v: &[f64], path: &mut Vec<(f64, f64)>| {
                    let s = &mut sums[k];
                    for i in 0..d {
                        s[0] += x[i];
                        s[1] += v[i];
                        s[2] += x[i] * x[i];
                        s[3] += x[i] * v[i];
                        s[4] += v[i] * v[i];
                        s[5] += row[i] * x[i];
                        s[6] += row[i];
                        s[7] += row[i] * row[i];
                    }
                    if keep {
                        path.push((x[0], v[0]));
                    }
                };
                acc(0, &x, &v, &mut path);
                for step in 1..=cfg.n_steps {
                    for i in 0..d {
                        let (xi, vi) = (x[i], v[i]);
                        x[i] = xi + b * mi * vi * cfg.dt;
                        v[i] = vi - (b * xi + b * g * mi * vi) * cfg.dt + sd * normal(&mut r);
                    }
                    if step % rec == 0 {
                        acc(step / rec, &x, &v, &mut path);
                    }
                }
                if keep {
                    paths.push(path);
                }
            }
            (sums, paths)
        })
        .collect();

    let mut total = vec![[0.0; NSUM]; n_rec];
    let mut out = MomentTrace::default();
    for (sums, paths) in chunks {
        for (t, s) in total.iter_mut().zip(sums) {
            for k in 0..NSUM {
                t[k] += s[k];
            }
        }
        out.paths.extend(paths);
    }
    let m = (n * d) as f64;
    for (k, s) in total.iter().enumerate() {
        let (mx, mv) = (s[0] / m, s[1] / m);
        let m0 = s[6] / m;
        let vx = s[2] / m - mx * mx;
        let v0 = s[7] / m - m0 * m0;
        out.times.push((k * rec) as f64 * cfg.dt);
        out.mean_x.push(mx);
        out.mean_v.push(mv);
        out.var_x.push(vx);
        out.cov_xv.push(s[3] / m - mx * mv);
        out.var_v.push(s[4] / m - mv * mv);
        out.autocorr_x.push((s[5] / m - m0 * mx) / (v0 * vx).sqrt());
    }
    out
}
