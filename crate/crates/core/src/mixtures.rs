//! Gaussian-mixture toy data with exact diffused marginals and scores.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CldError, Result};
use crate::kernels::{self, CldParams, PerDimKernel};
use crate::rng::{self, normal, stream_rng};
use crate::stats::MeanSe;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Weighted isotropic Gaussian mixture; all components share `sigma`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub d: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub sigma: f64,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, sigma: f64) -> Result<Self> {
        if weights.is_empty() || weights.len() != means.len() {
            return Err(CldError::InvalidArgument("weights and means disagree".into()));
        }
        let d = means[0].len();
        if d == 0 || means.iter().any(|m| m.len() != d) {
            return Err(CldError::InvalidArgument("ragged means".into()));
        }
        if weights.iter().any(|&w| !(w >= 0.0)) {
            return Err(CldError::InvalidArgument("negative weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(CldError::InvalidArgument(format!("weights sum to {total}")));
        }
        if !(sigma > 0.0) {
            return Err(CldError::InvalidArgument("sigma must be positive".into()));
        }
        Ok(Self {
            d,
            weights,
            means,
            sigma,
        })
    }

    /// Single standard normal in `d` dimensions.
    pub fn standard_normal(d: usize) -> Self {
        Self {
            d,
            weights: vec![1.0],
            means: vec![vec![0.0; d]],
            sigma: 1.0,
        }
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    /// Component index drawn by weight.
    pub fn pick<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u = rng::uniform(rng);
        let mut acc = 0.0;
        for (k, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return k;
            }
        }
        self.weights.len() - 1
    }

    /// One exact draw written into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) -> usize {
        let k = self.pick(rng);
        for (o, m) in out.iter_mut().zip(&self.means[k]) {
            *o = m + self.sigma * normal(rng);
        }
        k
    }

    /// `n` draws, row-major `n × d`, one stream per row.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut out = vec![0.0; n * self.d];
        out.par_chunks_mut(self.d).enumerate().for_each(|(i, row)| {
            let mut r = stream_rng(seed, rng::tag::DATA, i as u64);
            self.sample_into(&mut r, row);
        });
        out
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let s2 = self.sigma * self.sigma;
        let norm = -0.5 * self.d as f64 * (LN_2PI + s2.ln());
        log_sum_exp(self.weights.iter().zip(&self.means).map(|(w, m)| {
            let q: f64 = x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum();
            w.ln() + norm - 0.5 * q / s2
        }))
    }

    /// Mean negative log density of row-major samples.
    pub fn data_nll(&self, samples: &[f64]) -> f64 {
        self.data_nll_se(samples).mean
    }

    pub fn data_nll_se(&self, samples: &[f64]) -> MeanSe {
        let vals: Vec<f64> = samples
            .par_chunks(self.d)
            .map(|x| -self.log_density(x))
            .collect();
        MeanSe::from_values(&vals)
    }
}

/// The nine-mode 2-D benchmark mixture.
pub fn nine_gaussians() -> GaussianMixture {
    let a = std::f64::consts::FRAC_1_SQRT_2;
    let h = 0.5 * a;
    let means = vec![
        vec![-a, 0.0],
        vec![-h, h],
        vec![0.0, a],
        vec![-h, -h],
        vec![0.0, 0.0],
        vec![h, h],
        vec![0.0, -a],
        vec![h, -h],
        vec![a, 0.0],
    ];
    GaussianMixture {
        d: 2,
        weights: vec![1.0 / 9.0; 9],
        means,
        sigma: 0.04,
    }
}

pub(crate) fn log_sum_exp<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    let v: Vec<f64> = it.into_iter().collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|a| (a - m).exp()).sum::<f64>().ln()
}

/// Joint `(x, v)` marginal of the mixture diffused to time `t`.
#[derive(Debug, Clone)]
pub struct DiffusedJointMixture {
    pub t: f64,
    pub d: usize,
    pub log_weights: Vec<f64>,
    pub mean_x: Vec<Vec<f64>>,
    pub mean_v: Vec<Vec<f64>>,
    pub kernel: PerDimKernel,
    // precision entries of the shared per-dimension covariance
    pxx: f64,
    pxv: f64,
    pvv: f64,
    log_norm: f64,
}

pub fn diffuse(mix: &GaussianMixture, p: &CldParams, t: f64) -> Result<DiffusedJointMixture> {
    let k = kernels::forward_moments(p, t, mix.sigma * mix.sigma, p.v0_var())?;
    DiffusedJointMixture::from_kernel(mix, k)
}

impl DiffusedJointMixture {
    /// Push each component mean through `k` (zero initial velocity mean).
    pub fn from_kernel(mix: &GaussianMixture, k: PerDimKernel) -> Result<Self> {
        let det = k.det();
        if !(det > 0.0) {
            return Err(CldError::Singular(format!("joint covariance det = {det}")));
        }
        let mean_x = mix
            .means
            .iter()
            .map(|m| m.iter().map(|&a| k.mu_coeff[0][0] * a).collect())
            .collect();
        let mean_v = mix
            .means
            .iter()
            .map(|m| m.iter().map(|&a| k.mu_coeff[1][0] * a).collect())
            .collect();
        Ok(Self {
            t: k.t,
            d: mix.d,
            log_weights: mix.weights.iter().map(|w| w.ln()).collect(),
            mean_x,
            mean_v,
            kernel: k,
            pxx: k.svv / det,
            pxv: -k.sxv / det,
            pvv: k.sxx / det,
            log_norm: -(mix.d as f64) * (LN_2PI + 0.5 * det.ln()),
        })
    }

    /// Precision entries `(Pxx, Pxv, Pvv)` of the shared covariance.
    pub fn precision(&self) -> (f64, f64, f64) {
        (self.pxx, self.pxv, self.pvv)
    }

    fn component_logits(&self, x: &[f64], v: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for k in 0..self.log_weights.len() {
            let mut q = 0.0;
            for i in 0..self.d {
                let dx = x[i] - self.mean_x[k][i];
                let dv = v[i] - self.mean_v[k][i];
                q += self.pxx * dx * dx + 2.0 * self.pxv * dx * dv + self.pvv * dv * dv;
            }
            out.push(self.log_weights[k] - 0.5 * q);
        }
    }

    pub fn log_density(&self, x: &[f64], v: &[f64]) -> f64 {
        let mut l = Vec::with_capacity(self.log_weights.len());
        self.component_logits(x, v, &mut l);
        self.log_norm + log_sum_exp(l)
    }

    /// Exact `∇_v log p_t(x, v)`.
    pub fn score_v(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        self.score_v_div(x, v, out);
    }

    /// Velocity score plus `tr ∂s/∂v`.
    pub fn score_v_div(&self, x: &[f64], v: &[f64], out: &mut [f64]) -> f64 {
        let nk = self.log_weights.len();
        let mut l = Vec::with_capacity(nk);
        self.component_logits(x, v, &mut l);
        let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for a in l.iter_mut() {
            *a = (*a - m).exp();
            z += *a;
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        let mut second = 0.0;
        for k in 0..nk {
            let r = l[k] / z;
            let mut sq = 0.0;
            for i in 0..self.d {
                let sk = -(self.pxv * (x[i] - self.mean_x[k][i])
                    + self.pvv * (v[i] - self.mean_v[k][i]));
                out[i] += r * sk;
                sq += sk * sk;
            }
            second += r * sq;
        }
        let norm2: f64 = out.iter().map(|s| s * s).sum();
        -(self.d as f64) * self.pvv + second - norm2
    }

    /// Exact `∇_x log p_t(x, v)`.
    pub fn score_x(&self, x: &[f64], v: &[f64], out: &mut [f64]) {
        let nk = self.log_weights.len();
        let mut l = Vec::with_capacity(nk);
        self.component_logits(x, v, &mut l);
        let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = l.iter().map(|a| (a - m).exp()).sum();
        out.iter_mut().for_each(|o| *o = 0.0);
        for k in 0..nk {
            let r = (l[k] - m).exp() / z;
            for i in 0..self.d {
                out[i] -= r
                    * (self.pxx * (x[i] - self.mean_x[k][i])
                        + self.pxv * (v[i] - self.mean_v[k][i]));
            }
        }
    }

    /// One exact joint draw.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, x: &mut [f64], v: &mut [f64]) -> usize {
        let u = rng::uniform(rng);
        let mut acc = 0.0;
        let mut k = self.log_weights.len() - 1;
        for (j, lw) in self.log_weights.iter().enumerate() {
            acc += lw.exp();
            if u < acc {
                k = j;
                break;
            }
        }
        let l = kernels::cholesky2(&self.kernel, 0.0)
            .expect("diffused covariance is positive definite");
        for i in 0..self.d {
            let (a, b) = l.apply(normal(rng), normal(rng));
            x[i] = self.mean_x[k][i] + a;
            v[i] = self.mean_v[k][i] + b;
        }
        k
    }
}

/// Linear VP schedule `β(t) = β0 + β1 t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VpsdeParams {
    pub beta0: f64,
    pub beta1: f64,
}

impl Default for VpsdeParams {
    fn default() -> Self {
        Self {
            beta0: 0.1,
            beta1: 19.9,
        }
    }
}

impl VpsdeParams {
    #[inline]
    pub fn beta(&self, t: f64) -> f64 {
        self.beta0 + self.beta1 * t
    }

    #[inline]
    pub fn int_beta(&self, t: f64) -> f64 {
        self.beta0 * t + 0.5 * self.beta1 * t * t
    }

    #[inline]
    pub fn alpha(&self, t: f64) -> f64 {
        (-0.5 * self.int_beta(t)).exp()
    }

    #[inline]
    pub fn sigma2(&self, t: f64) -> f64 {
        -(-self.int_beta(t)).exp_m1()
    }
}

/// Per-component parameters `(α μ_k, variance)` of the VP-diffused mixture.
fn vp_component_var(mix: &GaussianMixture, vp: &VpsdeParams, t: f64) -> (f64, f64) {
    let a = vp.alpha(t);
    (a, a * a * mix.sigma * mix.sigma + vp.sigma2(t))
}

pub fn vpsde_log_density(mix: &GaussianMixture, vp: &VpsdeParams, x: &[f64], t: f64) -> f64 {
    let (a, var) = vp_component_var(mix, vp, t);
    let norm = -0.5 * mix.d as f64 * (LN_2PI + var.ln());
    log_sum_exp(mix.weights.iter().zip(&mix.means).map(|(w, m)| {
        let q: f64 = x.iter().zip(m).map(|(xi, mi)| (xi - a * mi).powi(2)).sum();
        w.ln() + norm - 0.5 * q / var
    }))
}

/// Exact `∇_x log p_t(x)` under the VP diffusion.
pub fn vpsde_score_x(mix: &GaussianMixture, vp: &VpsdeParams, x: &[f64], t: f64, out: &mut [f64]) {
    let (a, var) = vp_component_var(mix, vp, t);
    let logits: Vec<f64> = mix
        .weights
        .iter()
        .zip(&mix.means)
        .map(|(w, m)| {
            let q: f64 = x.iter().zip(m).map(|(xi, mi)| (xi - a * mi).powi(2)).sum();
            w.ln() - 0.5 * q / var
        })
        .collect();
    let mx = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
    out.iter_mut().for_each(|o| *o = 0.0);
    for (l, m) in logits.iter().zip(&mix.means) {
        let r = (l - mx).exp() / z;
        for i in 0..mix.d {
            out[i] -= r * (x[i] - a * m[i]) / var;
        }
    }
}

/// One row of the score-difference study.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct XiPoint {
    pub t: f64,
    pub xi_cld: MeanSe,
    pub xi_vpsde: MeanSe,
}

/// Default 50-point grid on `[1e-5, 1]`.
pub fn xi_grid(n: usize) -> Vec<f64> {
    let (a, b) = (1e-5, 1.0);
    (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1).max(1) as f64)
        .collect()
}

/// Monte Carlo estimates of `E‖∇_v log p_t(v|x) + v‖²` (CLD) and
/// `E‖∇_x log p_t(x) + x‖²` (VP diffusion).
///
/// The CLD parameters must have `M = γ = 1`, making both references
/// standard-normal scores.
pub fn xi_experiment(
    p: &CldParams,
    vp: &VpsdeParams,
    mix: &GaussianMixture,
    t_grid: &[f64],
    n_mc: usize,
    seed: u64,
) -> Result<Vec<XiPoint>> {
    if p.mass != 1.0 || p.gamma0 != 1.0 {
        return Err(CldError::InvalidArgument("score-difference study needs M = γ = 1".into()));
    }
    let d = mix.d;
    t_grid
        .iter()
        .enumerate()
        .map(|(ti, &t)| {
            let dm = diffuse(mix, p, t)?;
            let (a, var) = vp_component_var(mix, vp, t);
            let sd = var.sqrt();
            let pairs: Vec<(f64, f64)> = (0..n_mc)
                .into_par_iter()
                .map(|i| {
                    let mut r = stream_rng(seed, rng::tag::STUDY, ((ti as u64) << 32) | i as u64);
                    let mut x = vec![0.0; d];
                    let mut v = vec![0.0; d];
                    let mut s = vec![0.0; d];
                    dm.sample_into(&mut r, &mut x, &mut v);
                    dm.score_v(&x, &v, &mut s);
                    let c: f64 = s.iter().zip(&v).map(|(a, b)| (a + b).powi(2)).sum();
                    let k = mix.pick(&mut r);
                    for i in 0..d {
                        x[i] = a * mix.means[k][i] + sd * normal(&mut r);
                    }
                    vpsde_score_x(mix, vp, &x, t, &mut s);
                    let q: f64 = s.iter().zip(&x).map(|(a, b)| (a + b).powi(2)).sum();
                    (c, q)
                })
                .collect();
            let (c, q): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            Ok(XiPoint {
                t,
                xi_cld: MeanSe::from_values(&c),
                xi_vpsde: MeanSe::from_values(&q),
            })
        })
        .collect()
}
