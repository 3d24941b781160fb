use serde::{Deserialize, Serialize};

use crate::error::{CldError, Result};
use crate::kernels::{self, CldParams, PerDimKernel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IsVariant {
    Ml,
    Fid,
    Mlc,
    Fidc,
}

/// Expected per-time DSM losses when the data is assumed `N(0, I)` and the
/// model is the exact score of that Gaussian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImportanceModel {
    pub p: CldParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IsWeights {
    pub t: f64,
    pub ml: f64,
    pub fid: f64,
    pub mlc: f64,
    pub fidc: f64,
}

struct Parts {
    mean_term: f64,
    a: f64,
    b: f64,
    ell: f64,
}

impl ImportanceModel {
    pub fn new(p: CldParams) -> Self {
        Self { p }
    }

    /// Assumed-Gaussian marginal covariance `Σ̄_t` (starts at `diag(1, γM)`).
    pub fn sigma_bar(&self, t: f64) -> Result<PerDimKernel> {
        kernels::forward_moments(&self.p, t, 1.0, self.p.v0_var())
    }

    /// `ℓ̄_t` of the assumed-Gaussian marginal.
    pub fn ell_bar(&self, t: f64) -> Result<f64> {
        kernels::ell(&self.sigma_bar(t)?, 0.0)
    }

    /// `ι(t) = det(Σ̄_t)⁻² e^{-4βt/Γ}`.
    pub fn iota(&self, t: f64) -> Result<f64> {
        let k = self.sigma_bar(t)?;
        let det = k.det();
        if !(det > 0.0) {
            return Err(CldError::Singular(format!("det Σ̄ = {det}")));
        }
        Ok((-4.0 * self.p.beta * t / self.p.gamma_fric).exp() / (det * det))
    }

    fn parts(&self, t: f64) -> Result<Parts> {
        let k = self.sigma_bar(t)?;
        let det = k.det();
        if !(det > 0.0) {
            return Err(CldError::Singular(format!("det Σ̄ = {det}")));
        }
        let (p21, p22) = (-k.sxv / det, k.sxx / det);
        let dk = kernels::dsm_kernel(&self.p, t)?;
        let l = kernels::cholesky2(&dk, self.p.eps_num)?;
        let m = &dk.mu_coeff;
        let r1 = p21 * m[0][0] + p22 * m[1][0];
        let r2 = p21 * m[0][1] + p22 * m[1][1];
        Ok(Parts {
            mean_term: r1 * r1 + r2 * r2 * self.p.v0_var(),
            a: p21 * l.lxx + p22 * l.lxv,
            b: p22 * l.lvv,
            ell: 1.0 / l.lvv,
        })
    }

    /// Contribution of the kernel-mean mismatch to every variant.
    pub fn mean_term(&self, t: f64, d: usize) -> Result<f64> {
        Ok(d as f64 * self.parts(t)?.mean_term)
    }

    pub fn weights(&self, t: f64, d: usize) -> Result<IsWeights> {
        let q = self.parts(t)?;
        let df = d as f64;
        let mean = df * q.mean_term;
        let ml = mean + df * (q.a * q.a + (q.b - q.ell).powi(2));
        let mlc = mean + df * (q.a * q.a + q.b * q.b - 2.0 * q.ell * q.b);
        let inv2 = 1.0 / (q.ell * q.ell);
        Ok(IsWeights {
            t,
            ml,
            fid: inv2 * ml,
            mlc,
            fidc: inv2 * mlc,
        })
    }
}

/// Closed-form expected loss at `t` for the requested variant.
pub fn is_weight(im: &ImportanceModel, t: f64, variant: IsVariant, d: usize) -> Result<f64> {
    if !(t > 0.0) {
        return Err(CldError::Domain(format!("importance weight needs t > 0, got {t}")));
    }
    let w = im.weights(t, d)?;
    Ok(match variant {
        IsVariant::Ml => w.ml,
        IsVariant::Fid => w.fid,
        IsVariant::Mlc => w.mlc,
        IsVariant::Fidc => w.fidc,
    })
}

/// Mean term written in terms of `K = Σ̄_t` and `ι(t)`:
/// `ι d [-βtK₁₁ - 2βtΓ⁻¹K₁₂ - K₁₂]² + ι d γM [-2βtΓ⁻¹K₁₁ + K₁₁ - 4βtΓ⁻²K₁₂]²`.
pub fn paper_mean_term(im: &ImportanceModel, t: f64, d: usize) -> Result<f64> {
    let k = im.sigma_bar(t)?;
    let iota = im.iota(t)?;
    let (bt, g) = (im.p.beta * t, im.p.gamma_fric);
    let (k11, k12) = (k.sxx, k.sxv);
    let first = -bt * k11 - 2.0 * bt / g * k12 - k12;
    let second = -2.0 * bt / g * k11 + k11 - 4.0 * bt / (g * g) * k12;
    let df = d as f64;
    Ok(iota * df * first * first + iota * df * im.p.v0_var() * second * second)
}
