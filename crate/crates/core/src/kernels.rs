//! Closed-form moments of the critically-damped Langevin forward process.
//!
//! Per dimension the state is `u = (x, v)` and the forward SDE is
//!
//! ```text
//! dx = β M⁻¹ v dt
//! dv = -β x dt - β Γ M⁻¹ v dt + √(2Γβ) dw
//! ```
//!
//! with `M = Γ²/4`. All quantities are stored as 2×2 per-dimension blocks.

use serde::{Deserialize, Serialize};

use crate::error::{CldError, Result};

/// Diffusion hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CldParams {
    pub beta: f64,
    pub gamma_fric: f64,
    pub mass: f64,
    pub gamma0: f64,
    pub t_final: f64,
    pub eps_cutoff: f64,
    pub eps_num: f64,
}

impl Default for CldParams {
    fn default() -> Self {
        Self::new(4.0, 1.0, 0.04)
    }
}

impl CldParams {
    /// Critically damped parameters; the mass is derived from the friction.
    pub fn new(beta: f64, gamma_fric: f64, gamma0: f64) -> Self {
        Self {
            beta,
            gamma_fric,
            mass: gamma_fric * gamma_fric / 4.0,
            gamma0,
            t_final: 1.0,
            eps_cutoff: 1e-3,
            eps_num: 1e-9,
        }
    }

    pub fn with_t_final(mut self, t_final: f64) -> Self {
        self.t_final = t_final;
        self
    }

    pub fn with_eps_cutoff(mut self, eps: f64) -> Self {
        self.eps_cutoff = eps;
        self
    }

    pub fn with_eps_num(mut self, eps: f64) -> Self {
        self.eps_num = eps;
        self
    }

    pub fn with_gamma0(mut self, gamma0: f64) -> Self {
        self.gamma0 = gamma0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CldError::InvalidArgument(m.to_string()));
        if !(self.beta > 0.0) {
            return bad("beta must be positive");
        }
        if !(self.gamma_fric > 0.0) {
            return bad("friction must be positive");
        }
        if self.mass != self.gamma_fric * self.gamma_fric / 4.0 {
            return bad("mass must equal friction^2/4");
        }
        if !(self.gamma0 > 0.0) {
            return bad("gamma0 must be positive");
        }
        if !(self.eps_cutoff >= 0.0 && self.eps_cutoff < self.t_final) {
            return bad("eps cutoff must lie in [0, T)");
        }
        if !(self.eps_num >= 0.0) {
            return bad("eps_num must be non-negative");
        }
        Ok(())
    }

    #[inline]
    pub fn inv_mass(&self) -> f64 {
        1.0 / self.mass
    }

    /// Initial velocity variance γM.
    #[inline]
    pub fn v0_var(&self) -> f64 {
        self.gamma0 * self.mass
    }
}

/// Gaussian moments of `p_t(u | u0)` for one dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerDimKernel {
    pub mu_coeff: [[f64; 2]; 2],
    pub sxx: f64,
    pub sxv: f64,
    pub svv: f64,
    pub t: f64,
}

impl PerDimKernel {
    pub fn identity(t: f64, sxx: f64, svv: f64) -> Self {
        Self {
            mu_coeff: [[1.0, 0.0], [0.0, 1.0]],
            sxx,
            sxv: 0.0,
            svv,
            t,
        }
    }

    #[inline]
    pub fn mean(&self, x0: f64, v0: f64) -> (f64, f64) {
        let m = &self.mu_coeff;
        (m[0][0] * x0 + m[0][1] * v0, m[1][0] * x0 + m[1][1] * v0)
    }

    #[inline]
    pub fn det(&self) -> f64 {
        self.sxx * self.svv - self.sxv * self.sxv
    }

    /// Apply `next` after `self`: mean maps compose and the covariance is
    /// pushed through `next`'s mean map before adding its own noise.
    pub fn then(&self, next: &PerDimKernel) -> PerDimKernel {
        let a = &next.mu_coeff;
        let b = &self.mu_coeff;
        let mut mu = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                mu[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
            }
        }
        let s = [[self.sxx, self.sxv], [self.sxv, self.svv]];
        let mut c = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                let mut acc = 0.0;
                for k in 0..2 {
                    for l in 0..2 {
                        acc += a[i][k] * s[k][l] * a[j][l];
                    }
                }
                c[i][j] = acc;
            }
        }
        PerDimKernel {
            mu_coeff: mu,
            sxx: c[0][0] + next.sxx,
            sxv: 0.5 * (c[0][1] + c[1][0]) + next.sxv,
            svv: c[1][1] + next.svv,
            t: self.t + next.t,
        }
    }
}

/// Lower-triangular per-dimension Cholesky factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CholFactor {
    pub lxx: f64,
    pub lxv: f64,
    pub lvv: f64,
}

impl CholFactor {
    /// `L · (e1, e2)`.
    #[inline]
    pub fn apply(&self, e1: f64, e2: f64) -> (f64, f64) {
        (self.lxx * e1, self.lxv * e1 + self.lvv * e2)
    }
}

/// e^{-y}(e^y - 1 - y - y²/2), accurate for small `y`.
pub(crate) fn scaled_phi3(y: f64) -> f64 {
    if y < 1.0 {
        let mut term = y * y * y / 6.0;
        let mut sum = term;
        let mut k = 3.0;
        while term.abs() > 1e-18 * sum.abs() {
            k += 1.0;
            term *= y / k;
            sum += term;
        }
        sum * (-y).exp()
    } else {
        1.0 - (-y).exp() * (1.0 + y + 0.5 * y * y)
    }
}

/// e^{-y}(e^y - 1 + y - y²/2).
pub(crate) fn scaled_psi(y: f64) -> f64 {
    -(-y).exp_m1() + (-y).exp() * (y - 0.5 * y * y)
}

/// Kernel for elapsed `b = β·t` from `Σ0 = diag(s0xx, s0vv)`, no domain checks.
pub(crate) fn moments_at(p: &CldParams, b: f64, t: f64, s0xx: f64, s0vv: f64) -> PerDimKernel {
    let g = p.gamma_fric;
    let y = 4.0 * b / g;
    let ey = (-y).exp();
    let c = (-0.5 * y).exp();
    let (g2, g3, g4) = (g * g, g * g * g, g * g * g * g);
    let b2 = b * b;

    let sxx = ey * (s0xx * (1.0 + y + 0.25 * y * y) + 16.0 * b2 / g4 * s0vv) + scaled_phi3(y);
    let sxv = ey
        * (-b * s0xx + 4.0 * b / g2 * s0vv - 2.0 * b2 / g * (s0xx - 2.0)
            - 8.0 * b2 / g3 * s0vv);
    let svv = 0.25 * g2 * scaled_psi(y) + ey * (s0vv * (1.0 - y + 0.25 * y * y) + b2 * s0xx);

    PerDimKernel {
        mu_coeff: [
            [c * (1.0 + 0.5 * y), c * 4.0 * b / g2],
            [-c * b, c * (1.0 - 0.5 * y)],
        ],
        sxx,
        sxv,
        svv,
        t,
    }
}

/// Forward kernel at time `t` from initial covariance `diag(s0xx, s0vv)`.
pub fn forward_moments(p: &CldParams, t: f64, s0xx: f64, s0vv: f64) -> Result<PerDimKernel> {
    if !(t >= 0.0) || t > p.t_final * (1.0 + 1e-12) {
        return Err(CldError::Domain(format!(
            "t = {t} outside [0, {}]",
            p.t_final
        )));
    }
    if !(s0xx >= 0.0 && s0vv >= 0.0) {
        return Err(CldError::Domain("initial variances must be non-negative".into()));
    }
    Ok(moments_at(p, p.beta * t, t, s0xx, s0vv))
}

/// Kernel conditioned on `(x0, v0)`.
pub fn dsm_kernel(p: &CldParams, t: f64) -> Result<PerDimKernel> {
    forward_moments(p, t, 0.0, 0.0)
}

/// Kernel conditioned on `x0` only, with `v0 ~ N(0, γM)` marginalized.
pub fn hsm_kernel(p: &CldParams, t: f64) -> Result<PerDimKernel> {
    forward_moments(p, t, 0.0, p.v0_var())
}

pub fn cholesky2(k: &PerDimKernel, eps_num: f64) -> Result<CholFactor> {
    let a = k.sxx + eps_num;
    if !(a > 0.0) {
        return Err(CldError::Factorization(format!("sxx + eps = {a}")));
    }
    let lxx = a.sqrt();
    let lxv = k.sxv / lxx;
    let r = k.svv + eps_num - lxv * lxv;
    if !(r > 0.0) {
        return Err(CldError::Factorization(format!("lvv^2 = {r}")));
    }
    Ok(CholFactor {
        lxx,
        lxv,
        lvv: r.sqrt(),
    })
}

/// `ℓ_t = √(Σxx / det Σ)` on the stabilized covariance. A point mass in `x`
/// with no cross term falls back to `1/√Σvv`.
pub fn ell(k: &PerDimKernel, eps_num: f64) -> Result<f64> {
    let a = k.sxx + eps_num;
    if a == 0.0 && k.sxv == 0.0 && k.svv + eps_num > 0.0 {
        return Ok(1.0 / (k.svv + eps_num).sqrt());
    }
    let det = a * (k.svv + eps_num) - k.sxv * k.sxv;
    if !(a > 0.0) || !(det > 0.0) {
        return Err(CldError::Singular(format!("sxx = {a}, det = {det}")));
    }
    Ok((a / det).sqrt())
}

pub fn equilibrium(p: &CldParams) -> PerDimKernel {
    PerDimKernel {
        mu_coeff: [[0.0, 0.0], [0.0, 0.0]],
        sxx: 1.0,
        sxv: 0.0,
        svv: p.mass,
        t: f64::INFINITY,
    }
}

/// Exact propagator of the reverse-time linear part over `dt_half`.
///
/// Same structure as the forward kernel from a point mass, with the
/// velocity direction reversed, hence the flipped off-diagonal signs.
pub fn sscs_half_moments(p: &CldParams, dt_half: f64) -> PerDimKernel {
    let mut k = moments_at(p, p.beta * dt_half, dt_half, 0.0, 0.0);
    k.mu_coeff[0][1] = -k.mu_coeff[0][1];
    k.mu_coeff[1][0] = -k.mu_coeff[1][0];
    k.sxv = -k.sxv;
    k
}
