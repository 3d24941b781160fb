use rayon::prelude::*;

use crate::error::Result;
use crate::kernels::CldParams;
use crate::mixtures::{self, GaussianMixture, VpsdeParams};

/// Row-major batch of joint states at a common time.
#[derive(Debug, Clone, PartialEq)]
pub struct StateBatch {
    pub n: usize,
    pub d: usize,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub t: f64,
}

impl StateBatch {
    pub fn new(n: usize, d: usize, x: Vec<f64>, v: Vec<f64>, t: f64) -> Self {
        assert_eq!(x.len(), n * d);
        assert_eq!(v.len(), n * d);
        Self { n, d, x, v, t }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.v).all(|a| a.is_finite())
    }
}

/// Velocity score `∇_v log p_t(x, v)` evaluated on a batch.
pub trait VelocityScore: Sync {
    fn dim(&self) -> usize;

    /// `x`, `v` and `out` are row-major `n × d`.
    fn score_v(&self, x: &[f64], v: &[f64], t: f64, out: &mut [f64]) -> Result<()>;

    /// Score plus the exact `tr ∂s/∂v` for a single state, if available.
    fn score_v_div(&self, _x: &[f64], _v: &[f64], _t: f64, _out: &mut [f64]) -> Option<f64> {
        None
    }
}

/// Data-space score `∇_x log p_t(x)` evaluated on a batch.
pub trait DataScore: Sync {
    fn dim(&self) -> usize;
    fn score_x(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()>;
}

/// Exact velocity score of a diffused Gaussian mixture.
///
/// With [`MixtureScore::assumed_gaussian`] this is the score of the
/// Gaussian that the data would have if it were `N(0, I)`.
#[derive(Debug, Clone)]
pub struct MixtureScore {
    pub mix: GaussianMixture,
    pub p: CldParams,
}

impl MixtureScore {
    pub fn new(mix: GaussianMixture, p: CldParams) -> Self {
        Self { mix, p }
    }

    pub fn assumed_gaussian(d: usize, p: CldParams) -> Self {
        Self::new(GaussianMixture::standard_normal(d), p)
    }
}

impl VelocityScore for MixtureScore {
    fn dim(&self) -> usize {
        self.mix.d
    }

    fn score_v(&self, x: &[f64], v: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let dm = mixtures::diffuse(&self.mix, &self.p, t)?;
        let d = self.mix.d;
        out.par_chunks_mut(d)
            .zip(x.par_chunks(d).zip(v.par_chunks(d)))
            .for_each(|(o, (xr, vr))| dm.score_v(xr, vr, o));
        Ok(())
    }

    fn score_v_div(&self, x: &[f64], v: &[f64], t: f64, out: &mut [f64]) -> Option<f64> {
        let dm = mixtures::diffuse(&self.mix, &self.p, t).ok()?;
        Some(dm.score_v_div(x, v, out))
    }
}

/// Exact data score of a VP-diffused Gaussian mixture.
#[derive(Debug, Clone)]
pub struct VpMixtureScore {
    pub mix: GaussianMixture,
    pub vp: VpsdeParams,
}

impl DataScore for VpMixtureScore {
    fn dim(&self) -> usize {
        self.mix.d
    }

    fn score_x(&self, x: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let d = self.mix.d;
        out.par_chunks_mut(d)
            .zip(x.par_chunks(d))
            .for_each(|(o, xr)| mixtures::vpsde_score_x(&self.mix, &self.vp, xr, t, o));
        Ok(())
    }
}

/// Row-wise closure score, handy for tests and custom fields.
pub struct FnVelocityScore<F> {
    pub d: usize,
    pub f: F,
}

impl<F> VelocityScore for FnVelocityScore<F>
where
    F: Fn(&[f64], &[f64], f64, &mut [f64]) + Sync,
{
    fn dim(&self) -> usize {
        self.d
    }

    fn score_v(&self, x: &[f64], v: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        let d = self.d;
        out.par_chunks_mut(d)
            .zip(x.par_chunks(d).zip(v.par_chunks(d)))
            .for_each(|(o, (xr, vr))| (self.f)(xr, vr, t, o));
        Ok(())
    }
}
