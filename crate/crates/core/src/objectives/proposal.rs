use rand::Rng;

use crate::error::{CldError, Result};
use crate::rng;

/// Piecewise-linear density over `[t_min, t_max]` proportional to
/// interpolated grid weights, sampled by inverse CDF.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeProposal {
    pub grid: Vec<f64>,
    pub weights: Vec<f64>,
    cdf: Vec<f64>,
    total: f64,
}

impl TimeProposal {
    pub fn new(grid: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if grid.len() < 2 || grid.len() != weights.len() {
            return Err(CldError::InvalidArgument("proposal needs matching grids of length >= 2".into()));
        }
        if grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(CldError::InvalidArgument("proposal grid must increase".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(CldError::InvalidArgument("proposal weights must be finite and >= 0".into()));
        }
        let mut cdf = vec![0.0];
        for i in 0..grid.len() - 1 {
            let area = 0.5 * (weights[i] + weights[i + 1]) * (grid[i + 1] - grid[i]);
            cdf.push(cdf[i] + area);
        }
        let total = *cdf.last().unwrap();
        if !(total > 0.0) {
            return Err(CldError::InvalidArgument("all proposal weights are zero".into()));
        }
        Ok(Self { grid, weights, cdf, total })
    }

    /// `n` uniform grid points on `[t_min, t_max]` weighted by `f`.
    pub fn from_fn<F: Fn(f64) -> Result<f64>>(t_min: f64, t_max: f64, n: usize, f: F) -> Result<Self> {
        let grid: Vec<f64> = (0..n)
            .map(|i| t_min + (t_max - t_min) * i as f64 / (n - 1) as f64)
            .collect();
        let weights = grid.iter().map(|&t| f(t)).collect::<Result<Vec<_>>>()?;
        Self::new(grid, weights)
    }

    pub fn t_min(&self) -> f64 {
        self.grid[0]
    }

    pub fn t_max(&self) -> f64 {
        *self.grid.last().unwrap()
    }

    fn segment(&self, t: f64) -> usize {
        match self.grid.binary_search_by(|g| g.partial_cmp(&t).unwrap()) {
            Ok(i) => i.min(self.grid.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.grid.len() - 2),
        }
    }

    /// Normalized proposal density `q(t)`.
    pub fn density(&self, t: f64) -> f64 {
        if t < self.t_min() || t > self.t_max() {
            return 0.0;
        }
        let i = self.segment(t);
        let (a, b) = (self.grid[i], self.grid[i + 1]);
        let s = (t - a) / (b - a);
        ((1.0 - s) * self.weights[i] + s * self.weights[i + 1]) / self.total
    }

    /// Factor turning a `q`-sample into an unbiased estimate of the uniform-`t` mean.
    pub fn correction(&self, t: f64) -> f64 {
        1.0 / ((self.t_max() - self.t_min()) * self.density(t))
    }

    pub fn inverse_cdf(&self, u: f64) -> f64 {
        let target = u.clamp(0.0, 1.0) * self.total;
        let i = match self.cdf.binary_search_by(|c| c.partial_cmp(&target).unwrap()) {
            Ok(i) => i.min(self.grid.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.grid.len() - 2),
        };
        let (a, b) = (self.grid[i], self.grid[i + 1]);
        let (w0, w1) = (self.weights[i], self.weights[i + 1]);
        let h = b - a;
        let rem = target - self.cdf[i];
        // area over [a, a + s h] is h (w0 s + (w1 - w0) s² / 2)
        let slope = w1 - w0;
        let s = if slope.abs() < 1e-12 * w0.abs().max(w1.abs()) {
            if w0 > 0.0 { rem / (h * w0) } else { 0.0 }
        } else {
            let disc = (w0 * w0 + 2.0 * slope * rem / h).max(0.0);
            (disc.sqrt() - w0) / slope
        };
        a + s.clamp(0.0, 1.0) * h
    }

    /// Draw `(t, correction)`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let t = self.inverse_cdf(rng::uniform(rng));
        (t, self.correction(t))
    }
}
