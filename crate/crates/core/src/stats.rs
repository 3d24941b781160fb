//! Monte Carlo summaries.

use serde::{Deserialize, Serialize};

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl MeanSe {
    pub fn from_values(v: &[f64]) -> Self {
        let n = v.len();
        if n == 0 {
            return Self { mean: f64::NAN, se: f64::NAN, n };
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self { mean, se: (var / n as f64).sqrt(), n }
    }

    /// Sample variance recovered from the standard error.
    pub fn variance(&self) -> f64 {
        self.se * self.se * self.n as f64
    }

    /// `|mean - target| <= k · se`.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.mean - target).abs() <= k * self.se
    }
}

/// Mean and standard error of the paired difference `a - b`.
pub fn paired_diff(a: &[f64], b: &[f64]) -> MeanSe {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    MeanSe::from_values(&d)
}

/// Unbiased sample variance.
pub fn variance(v: &[f64]) -> f64 {
    MeanSe::from_values(v).variance()
}
