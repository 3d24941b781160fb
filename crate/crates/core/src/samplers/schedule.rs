use serde::{Deserialize, Serialize};

use crate::error::{CldError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Uniform,
    Quadratic,
}

impl std::str::FromStr for ScheduleKind {
    type Err = CldError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "quadratic" | "qs" => Ok(Self::Quadratic),
            other => Err(CldError::InvalidArgument(format!("unknown schedule {other}"))),
        }
    }
}

/// Reverse-time step durations, largest first under quadratic striding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSchedule {
    pub kind: ScheduleKind,
    pub n_steps: usize,
    pub t_final: f64,
    pub eps_cutoff: f64,
    pub steps: Vec<f64>,
}

impl TimeSchedule {
    /// Time at the start of each reverse step, beginning at `T`.
    pub fn start_times(&self) -> Vec<f64> {
        let mut t = self.t_final;
        self.steps
            .iter()
            .map(|dt| {
                let s = t;
                t -= dt;
                s
            })
            .collect()
    }
}

pub fn make_schedule(kind: ScheduleKind, n_steps: usize, t_final: f64, eps: f64) -> Result<TimeSchedule> {
    if n_steps == 0 {
        return Err(CldError::InvalidArgument("n_steps must be at least 1".into()));
    }
    if !(eps >= 0.0 && eps < t_final) {
        return Err(CldError::InvalidArgument(format!("eps {eps} outside [0, {t_final})")));
    }
    let span = t_final - eps;
    let n = n_steps as f64;
    let steps = match kind {
        ScheduleKind::Uniform => vec![span / n; n_steps],
        ScheduleKind::Quadratic => {
            let c = span / (n * n);
            (1..=n_steps)
                .map(|j| c * (2.0 * (n - j as f64) + 1.0))
                .collect()
        }
    };
    Ok(TimeSchedule {
        kind,
        n_steps,
        t_final,
        eps_cutoff: eps,
        steps,
    })
}
