//! Critically-damped Langevin diffusion at toy scale.
//!
//! Closed-form forward kernels, exact mixture scores, reverse-time samplers
//! (Euler–Maruyama, symmetric splitting, probability flow), score-matching
//! objectives with variance reduction and a small trainable score network.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::too_many_arguments)]

pub mod error;
pub mod experiments;
pub mod kernels;
pub mod mixtures;
pub mod objectives;
pub mod probflow;
pub mod rng;
pub mod samplers;
pub mod scorenet;
pub mod stats;

pub use error::{CldError, Result};
pub use kernels::{CholFactor, CldParams, PerDimKernel};
pub use mixtures::{nine_gaussians, DiffusedJointMixture, GaussianMixture, VpsdeParams};
pub use samplers::{
    make_schedule, DataScore, MixtureScore, ScheduleKind, StateBatch, TimeSchedule, VelocityScore,
};
pub use stats::MeanSe;
