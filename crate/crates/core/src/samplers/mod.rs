//! Reverse-time samplers, schedules and forward trajectory simulation.

mod cld;
mod damping;
mod schedule;
mod score;
mod vpsde;

pub use cld::{
    denoise, denoise_velocity, em_run_cld, em_step_cld, prior_batch, sscs_run, sscs_step,
    CldSampler, SamplerOptions,
};
pub use damping::{forward_trajectories, LangevinParams, MomentTrace, TrajectoryConfig};
pub use schedule::{make_schedule, ScheduleKind, TimeSchedule};
pub use score::{DataScore, FnVelocityScore, MixtureScore, StateBatch, VelocityScore, VpMixtureScore};
pub use vpsde::{ddim_run, ddim_step, vpsde_em_run, vpsde_prior};
