//! Score-matching objectives and their variance-reduction machinery.

mod cv;
mod gradvar;
mod importance;
mod losses;
mod proposal;

pub use cv::{c_fid, c_ml, cv_gradient_study, cv_loss_fid, cv_loss_ml, CvGradientStudy, CvSample};
pub use gradvar::{grad_variance_study, GradVarPoint};
pub use importance::{is_weight, paper_mean_term, ImportanceModel, IsVariant, IsWeights};
pub use losses::{
    dsm_loss, hsm_dsm_offset, hsm_loss, perturb, Perturbed, KernelKind, LossSample, Weighting,
};
pub use proposal::TimeProposal;
