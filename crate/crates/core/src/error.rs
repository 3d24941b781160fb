use thiserror::Error;

/// Errors raised by the diffusion toolkit.
#[derive(Debug, Error)]
pub enum CldError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("cholesky factorization failed: {0}")]
    Factorization(String),
    #[error("singular covariance: {0}")]
    Singular(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("ode solver failure: {0}")]
    Ode(String),
    #[error("training diverged at step {step}: {msg}")]
    Diverged { step: usize, msg: String },
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CldError>;
