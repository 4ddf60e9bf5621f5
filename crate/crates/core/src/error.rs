use thiserror::Error;

/// Errors raised by the optimizer and its building blocks.
#[derive(Debug, Error)]
pub enum CctoError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("design matrix is rank deficient at step {step}; use a ridge weight > 0")]
    RankDeficient { step: usize },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("covariance is not positive semidefinite: {0}")]
    NotPsd(String),

    #[error("backward pass diverged (regularization {mu:e} exceeded 1e80)")]
    Diverged { mu: f64 },

    #[error("{failed} of {total} rollouts produced non-finite states")]
    RolloutFailures { failed: usize, total: usize },

    #[error("risk level {0} outside (0, 0.5); the erf-inverse relaxation requires it")]
    RiskLevel(f64),

    #[error("erf_inv argument {0} outside the open interval (-1, 1)")]
    Domain(f64),

    #[error("environment {env} produced a non-finite state from s = {state:?}, a = {action:?}")]
    EnvironmentNonFinite {
        env: String,
        state: Vec<f64>,
        action: Vec<f64>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CctoError>;
