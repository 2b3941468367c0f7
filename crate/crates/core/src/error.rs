use thiserror::Error;

/// Errors produced by the solver library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum MfgError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("invalid norm: {0}")]
    InvalidNorm(String),

    #[error("infinite-cost control: |q| = {norm} exceeds the admissible radius {limit}")]
    InfiniteCost { norm: f64, limit: f64 },

    #[error("nonconforming density: {0}")]
    NonconformingDensity(String),

    #[error("singular linear system: {0}")]
    SingularSystem(String),

    #[error("Hessian of H undefined at p = 0 for gamma < 2")]
    HessianUndefined,

    #[error("state/config mismatch: {0}")]
    StateMismatch(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("Newton iteration diverged at step {step}: residual grew for 3 consecutive steps")]
    Diverged { step: usize },

    #[error("Newton iteration requires a local coupling with a supplied derivative dF/dm")]
    LocalCouplingRequired,

    #[error("operation requires {0}")]
    WrongMode(&'static str),
}

pub type Result<T> = std::result::Result<T, MfgError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> MfgError {
    MfgError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}
