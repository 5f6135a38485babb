use thiserror::Error;

/// Errors surfaced by construction, solvers, and diagnostics.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("size mismatch: {left} vs {right}")]
    SizeMismatch { left: usize, right: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("convexity check failed: {0}")]
    NotConvex(String),

    #[error("matrix not positive definite (pivot {pivot} at index {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("singular jacobian encountered during density bookkeeping")]
    SingularJacobian,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("inner loop diverged at iteration {iteration}: objective {objective:.3e} exceeded guard {threshold:.3e}")]
    Diverged {
        iteration: usize,
        objective: f64,
        threshold: f64,
    },

    #[error("instance too large for exhaustive search: n = {n}, max {max}")]
    TooLarge { n: usize, max: usize },

    #[error("snapshot format error: {0}")]
    BadSnapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
