use thiserror::Error;

/// Errors produced anywhere in the planning stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(&'static str),

    #[error("constraint gradient is singular (norm {norm:e})")]
    SingularGradient { norm: f64 },

    #[error("projection did not converge in {iterations} iterations (residual {residual:e})")]
    ProjectionFailed { iterations: usize, residual: f64 },

    #[error("degenerate point: constraint jacobian is rank deficient")]
    DegeneratePoint,

    #[error("atlas is full ({0} charts)")]
    ChartCapacity(usize),

    #[error("sampling failed after {0} attempts")]
    SamplingFailed(usize),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("scene generation failed: {0}")]
    Generation(String),

    #[error("invalid file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
