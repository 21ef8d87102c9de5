use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum MpError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("deletion capacity exhausted: {deletions} of {max_deletions} spent")]
    CapacityExhausted { deletions: u64, max_deletions: u64 },

    #[error("delete requires a nonempty curvature memory")]
    EmptyMemory,

    #[error("odometer is in {actual} mode, operation requires {required}")]
    WrongMode { required: &'static str, actual: &'static str },

    #[error("dimension {dim} exceeds dense materialization cap {cap}")]
    DenseCapExceeded { dim: usize, cap: usize },

    #[error("line {line}: malformed record: {msg}")]
    MalformedRecord { line: usize, msg: String },

    #[error("line {line}: {msg}")]
    StreamValidation { line: usize, msg: String },

    #[error("offline solver failed to converge after {iters} iterations (residual {residual:.3e})")]
    NonConvergence { iters: usize, residual: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MpError>;
