use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input component at index {0}")]
    NonFiniteInput(usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("abstraction has not completed warm-up ({seen}/{required} samples)")]
    WarmupIncomplete { seen: u64, required: u64 },
    #[error("weight-change window means require two full windows")]
    WindowsNotReady,
    #[error("singular covariance in batch slow-feature solve")]
    SingularCovariance,
    #[error("iteration budget exhausted")]
    BudgetExhausted,
    #[error("viewport index {0} out of range (have {1})")]
    ViewportOutOfRange(usize, usize),
    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
