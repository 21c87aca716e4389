use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    DimensionMismatch { expected: (usize, usize), found: (usize, usize) },

    #[error("Kronecker product would be {rows}x{cols}, above the {max} limit")]
    DimensionOverflow { rows: usize, cols: usize, max: usize },

    #[error("non-finite values in {0}")]
    NonFinite(&'static str),

    #[error("invalid Pauli specification {spec:?}: {reason}")]
    InvalidPauli { spec: String, reason: String },

    #[error("unsupported model: {0}")]
    UnsupportedModel(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("{what} index {index} out of range (limit {limit})")]
    IndexOutOfRange { what: &'static str, index: usize, limit: usize },

    #[error("span dimension would exceed {max_dim}")]
    MaxDimExceeded { max_dim: usize },

    #[error("ideal decomposition unstable: block dimensions {first:?} vs {second:?}")]
    DecompositionUnstable { first: Vec<usize>, second: Vec<usize> },

    #[error("word enumeration needs {needed} words, above the cap of {cap}")]
    WordOverflow { needed: u128, cap: u128 },

    #[error("Dyson order {order} exceeds the configured maximum {max}")]
    OrderTooHigh { order: usize, max: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("invalid target expression {expr:?}: {reason}")]
    InvalidExpression { expr: String, reason: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("training diverged at iteration {iteration}: loss {loss:e} exceeds {limit:e}")]
    Divergence { iteration: usize, loss: f64, limit: f64 },

    #[error("self-test failed: {0}")]
    SelfTest(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
