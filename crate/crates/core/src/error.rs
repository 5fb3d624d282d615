use std::path::PathBuf;

/// Errors raised by the streaming engine and its supporting modules.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("grid shape mismatch: expected {expected_tokens}x{expected_dim}, got {actual_tokens}x{actual_dim}")]
    ShapeMismatch {
        expected_tokens: usize,
        expected_dim: usize,
        actual_tokens: usize,
        actual_dim: usize,
    },

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("non-finite value at position {0}")]
    NonFinite(usize),

    #[error("need at least {needed} tokens, grid has {actual}")]
    TooFewTokens { needed: usize, actual: usize },

    #[error("frame timestamp {actual} out of order, expected {expected}")]
    OutOfOrder { expected: u64, actual: u64 },

    #[error("token budget {budget} cannot hold an item of {tokens} tokens")]
    BudgetUnsatisfiable { budget: usize, tokens: usize },

    #[error("malformed stream record {index}: {reason}")]
    MalformedRecord { index: usize, reason: String },

    #[error("query timestamp {timestamp} is past the end of the stream (last frame {last:?})")]
    QueryOutOfRange { timestamp: u64, last: Option<u64> },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("missing input file {0}")]
    MissingInput(PathBuf),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
