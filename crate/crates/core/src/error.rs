use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A layer received an input it cannot consume.
    #[error("layer {layer}: {message}")]
    Config { layer: usize, message: String },

    #[error("invalid input: {0}")]
    Input(String),

    /// Internal inconsistency between a forward cache and a backward call.
    #[error("internal error: {0}")]
    Internal(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("invalid domain spec: {0}")]
    Spec(String),

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
