//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible tensor shapes for an operation.
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A selection (masked positions, retrieval batch, ...) was empty where
    /// the operation requires at least one element.
    #[error("empty selection in {0}")]
    EmptySelection(&'static str),

    /// Invalid argument that is not a shape problem.
    #[error("{0}")]
    InvalidArgument(String),

    /// A non-finite value showed up where the pipeline cannot continue.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// Malformed line-delimited input, with the 1-based line number.
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    /// Configuration file or preset validation failure.
    #[error("config: {0}")]
    Config(String),

    /// Checkpoint serialization, versioning, or checksum failure.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
