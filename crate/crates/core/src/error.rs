use std::io;

use thiserror::Error;

/// Errors produced anywhere in the engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {lhs} vs {rhs}")]
    Shape { lhs: String, rhs: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("degenerate metric: {0}")]
    Degenerate(String),

    #[error("non-finite value in {block}")]
    NonFinite { block: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn shape(lhs: impl Into<String>, rhs: impl Into<String>) -> Self {
        Error::Shape {
            lhs: lhs.into(),
            rhs: rhs.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
