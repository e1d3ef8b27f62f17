//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (distribution parameters, model shapes, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A file could not be parsed; `line` is 1-based.
    #[error("parse error in {path} at line {line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// Input data violates a precondition (empty corpus, missing codes, ...).
    #[error("data error: {0}")]
    Data(String),

    /// A token stream violates the timeline grammar; `position` is 0-based.
    #[error("grammar error at position {position}: {msg}")]
    Grammar { position: usize, msg: String },

    /// No visit exists on or before the requested cutoff.
    #[error("empty history: no visit on or before the cutoff")]
    EmptyHistory,

    /// Numeric failure (non-finite loss or gradient, divergence).
    #[error("numeric error: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
