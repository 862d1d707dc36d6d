//! Error type shared by every module in the crate.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller violated a documented precondition (bad range, bad size, ...).
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Two tensors that must agree in shape do not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A binary file is not in the expected format (magic or version).
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },

    /// A binary file has the right header but ends early or is inconsistent.
    #[error("corrupt file {path}: {message}")]
    Corrupt { path: PathBuf, message: String },

    /// A text line could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Structurally valid input with semantically invalid content.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A pipeline stage failed; wraps the cause with the 1-based iteration.
    #[error("pipeline iteration {iteration} failed: {source}")]
    Pipeline {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn at_iteration(self, iteration: usize) -> Self {
        Error::Pipeline {
            iteration,
            source: Box::new(self),
        }
    }
}
