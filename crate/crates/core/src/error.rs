use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Parameters that can never describe a valid object (bad counts, bounds, weights).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Input that is well-formed but violates an invariant (index range, shape mismatch).
    #[error("validation failed: {0}")]
    Validation(String),

    #[error("degenerate element {element}: volume {volume:e} below tolerance {tolerance:e}")]
    DegenerateElement {
        element: usize,
        volume: f64,
        tolerance: f64,
    },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    /// The reduced stiffness system cannot be factorized.
    #[error("singular system: {0}")]
    Singular(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn from_json(err: serde_json::Error) -> Self {
        if err.is_io() {
            return Error::Io(err.into());
        }
        Error::Parse {
            line: err.line(),
            column: err.column(),
            message: err.to_string(),
        }
    }
}
