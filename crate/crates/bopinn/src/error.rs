//! Error type shared across the crate.

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A coordinate or parameter fell outside its admissible domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// An input value was structurally invalid (empty, mismatched, zero power, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A configuration value could not be honored (bad layer list, bad option).
    #[error("configuration error: {0}")]
    Config(String),

    /// A computation produced a non-finite value; the message identifies the term.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// The Gaussian-process covariance stayed non-positive-definite after
    /// jitter escalation.
    #[error("singular model: {0}")]
    SingularModel(String),

    /// A target-function evaluation failed; carries the queried wave speed.
    #[error("target evaluation failed at c = {c}: {source}")]
    TargetEval {
        c: f64,
        #[source]
        source: Box<Error>,
    },

    /// File I/O failure, annotated with the path involved.
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A file had the right path but the wrong contents.
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

impl Error {
    /// Attach a path to a raw I/O error.
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
