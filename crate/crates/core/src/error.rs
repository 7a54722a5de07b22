use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the library and the `asobo` binary.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error(
        "noise coherence at bin {bin} ({freq_hz} Hz) is not positive definite; increase diagonal loading"
    )]
    SingularCoherence { bin: usize, freq_hz: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("incompatible artifact: {0}")]
    Incompatible(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 for bad input, 3 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::SingularCoherence { .. } | Error::Numeric(_) => 3,
            _ => 2,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
