use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
///
/// The variants group failures by who has to fix them: a bad configuration,
/// bad input data, an unsupported combination, or an I/O problem.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("index {index} out of range for {len} items")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("wrong Gram mode: {0}")]
    Mode(String),

    #[error("generation failed at {context}: {reason}")]
    Generation { context: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("image {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("{failed} of {total} replications failed for {param} (limit {limit})")]
    ExcessFailures {
        param: String,
        failed: usize,
        total: usize,
        limit: usize,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code: 2 configuration, 3 data, 4 too many failed
    /// replications.
    pub fn exit_code(&self) -> i32 {
        match self {
            e if e.is_config() => 2,
            Error::ExcessFailures { .. } => 4,
            _ => 3,
        }
    }

    /// True for errors caused by configuration rather than data.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Unsupported(_) | Error::Mode(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
