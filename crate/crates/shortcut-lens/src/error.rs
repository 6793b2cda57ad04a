//! Crate-wide error type.
//!
//! Errors are split by phase so the CLI can map them to exit codes:
//! configuration/validation problems (exit 2) versus runtime failures
//! (exit 1). See [`Error::is_config`].

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration or arguments, detected before any compute.
    #[error("config: {0}")]
    Config(String),

    /// I/O failure with the offending path attached.
    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A data file exists but its contents are malformed.
    #[error("data format: {path}: {detail}")]
    DataFormat { path: PathBuf, detail: String },

    /// Shape or size mismatch between arrays/batches.
    #[error("shape: {0}")]
    Shape(String),

    /// A checkpoint container is missing, malformed, or incompatible.
    #[error("checkpoint: {0}")]
    Checkpoint(String),

    /// Training produced a non-finite loss; carries the first offending
    /// example index within the batch for diagnosis.
    #[error("non-finite loss at step {step}: {loss} (first bad example index {example})")]
    NonFiniteLoss {
        step: u64,
        loss: f64,
        example: usize,
    },

    /// Operation is not defined for the requested combination
    /// (e.g. least-likely adversarial mode with a non-classification task).
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A statistic has no defined value on this input
    /// (e.g. correlation of a constant series).
    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// True for errors that indicate a bad config/invocation rather than a
    /// failure while doing the work.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::Unsupported(_))
    }
}
