//! Error type shared by every module of the crate.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid parameters or transforms (singular geotransform, window larger than image, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Two or more grids have no pixel in common.
    #[error("empty overlap: {0}")]
    EmptyOverlap(String),

    /// Grids differ in pixel size, rotation or sub-pixel phase.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("shape error: {0}")]
    Shape(String),

    /// A value lies outside the domain an operation accepts.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed input vector or raster data.
    #[error("ingestion error: {0}")]
    Ingestion(String),

    /// Corrupt or truncated binary container.
    #[error("format error: {0}")]
    Format(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by reading or decoding files rather than by bad parameters.
    pub fn is_io_or_format(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::Format(_) | Error::Json(_) | Error::Ingestion(_)
        )
    }
}
