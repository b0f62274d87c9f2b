use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{format}: bad magic 0x{found:08x}")]
    BadMagic { format: &'static str, found: u32 },

    #[error("{format}: unsupported version {version}")]
    UnsupportedVersion { format: &'static str, version: u32 },

    #[error("{format}: truncated data (need {needed} bytes, have {available})")]
    Truncated {
        format: &'static str,
        needed: u64,
        available: u64,
    },

    #[error("{format}: malformed header: {msg}")]
    Header { format: &'static str, msg: String },

    #[error("image/label count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("architecture does not chain: {0}")]
    ShapeChain(String),

    #[error("missing trace record: {0}")]
    MissingRecord(String),

    #[error("layer kind mismatch: expected {expected}, got {got}")]
    KindMismatch {
        expected: &'static str,
        got: &'static str,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
