use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch, expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error(transparent)]
    Fixture(#[from] FixtureError),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Shape {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failures while decoding a scene fixture file.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum FixtureError {
    #[error("bad magic: expected \"SRRM\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported fixture version {0}")]
    UnsupportedVersion(u16),
    #[error("fixture truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("invalid fixture contents: {0}")]
    Invalid(String),
    #[error("{0} trailing bytes after checksum")]
    TrailingBytes(usize),
}

/// Failures while decoding a parameter checkpoint.
#[derive(Debug, Error, PartialEq, Eq)]
pub enum CheckpointError {
    #[error("checkpoint truncated at byte {0}")]
    Truncated(usize),
    #[error("invalid parameter name at byte {0}")]
    BadName(usize),
    #[error("entry {name}: shape {shape:?} does not match {count} stored values")]
    CountMismatch {
        name: String,
        shape: Vec<usize>,
        count: usize,
    },
    #[error("duplicate parameter {0}")]
    Duplicate(String),
    #[error("missing parameter {0}")]
    Missing(String),
}
