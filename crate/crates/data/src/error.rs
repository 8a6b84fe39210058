use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, DataError>;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic number in {what}: expected {expected:#010x}, found {found:#010x}")]
    BadMagic { what: String, expected: u32, found: u32 },

    #[error("truncated {what}: header promises {expected} bytes, file has {actual}")]
    Truncated { what: String, expected: usize, actual: usize },

    #[error("{images} images but {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    #[error("framing error in {what}: incomplete {record_len}-byte record at byte offset {offset}")]
    Framing { what: String, offset: usize, record_len: usize },

    #[error("label {label} out of range for {num_classes} classes in {what} at byte offset {offset}")]
    LabelOutOfRange {
        what: String,
        offset: usize,
        label: usize,
        num_classes: usize,
    },

    #[error("validation size {n_val} must be below dataset size {n}")]
    InvalidSplit { n_val: usize, n: usize },

    #[error("dataset not found: {0}")]
    NotFound(String),

    #[error(transparent)]
    Core(#[from] qagrel_core::Error),
}

impl DataError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}
