use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid range: lo ({lo}) must be below hi ({hi})")]
    InvalidRange { lo: f64, hi: f64 },

    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("empty input to {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("stale trace: recorded at network version {trace}, network is at {network}")]
    StaleTrace { trace: u64, network: u64 },

    #[error("trace mismatch: {0}")]
    TraceMismatch(String),

    #[error("dropout mask mismatch at layer {0}")]
    MaskMismatch(usize),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}
