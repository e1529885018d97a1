use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("invalid bounds at index {index}: lower {lower} must be < upper {upper}")]
    InvalidBounds { index: usize, lower: f64, upper: f64 },

    #[error("configuration outside bounds")]
    OutOfBounds,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch in layer {layer}: {detail}")]
    Shape { layer: String, detail: String },

    #[error("backward called on {0} without a cached forward pass")]
    NoForwardCache(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("empty success set: MDN update requires at least one label=1 sample")]
    EmptySuccessSet,

    #[error("degenerate covariance: {0}")]
    DegenerateCovariance(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("unknown object id {0}")]
    UnknownObject(u32),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(layer: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            layer: layer.into(),
            detail: detail.into(),
        }
    }
}
