use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("cannot normalize a zero-length vector")]
    ZeroVector,

    #[error("invalid box ({x1}, {y1}, {x2}, {y2})")]
    InvalidBox { x1: f64, y1: f64, x2: f64, y2: f64 },

    #[error("box ({x1}, {y1}, {x2}, {y2}) lies outside image {image_id} of size {width}x{height}")]
    BoxOutOfBounds {
        image_id: u64,
        width: u32,
        height: u32,
        x1: f64,
        y1: f64,
        x2: f64,
        y2: f64,
    },

    #[error("unknown vector id {0}")]
    UnknownVector(u64),

    #[error("unknown image id {0}")]
    UnknownImage(u64),

    #[error("image {0} has not been shown in this session")]
    UnseenImage(u64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("ingestion rejected {record}: {reason}")]
    Ingest { record: String, reason: String },

    #[error("malformed database file {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("embedding at row {row} (vector {vector_id}) is not unit norm (norm {norm})")]
    NotUnitNorm { row: usize, vector_id: u64, norm: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
