use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("columns are not orthonormal (max deviation {deviation:.3e})")]
    NotOrthonormal { deviation: f64 },

    #[error("direction is not tangent to the base point (max |H^T Y| = {deviation:.3e})")]
    NotTangent { deviation: f64 },

    #[error("curvature requires a positive time, got {0}")]
    NonpositiveTime(f64),

    #[error("initialization failed: {0}")]
    InitFailure(String),

    #[error("requested rank {requested} exceeds available rank {available}")]
    RankTooLarge { requested: usize, available: usize },

    #[error("knot interval {0} contains no samples")]
    EmptySegment(usize),

    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),

    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: PathBuf, reason: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    /// True for failures of the filesystem rather than of the inputs.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
