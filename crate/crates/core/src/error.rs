use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid rotation: {0}")]
    InvalidRotation(String),

    #[error("invalid scale: {0}")]
    InvalidScale(String),

    #[error("invalid primitive {index}: {reason}")]
    InvalidPrimitive { index: usize, reason: String },

    #[error("unsupported spherical-harmonics degree {0} (supported: 0..=3)")]
    UnsupportedDegree(usize),

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("PLY format error: {0}")]
    Format(String),

    #[error("non-finite value in primitive {index}: {field}")]
    NonFiniteData { index: usize, field: String },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("no depth at pixel ({x}, {y})")]
    NoDepth { x: usize, y: usize },

    #[error("empty mask")]
    EmptyMask,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("no consensus: {0}")]
    NoConsensus(String),

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("no covered masked pixels in any view")]
    NoSignal,

    #[error("registration failed during {stage}: {reason}")]
    RegistrationFailed { stage: String, reason: String },

    #[error("placement failed: {0}")]
    Placement(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Tags solver-side failures with the pipeline stage; I/O and validation errors pass through.
    pub fn registration(stage: &str, err: Error) -> Self {
        match err {
            e @ (Error::InsufficientData(_)
            | Error::NoConsensus(_)
            | Error::Degenerate(_)
            | Error::SolverFailure(_)
            | Error::NonFiniteLoss { .. }) => Error::RegistrationFailed {
                stage: stage.to_string(),
                reason: e.to_string(),
            },
            other => other,
        }
    }
}
