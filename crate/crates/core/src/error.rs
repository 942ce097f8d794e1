use thiserror::Error;

/// Errors produced by instance construction, evaluation and the solvers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("instance generation failed after {attempts} attempts: {reason}")]
    GenerationFailed { attempts: usize, reason: String },

    #[error("probe set is empty")]
    EmptyProbeSet,

    #[error("probe point {index} has norm {norm} outside the radius-{radius} ball")]
    ProbeOutsideBall { index: usize, norm: f64, radius: f64 },

    #[error("C matrix is rank deficient at the reference point (sigma_min = {sigma_min})")]
    RankDeficient { sigma_min: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPd(String),

    #[error("all leverage scores vanish; C is degenerate")]
    DegenerateC,

    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("index ({i}, {j}) out of range for dimension {d}")]
    IndexOutOfRange { i: usize, j: usize, d: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
