use std::fmt;

use thiserror::Error;

/// Spatial axis named in divisibility errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Height,
    Width,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Axis::Height => f.write_str("height"),
            Axis::Width => f.write_str("width"),
        }
    }
}

#[derive(Debug, Error)]
pub enum SaakError {
    #[error("{axis} {size} is not divisible by block side {block}")]
    NotDivisible { axis: Axis, size: usize, block: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("length mismatch: expected {expected} values, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("eigensolver did not converge after {iterations} iterations (off-diagonal residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("stage {stage}: eigenvalue {value:e} is negative beyond tolerance")]
    NegativeEigenvalue { stage: usize, value: f64 },

    #[error("stage {stage}: {reason}")]
    Incompatible { stage: usize, reason: String },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid filter: {0}")]
    InvalidFilter(String),

    #[error("invalid file format: {0}")]
    Format(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("non-finite loss at epoch {0}")]
    NonFiniteLoss(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{}: {source}", path.display())]
    File {
        path: std::path::PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SaakError>;
