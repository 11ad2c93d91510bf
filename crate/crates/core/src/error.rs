use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("self-link undefined: pixel {0} paired with itself")]
    SelfLink(usize),

    #[error("pixel index {index} out of range 1..={count}")]
    PixelOutOfRange { index: usize, count: usize },

    #[error("link index {index} out of range 1..={count}")]
    LinkOutOfRange { index: u64, count: u64 },

    #[error("coincident endpoints: window weight is singular at phi1 = 0")]
    CoincidentEndpoints,

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("step too large: {step} exceeds bound {bound}")]
    StepTooLarge { step: f64, bound: f64 },

    #[error("no batches processed yet")]
    NoBatches,

    #[error("NMSE undefined: reference vector is all zero")]
    NmseUndefined,

    #[error("divergence detected: {0}")]
    Divergence(String),

    #[error("reference-coefficient solve did not converge (residual {residual:.3e}); increase the regularization")]
    IllConditioned { residual: f64 },

    #[error("empty source: {0}")]
    EmptySource(&'static str),

    #[error("coordinate ({x}, {y}) of record {record} lies outside the grid")]
    OutOfGrid { record: usize, x: f64, y: f64 },

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn dim(context: &'static str, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            actual,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidParameter { .. } => 2,
            Error::Divergence(_) | Error::IllConditioned { .. } | Error::StepTooLarge { .. } => 4,
            _ => 3,
        }
    }
}
