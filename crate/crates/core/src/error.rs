//! Error type shared across the crate.

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// Grid dimensions do not match what an operation requires.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An argument violates a documented precondition.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// Input is degenerate (all-zero reference, empty aperture, ...).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// An iterative solver failed to converge. The best iterate seen is
    /// retained by the caller-specific payload where applicable.
    #[error("non-convergence in {context}: residual {residual}")]
    NonConvergence { context: String, residual: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    /// Malformed raster file (PFM header, payload size, ...).
    #[error("raster format error: {0}")]
    Raster(String),
}

impl Error {
    /// Process exit code for the CLI: 2 config/parameter, 3 numerical
    /// non-convergence, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Dimension(_) | Error::Parameter(_) | Error::Degenerate(_) | Error::Json(_) => 2,
            Error::NonConvergence { .. } => 3,
            Error::Io(_) | Error::Raster(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
