use thiserror::Error;

/// Errors produced by the covariance conversion library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid direction: azimuth {azimuth} rad, zenith {zenith} rad")]
    InvalidDirection { azimuth: f64, zenith: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("angular grid mismatch")]
    GridMismatch,

    #[error("matrix is not Hermitian (defect {defect:e})")]
    NotHermitian { defect: f64 },

    #[error("matrix violates the UPA block structure (max violation {violation:e}, tolerance {tolerance:e})")]
    StructureViolation { violation: f64, tolerance: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// `line` is 1-based; 0 marks settings that did not come from a file line.
    #[error("config error{}: {message}", at_line(*.line))]
    Config { line: usize, message: String },

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn at_line(line: usize) -> String {
    if line == 0 {
        String::new()
    } else {
        format!(" at line {line}")
    }
}

pub type Result<T> = std::result::Result<T, Error>;
