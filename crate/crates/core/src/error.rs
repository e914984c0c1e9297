use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter or input violated its documented invariant. `field` names
    /// the offending quantity (e.g. `bounce.e`).
    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },

    #[error("invalid depth {0} m: depth must be positive")]
    InvalidDepth(f64),

    #[error("point is behind the camera (Z = {0} m)")]
    BehindCamera(f64),

    #[error("track is empty")]
    NoTrack,

    #[error("timestamp {got} s is not after the last processed timestamp {last} s")]
    Ordering { last: f64, got: f64 },

    #[error("innovation covariance is degenerate (condition number {0:e})")]
    DegenerateCovariance(f64),

    #[error("{path}: {message}")]
    Io { path: String, message: String },

    /// Malformed configuration text, with a 1-based position.
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

/// Rejects non-finite values with a validation error naming `field`.
pub(crate) fn ensure_finite(field: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::validation(field, "must be finite"))
    }
}
