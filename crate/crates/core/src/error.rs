use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A value or shape failed a contract check.
    #[error("invalid {field}: {reason}")]
    Validation { field: String, reason: String },

    /// An executed action left its constraint domain.
    #[error("region {region} {row} action violates its simplex constraint: {reason}")]
    ConstraintViolation {
        region: usize,
        row: &'static str,
        reason: String,
    },

    #[error("dykstra projection did not converge after {iterations} cycles (residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        last_iterate: Vec<f64>,
    },

    /// NaN or infinity reached a loss or gradient.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("parse error in {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn validation(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad input rather than runtime numerics.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation { .. } | Error::Parse { .. } | Error::ConstraintViolation { .. }
        )
    }
}
