use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    /// A cell that does not parse as a finite number. `row` is 1-based over
    /// data rows (the header is not counted).
    #[error("row {row}, column '{column}': cannot parse '{value}' as a finite number")]
    BadCell { row: usize, column: String, value: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch { context: &'static str, expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("matrix is not positive definite (pivot {index} = {pivot:e})")]
    NotPositiveDefinite { index: usize, pivot: f64 },

    #[error("normal matrix is singular (condition estimate {condition:e})")]
    Singular { condition: f64 },

    #[error("KKT system is singular (numerical rank {rank} of {size})")]
    SingularKkt { rank: usize, size: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}; parameters restored to the last finite state")]
    Diverged { epoch: usize },

    #[error("{0}")]
    Numerical(String),
}

impl Error {
    /// Failures caused by the numerics rather than by the caller's input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::Singular { .. }
                | Error::SingularKkt { .. }
                | Error::NonFinite(_)
                | Error::Diverged { .. }
                | Error::Numerical(_)
        )
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { context, expected, found })
    }
}
