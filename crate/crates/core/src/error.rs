use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("record {id} at ({s1}, {s2}) lies outside the grid bounds")]
    OutsideGrid { id: String, s1: f64, s2: f64 },

    #[error("operator row {row} has all-zero weights")]
    ZeroWeightRow { row: usize },

    #[error("operator was built on different locations than the dataset")]
    FingerprintMismatch,

    #[error("design matrix is rank deficient; collinear columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{failed} of {total} bootstrap refits failed")]
    BootstrapFailures { failed: usize, total: usize },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from bad user input rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Csv(_)
                | Error::Json(_)
                | Error::Parse { .. }
                | Error::Invalid(_)
                | Error::Domain(_)
                | Error::OutsideGrid { .. }
                | Error::FingerprintMismatch
        )
    }
}
