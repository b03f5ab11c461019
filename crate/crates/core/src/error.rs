use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised across the pipeline.
///
/// `Validation` and `Load` describe bad inputs or configuration; everything
/// else is a runtime failure of a fit or computation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("{path}: row {row}, column `{column}`: {message}")]
    Load {
        path: String,
        row: usize,
        column: String,
        message: String,
    },

    #[error("design matrix is rank deficient ({rank} < {columns} columns); rebuild the design so collinear columns are dropped")]
    RankDeficient { rank: usize, columns: usize },

    #[error("{solver} did not converge after {iterations} iterations (last change {last_change:.3e})")]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        last_change: f64,
    },

    #[error("column layout mismatch: {0}")]
    ColumnMismatch(String),

    #[error("infeasible generator config: {0}")]
    Infeasible(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Corrupt { path: PathBuf, message: String },
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the caller's inputs rather than a failed computation.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_) | Error::Load { .. } | Error::Infeasible(_)
        )
    }
}
