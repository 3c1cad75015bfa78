use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// The approximation bound only holds when `gamma * S_P < 1`.
    #[error("bound inapplicable: gamma * S_P = {gamma_sp} >= 1")]
    BoundInapplicable { gamma_sp: f64 },

    #[error("operation requires an affine reward model (sigma = 1)")]
    AffineRequired,

    #[error("training diverged at outer iteration {outer}, inner step {inner}: non-finite update")]
    TrainingDivergence { outer: usize, inner: usize },

    #[error("|v_mf| = {v_mf:e} is too close to zero to form a percentage error")]
    DivisionGuard { v_mf: f64 },

    #[error("io error on {path}: {source}")]
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
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        });
    }
    Ok(())
}
