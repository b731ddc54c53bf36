use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum VsdeError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("insufficient data for {what}: got {got}, need at least {need}")]
    InsufficientData {
        what: &'static str,
        got: usize,
        need: usize,
    },

    #[error("power iteration did not converge after {iterations} iterations (last change {last_change:e})")]
    Convergence { iterations: usize, last_change: f64 },

    #[error("function evaluation failed: {0}")]
    Evaluation(String),

    #[error("degenerate monotone network: normalizing mass F(B) - F(A) = {mass:e}")]
    DegenerateNetwork { mass: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite gradient in parameter block `{block}`")]
    NonFiniteGradient { block: String },

    #[error("training failed at epoch {epoch}, batch {batch}: {source}")]
    Training {
        epoch: usize,
        batch: usize,
        #[source]
        source: Box<VsdeError>,
    },

    #[error("ensemble member {member}: {source}")]
    Member {
        member: usize,
        #[source]
        source: Box<VsdeError>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: row {row}, column `{column}`: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: String,
        message: String,
    },

    #[error("{path}: row {row}: label `{value}` is not 0 or 1")]
    InvalidLabel { path: PathBuf, row: usize, value: String },

    #[error("invalid format: {0}")]
    Format(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = VsdeError> = std::result::Result<T, E>;

impl VsdeError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        VsdeError::Io {
            path: path.into(),
            source,
        }
    }
}
