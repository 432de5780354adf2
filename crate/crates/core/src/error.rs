use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("matrix is not orthogonal: ||R^T R - I||_max = {deviation:e}")]
    NotOrthogonal { deviation: f64 },

    #[error("matrix is not symmetric: max |A - A^T| = {asymmetry:e}")]
    NotSymmetric { asymmetry: f64 },

    #[error("{what} is near-singular: lambda_min = {lambda_min:e}; retry with jitter >= {suggested_jitter:e} or allow near-singular solves")]
    NearSingular {
        what: &'static str,
        lambda_min: f64,
        suggested_jitter: f64,
    },

    #[error("gradient descent diverged at step {step}: residual {residual:e} exceeds 1e3 x initial {initial:e}")]
    Diverged {
        step: usize,
        residual: f64,
        initial: f64,
    },

    #[error("explicit matrix needs {required} entries, budget is {budget}")]
    MemoryBudget { required: usize, budget: usize },

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("integrity error: {file} has hash {found}, manifest records {expected}")]
    Integrity {
        file: String,
        expected: String,
        found: String,
    },

    #[error("no manifest found in {0}")]
    NoManifest(PathBuf),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
