use thiserror::Error;

use crate::qp::QpError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),

    #[error("simulation diverged at sample {sample} (|y| = {magnitude:e})")]
    Diverged { sample: usize, magnitude: f64 },

    #[error(
        "sensitivity {index}: truncation at n = {n} discards {fraction:e} of the impulse-response energy{}",
        match suggested { Some(s) => format!("; use n >= {s}"), None => ", and the response does not decay".to_string() }
    )]
    Truncation {
        index: usize,
        n: usize,
        fraction: f64,
        suggested: Option<usize>,
    },

    #[error("application-cost Hessian has negative curvature (min eigenvalue {min_eigenvalue:e}); review the application scenario")]
    NegativeCurvature { min_eigenvalue: f64 },

    #[error(transparent)]
    Qp(#[from] QpError),
}

pub type Result<T> = std::result::Result<T, Error>;
