//! Crate-wide error type.

use thiserror::Error;

use crate::sysid::IdentifiedModel;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid fault specification: {0}")]
    InvalidFault(String),

    #[error("simulation diverged: non-finite sample at step {step}")]
    Simulation { step: usize },

    /// Identification ran out of iterations. The best iterate found so far is
    /// attached so callers can still inspect or use it.
    #[error("identification did not converge after {iterations} iterations (objective {objective:.6e})")]
    IdentificationNonConvergence {
        iterations: usize,
        objective: f64,
        best: Box<IdentifiedModel>,
    },

    #[error("filter synthesis failed: {0}")]
    Synthesis(String),

    #[error("signal grid mismatch: {0}")]
    GridMismatch(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("isolation solver failed: {0}")]
    Solver(String),

    #[error("malformed data: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
