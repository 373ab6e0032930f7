use thiserror::Error;

use crate::solver::SolverTrace;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("outside the operator domain: {detail} (cone margin {cone_margin:e}, F = {f_value:e})")]
    Domain {
        detail: String,
        cone_margin: f64,
        f_value: f64,
    },

    #[error("sampling budget exhausted after {attempts} attempts")]
    Sampling { attempts: usize },

    /// The linearized operator is undefined because an iterate left the admissible set.
    #[error("linearization undefined at grid point (t={}, x={}): {detail}", point.0, point.1)]
    Linearization {
        point: (usize, usize),
        margin: f64,
        detail: String,
    },

    #[error("newton stage stalled: step fell below the minimum damping")]
    Stall(Box<SolverTrace>),

    #[error("newton stage did not converge within the iteration budget")]
    NonConvergence(Box<SolverTrace>),

    #[error("linear solver failed: {0}")]
    LinearSolve(String),

    #[error("setup failed: {0}")]
    Setup(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Argument(msg.into()))
}
