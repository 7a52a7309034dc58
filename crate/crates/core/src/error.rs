use thiserror::Error;

use crate::solver::SolveResult;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("field does not live on this grid")]
    GridMismatch,

    #[error("norm not equivalent: lambda = {lambda} must exceed {bound}")]
    NormNotEquivalent { lambda: f64, bound: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{what} did not converge after {iterations} iterations")]
    Convergence { what: &'static str, iterations: usize },

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("projection leaves positive orthant (group {group})")]
    ProjectionLeavesOrthant { group: usize },

    #[error("scaling system is numerically singular")]
    SingularScaling,

    /// Carries the best iterate reached before the iteration cap.
    #[error(
        "minimization did not converge after {} iterations (gradient residual {:.3e})",
        .0.iterations,
        .0.grad_residual
    )]
    NonConvergence(Box<SolveResult>),

    #[error("truncation error: {0}")]
    Truncation(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
