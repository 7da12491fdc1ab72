use thiserror::Error;

use crate::symcore::{EvalError, ParseError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error(
        "Newton iteration did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NotConverged { iterations: usize, residual: f64 },
    #[error("singular Hessian (|det| = {0:e})")]
    SingularHessian(f64),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("k-vector field is not second order (violation {0:e})")]
    NotSopde(f64),
    #[error("field is not tangent to the graph of the Legendre map (residual {0:e})")]
    NotTangent(f64),
    #[error("section lacks {0} derivative data")]
    MissingDerivatives(&'static str),
    #[error("wrong pathway: {0}")]
    WrongPathway(String),
    #[error("invalid input: {0}")]
    Invalid(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension { expected, found })
    }
}
