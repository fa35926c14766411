use thiserror::Error;

/// Errors raised by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("degenerate gradient of psi at boundary point {point:?} (|grad| = {norm:e})")]
    DegenerateGradient { point: Vec<f64>, norm: f64 },

    #[error("non-finite value from {what} at {point:?}")]
    NonFinite { what: String, point: Vec<f64> },

    #[error("projection did not converge after {iterations} iterations (residual {residual:e})")]
    ProjectionNoConvergence {
        iterations: usize,
        residual: f64,
        last: Vec<f64>,
    },

    #[error("Newton diverged in implicit penalty step: gamma = {gamma}, step {step}, residual {residual:e}")]
    NewtonDivergence {
        gamma: f64,
        step: usize,
        residual: f64,
    },

    #[error("initial state {0:?} is not in C0")]
    InitialStateNotInC0(Vec<f64>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("solver did not converge: {0}")]
    NotConverged(String),

    #[error("all multistart solves failed: {0:?}")]
    AllStartsFailed(Vec<String>),

    #[error("complementarity schedule incomplete: {0}")]
    IncompleteSchedule(String),

    #[error("degenerate normalization: all multiplier components below {0:e}")]
    DegenerateNormalization(f64),

    #[error("unknown problem '{0}'")]
    UnknownProblem(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn ensure_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        });
    }
    Ok(())
}

pub(crate) fn ensure_finite(what: &str, point: &[f64], values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what: what.to_string(),
            point: point.to_vec(),
        })
    }
}
