use thiserror::Error;

/// Errors raised by the problem oracles, feasible sets, solvers and metrics.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("oracle `{oracle}` returned a non-finite value")]
    NonFinite { oracle: String },

    #[error("invalid set: {0}")]
    InvalidSet(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("iterate diverged at k={k}: `{quantity}` is non-finite or exceeds the norm guard")]
    Divergence { k: usize, quantity: String },

    #[error("{solver} stopped after {iterations} iterations with residual {residual:e} > tol {tol:e}")]
    ToleranceNotMet {
        solver: &'static str,
        residual: f64,
        tol: f64,
        iterations: usize,
    },

    #[error("non-positive curvature encountered: {0}")]
    Coercivity(String),

    #[error("data error: {0}")]
    Data(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(context: &str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            context: context.to_string(),
            expected,
            got,
        })
    }
}

pub(crate) fn check_finite(oracle: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            oracle: oracle.to_string(),
        })
    }
}
