use thiserror::Error;

/// Errors raised by the regularization library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid tableau: {0}")]
    InvalidTableau(String),

    /// The fixed-point stage solve did not reach `stage_tol` within the iteration budget.
    #[error("stage iteration did not converge after {iterations} iterations (last update {last_update:.3e})")]
    StageNonconvergence { iterations: usize, last_update: f64 },

    #[error("config error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
