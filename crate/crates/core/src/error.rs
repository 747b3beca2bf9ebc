use std::fmt;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Diagnostics attached to a failed factorization.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericalDiagnostics {
    pub matrix_size: usize,
    /// Index of the pivot that went non-positive.
    pub failed_pivot: usize,
    pub pivot_value: f64,
    /// Largest jitter tried before giving up.
    pub jitter: f64,
    /// Ratio of the largest to the smallest accepted squared pivot; a cheap
    /// lower bound on the condition number of the factored matrix.
    pub condition_estimate: f64,
}

impl fmt::Display for NumericalDiagnostics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "pivot {} of {} was {:e} with jitter {:e} (condition >= {:e})",
            self.failed_pivot,
            self.matrix_size,
            self.pivot_value,
            self.jitter,
            self.condition_estimate
        )
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(NumericalDiagnostics),

    #[error("invalid state: {0}")]
    State(String),

    #[error("preference oracle failed: {0}")]
    Oracle(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for failures of the numerical kind (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NotPositiveDefinite(_))
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
