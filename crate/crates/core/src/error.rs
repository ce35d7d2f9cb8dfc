use thiserror::Error;

/// Failures raised by the numerical core.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not positive definite (pivot {pivot:e} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("symmetric eigenvalue iteration did not converge after {sweeps} sweeps")]
    ConvergenceFailure { sweeps: usize },

    #[error("conjugate gradient breakdown: p'Ap = {curvature:e}, operator is not SPD")]
    Breakdown { curvature: f64 },

    #[error("dense operation of size {size} exceeds the cap of {cap}")]
    SizeCap { size: usize, cap: usize },

    #[error("sigma matrix is singular even after ridge regularization")]
    SingularSigma,

    #[error("Sherman-Morrison denominator {0:e} is not positive")]
    DenominatorNonpositive(f64),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, found })
    }
}
