use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CbsError {
    #[error("every objective value is +inf, no particle carries weight")]
    AllInfinite,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix is not positive semidefinite (smallest eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },
    #[error("matrix is not symmetric positive definite")]
    NotSpd,
    #[error("matrix is numerically singular")]
    SingularMatrix,
    #[error("integration step rejected at t = {t}: covariance lost positive definiteness")]
    StepRejected { t: f64 },
    #[error("quadrature tails did not converge within the maximum window")]
    QuadratureFailure,
    #[error("fixed-point iteration did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("invalid ensemble: {0}")]
    InvalidEnsemble(String),
}

pub type Result<T> = std::result::Result<T, CbsError>;
