use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("{context} is not in the upper half plane (min eigenvalue of imaginary part {min_imag})")]
    NotUpperHalfPlane { context: &'static str, min_imag: f64 },

    #[error("polynomial is not selfadjoint (defect {defect:.3e})")]
    NotSelfAdjoint { defect: f64 },

    #[error("matrix is singular or numerically singular in {0}")]
    Singular(&'static str),

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("density never exceeds the support threshold")]
    EmptySupport,

    #[error("stability bound unavailable: kappa = {kappa:.3e}")]
    BoundUnavailable { kappa: f64 },

    #[error("parse error at byte {pos}: {msg}")]
    Parse { pos: usize, msg: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}
