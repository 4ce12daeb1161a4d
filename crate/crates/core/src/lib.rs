//! Spectral distributions of selfadjoint polynomials in GUE matrices and
//! deterministic matrices, via linearization and operator-valued
//! subordination.
//!
//! The pipeline is: parse or build a polynomial, linearize it into a
//! selfadjoint pencil, solve the matrix fixed point on a spectral grid,
//! and read the density off the Stieltjes transform. Monte Carlo drivers
//! in [`experiments`] check predictions against sampled matrices.

pub mod ensembles;
pub mod error;
pub mod experiments;
pub mod linalg;
pub mod pencil;
pub mod scenario;
pub mod stieltjes;
pub mod subordination;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
