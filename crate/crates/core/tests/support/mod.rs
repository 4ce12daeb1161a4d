//! Random cases and property checks shared by the property suite and the
//! acceptance runner.
#![allow(dead_code)]

use freespec::linalg::{op_norm, partial_trace, resolvent, BlockOperator, CMatrix, HermMatrix};
use freespec::pencil::Pencil;
use freespec::stieltjes::DeterministicModel;
use freespec::subordination::{Readout, SolverConfig, Subordination};
use freespec::C64;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

fn from_entries(k: usize, v: &[f64], scale: f64) -> CMatrix {
    CMatrix::from_fn(k, k, |i, j| C64::new(v[2 * (i * k + j)], v[2 * (i * k + j) + 1]) * scale)
}

pub fn herm(k: usize, scale: f64) -> impl Strategy<Value = HermMatrix> {
    prop::collection::vec(-1.0..1.0f64, 2 * k * k).prop_map(move |v| HermMatrix::symmetrize(from_entries(k, &v, scale)))
}

/// `A + i (B B^* + floor)` with `A` Hermitian.
pub fn upper_half(k: usize, floor: f64) -> impl Strategy<Value = CMatrix> {
    (herm(k, 2.0), prop::collection::vec(-1.0..1.0f64, 2 * k * k)).prop_map(move |(a, v)| {
        let b = from_entries(k, &v, 1.0);
        let pos = &(&b * &b.adjoint()) + &CMatrix::scalar(k, C64::new(floor, 0.0));
        a.as_cmatrix() + &pos.scale(C64::new(0.0, 1.0))
    })
}

#[derive(Clone, Debug)]
pub struct ResolventCase {
    pub lambda: CMatrix,
    pub z: BlockOperator,
}

pub fn resolvent_case() -> impl Strategy<Value = ResolventCase> {
    (1..=3usize, 1..=4usize).prop_flat_map(|(k, n)| {
        (upper_half(k, 0.05), herm(k * n, 3.0)).prop_map(move |(lambda, z)| ResolventCase {
            lambda,
            z: BlockOperator::new(k, n, z.into_cmatrix()).unwrap(),
        })
    })
}

/// `||(Lambda (x) 1 - z)^{-1}|| <= ||(Im Lambda)^{-1}||`.
pub fn check_resolvent_bound(c: &ResolventCase) -> Result<(), TestCaseError> {
    let h = resolvent(&c.lambda, &c.z).map_err(|e| TestCaseError::fail(e.to_string()))?;
    let im_inv = freespec::linalg::imag_part(&c.lambda).as_cmatrix().inverse().unwrap();
    let bound = op_norm(&im_inv);
    let norm = op_norm(h.matrix());
    prop_assert!(norm <= bound * (1.0 + 1e-9), "norm {norm} > bound {bound}");
    // The partial trace inherits the bound.
    prop_assert!(op_norm(&partial_trace(&h)) <= bound * (1.0 + 1e-9));
    Ok(())
}

#[derive(Clone, Debug)]
pub struct PencilCase {
    pub pencil: Pencil,
    /// Symmetric two-point diagonals `diag(v, -v)`.
    pub model: DeterministicModel,
    pub lambda: CMatrix,
    pub warm: CMatrix,
    pub y: f64,
}

pub fn pencil_case() -> impl Strategy<Value = PencilCase> {
    (1..=2usize, 1..=2usize, 0..=1usize).prop_flat_map(|(k, p, q)| {
        (
            herm(k, 1.0),
            prop::collection::vec(herm(k, 0.7), p),
            prop::collection::vec(herm(k, 1.0), q),
            prop::collection::vec(0.2..2.0f64, q),
            upper_half(k, 0.1),
            upper_half(k, 0.1),
            0.0..1.0f64,
        )
            .prop_map(|(a0, a, b, vs, lambda, w, y)| {
                let matrices = vs.iter().map(|&v| HermMatrix::from_real_diag(&[v, -v])).collect();
                PencilCase {
                    pencil: Pencil::new(a0, a, b).unwrap(),
                    model: DeterministicModel::Empirical { matrices },
                    lambda,
                    warm: w.adjoint(),
                    y,
                }
            })
    })
}

fn fail(e: freespec::Error) -> TestCaseError {
    TestCaseError::fail(e.to_string())
}

fn max_imag_eigenvalue(m: &CMatrix) -> f64 {
    *freespec::linalg::imag_part(m).eigenvalues().unwrap().last().unwrap()
}

/// The solution lies in the lower half-plane and solves the equation.
pub fn check_half_plane(c: &PencilCase) -> Result<(), TestCaseError> {
    let problem = Subordination::new(&c.pencil, &c.model).map_err(fail)?;
    let sol = problem.solve_continuation(&c.lambda, &SolverConfig::default()).map_err(fail)?;
    prop_assert!(sol.converged, "residual {}", sol.residual);
    let top = max_imag_eigenvalue(&sol.g);
    prop_assert!(top < 0.0, "Im G has eigenvalue {top}");
    Ok(())
}

/// Different starting points reach the same fixed point.
pub fn check_uniqueness(c: &PencilCase) -> Result<(), TestCaseError> {
    let problem = Subordination::new(&c.pencil, &c.model).map_err(fail)?;
    let cfg = SolverConfig::default();
    let a = problem.solve_continuation(&c.lambda, &cfg).map_err(fail)?;
    let b = problem.solve_point(&c.lambda, &cfg, Some(&c.warm)).map_err(fail)?;
    prop_assert!(a.converged && b.converged);
    let d = a.g.max_abs_diff(&b.g);
    prop_assert!(d <= 1e-8 * a.g.max_abs().max(1.0), "solutions differ by {d}");
    Ok(())
}

/// `|i y g(i y) - 1| <= 2 R^2 / y^2` for a centered spectrum inside `[-R, R]`.
pub fn check_mass(c: &PencilCase) -> Result<(), TestCaseError> {
    let k = c.pencil.k;
    let shift = c.pencil.a0.trace() / k as f64;
    let a0 = HermMatrix::symmetrize(c.pencil.a0.as_cmatrix() - &CMatrix::scalar(k, shift));
    let pencil = Pencil::new(a0, c.pencil.a.clone(), c.pencil.b.clone()).unwrap();
    let mut r = op_norm(pencil.a0.as_cmatrix());
    r += pencil.a.iter().map(|a| 2.0 * op_norm(a.as_cmatrix())).sum::<f64>();
    if let DeterministicModel::Empirical { matrices } = &c.model {
        for (b, y) in pencil.b.iter().zip(matrices) {
            r += op_norm(b.as_cmatrix()) * op_norm(y.as_cmatrix());
        }
    }
    let r = r.max(0.1);
    let y = r * (2.0 + 48.0 * c.y);
    let problem = Subordination::new(&pencil, &c.model).map_err(fail)?;
    let (g, sol) = problem.solve_scalar(0.0, y, Readout::Trace, &SolverConfig::default()).map_err(fail)?;
    prop_assert!(sol.converged);
    let dev = (C64::new(0.0, y) * g - 1.0).norm();
    let bound = 2.0 * r * r / (y * y);
    prop_assert!(dev <= bound, "deviation {dev} > {bound} at y = {y}");
    Ok(())
}
