//! Dense complex matrices, Hermitian eigensolvers, block resolvents and
//! partial traces. Heavy lifting is delegated to `faer`.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use faer::linalg::solvers::{DenseSolveCore, Solve};
use faer::{Mat, Side};
use num_complex::Complex64 as C64;

use crate::error::{invalid, Error, Result};

const ZERO: C64 = C64::new(0.0, 0.0);
const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Dense complex matrix, possibly rectangular.
#[derive(Clone, Debug)]
pub struct CMatrix {
    m: Mat<C64>,
}

impl PartialEq for CMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.nrows() == other.nrows()
            && self.ncols() == other.ncols()
            && (0..self.nrows()).all(|i| (0..self.ncols()).all(|j| self[(i, j)] == other[(i, j)]))
    }
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { m: Mat::zeros(rows, cols) }
    }

    pub fn identity(n: usize) -> Self {
        Self { m: Mat::identity(n, n) }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> C64) -> Self {
        Self { m: Mat::from_fn(rows, cols, f) }
    }

    pub fn from_faer(m: Mat<C64>) -> Self {
        Self { m }
    }

    pub fn as_faer(&self) -> &Mat<C64> {
        &self.m
    }

    /// Build from row vectors. All rows must have the same length.
    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        if let Some(bad) = rows.iter().find(|x| x.len() != c) {
            return Err(Error::DimensionMismatch {
                context: "matrix rows",
                expected: c,
                found: bad.len(),
            });
        }
        Ok(Self::from_fn(r, c, |i, j| rows[i][j]))
    }

    pub fn from_real_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let rows: Vec<Vec<C64>> = rows
            .iter()
            .map(|r| r.iter().map(|&x| C64::new(x, 0.0)).collect())
            .collect();
        Self::from_rows(&rows)
    }

    pub fn diag(d: &[C64]) -> Self {
        Self::from_fn(d.len(), d.len(), |i, j| if i == j { d[i] } else { ZERO })
    }

    pub fn diag_real(d: &[f64]) -> Self {
        Self::from_fn(d.len(), d.len(), |i, j| if i == j { C64::new(d[i], 0.0) } else { ZERO })
    }

    pub fn scalar(n: usize, z: C64) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { z } else { ZERO })
    }

    pub fn nrows(&self) -> usize {
        self.m.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.m.ncols()
    }

    pub fn is_square(&self) -> bool {
        self.nrows() == self.ncols()
    }

    /// Side length of a square matrix.
    pub fn dim(&self) -> usize {
        debug_assert!(self.is_square());
        self.nrows()
    }

    pub fn to_rows(&self) -> Vec<Vec<C64>> {
        (0..self.nrows())
            .map(|i| (0..self.ncols()).map(|j| self[(i, j)]).collect())
            .collect()
    }

    pub fn adjoint(&self) -> Self {
        Self { m: self.m.adjoint().to_owned() }
    }

    pub fn transpose(&self) -> Self {
        Self { m: self.m.transpose().to_owned() }
    }

    pub fn scale(&self, c: C64) -> Self {
        Self::from_fn(self.nrows(), self.ncols(), |i, j| self[(i, j)] * c)
    }

    pub fn scale_real(&self, c: f64) -> Self {
        Self::from_fn(self.nrows(), self.ncols(), |i, j| self[(i, j)] * c)
    }

    pub fn trace(&self) -> C64 {
        (0..self.nrows().min(self.ncols())).map(|i| self[(i, i)]).sum()
    }

    /// Trace divided by the dimension.
    pub fn normalized_trace(&self) -> C64 {
        self.trace() / self.nrows() as f64
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.m.norm_l2()
    }

    pub fn max_abs(&self) -> f64 {
        self.m.norm_max()
    }

    pub fn is_finite(&self) -> bool {
        self.m.norm_max().is_finite()
    }

    /// Largest entrywise deviation from `other`.
    pub fn max_abs_diff(&self, other: &CMatrix) -> f64 {
        assert_eq!((self.nrows(), self.ncols()), (other.nrows(), other.ncols()));
        (&self.m - &other.m).norm_max()
    }

    /// Hermiticity defect `max |m - m*|`.
    pub fn hermitian_defect(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        (&self.m - self.m.adjoint()).norm_max()
    }

    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> CMatrix {
        Self { m: self.m.submatrix(r0, c0, rows, cols).to_owned() }
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, b: &CMatrix) {
        self.m
            .submatrix_mut(r0, c0, b.nrows(), b.ncols())
            .copy_from(&b.m);
    }

    /// Inverse via partial-pivot LU. Fails if the result is not finite.
    pub fn inverse(&self) -> Result<CMatrix> {
        if !self.is_square() {
            return Err(Error::DimensionMismatch {
                context: "inverse",
                expected: self.nrows(),
                found: self.ncols(),
            });
        }
        if self.nrows() == 1 {
            let z = self[(0, 0)];
            if z == ZERO || !(ONE / z).is_finite() {
                return Err(Error::Singular("inverse"));
            }
            return Ok(Self::scalar(1, ONE / z));
        }
        let lu = self.m.partial_piv_lu();
        let u = lu.U();
        if (0..u.nrows()).any(|i| {
            let d = u[(i, i)].norm();
            d == 0.0 || !d.is_finite()
        }) {
            return Err(Error::Singular("inverse"));
        }
        let inv = lu.inverse();
        if !inv.norm_max().is_finite() {
            return Err(Error::Singular("inverse"));
        }
        Ok(Self { m: inv })
    }

    /// Solve `self x = b` by partial-pivot LU.
    pub fn solve(&self, b: &CMatrix) -> Result<CMatrix> {
        if !self.is_square() || self.nrows() != b.nrows() {
            return Err(Error::DimensionMismatch {
                context: "solve",
                expected: self.nrows(),
                found: b.nrows(),
            });
        }
        let x = self.m.partial_piv_lu().solve(&b.m);
        if !x.norm_max().is_finite() {
            return Err(Error::Singular("solve"));
        }
        Ok(Self { m: x })
    }

    /// `(m + m*)/2`.
    pub fn real_part(&self) -> HermMatrix {
        HermMatrix::symmetrize(self.clone())
    }

    /// `(m - m*)/(2i)`.
    pub fn imag_part(&self) -> HermMatrix {
        imag_part(self)
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;
    fn index(&self, idx: (usize, usize)) -> &C64 {
        &self.m[idx]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, idx: (usize, usize)) -> &mut C64 {
        &mut self.m[idx]
    }
}

impl<'a> Mul<&'a CMatrix> for &'a CMatrix {
    type Output = CMatrix;
    fn mul(self, rhs: &CMatrix) -> CMatrix {
        CMatrix { m: &self.m * &rhs.m }
    }
}

impl<'a> Add<&'a CMatrix> for &'a CMatrix {
    type Output = CMatrix;
    fn add(self, rhs: &CMatrix) -> CMatrix {
        CMatrix { m: &self.m + &rhs.m }
    }
}

impl<'a> Sub<&'a CMatrix> for &'a CMatrix {
    type Output = CMatrix;
    fn sub(self, rhs: &CMatrix) -> CMatrix {
        CMatrix { m: &self.m - &rhs.m }
    }
}

impl Neg for &CMatrix {
    type Output = CMatrix;
    fn neg(self) -> CMatrix {
        CMatrix { m: -&self.m }
    }
}

impl AddAssign<&CMatrix> for CMatrix {
    fn add_assign(&mut self, rhs: &CMatrix) {
        self.m += &rhs.m;
    }
}

impl SubAssign<&CMatrix> for CMatrix {
    fn sub_assign(&mut self, rhs: &CMatrix) {
        self.m -= &rhs.m;
    }
}

/// Hermitian matrix. Construction symmetrizes, so `m == m*` holds exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct HermMatrix(CMatrix);

impl std::ops::Deref for HermMatrix {
    type Target = CMatrix;
    fn deref(&self) -> &CMatrix {
        &self.0
    }
}

impl HermMatrix {
    /// Replace `m` by `(m + m*)/2`. Panics on non-square input.
    pub fn symmetrize(m: CMatrix) -> Self {
        assert!(m.is_square(), "hermitian matrix must be square");
        let n = m.nrows();
        let mut out = m;
        for i in 0..n {
            let d = out[(i, i)].re;
            out[(i, i)] = C64::new(d, 0.0);
            for j in 0..i {
                let v = (out[(i, j)] + out[(j, i)].conj()) * 0.5;
                out[(i, j)] = v;
                out[(j, i)] = v.conj();
            }
        }
        Self(out)
    }

    /// Symmetrize after checking the input is Hermitian to relative tolerance `tol`.
    pub fn new_checked(m: CMatrix, tol: f64) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::DimensionMismatch {
                context: "hermitian matrix",
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        if !m.is_finite() {
            return Err(invalid("matrix has non-finite entries"));
        }
        let defect = m.hermitian_defect();
        if defect > tol * m.max_abs().max(1.0) {
            return Err(invalid(format!("matrix is not hermitian (defect {defect:.3e})")));
        }
        Ok(Self::symmetrize(m))
    }

    pub fn zeros(n: usize) -> Self {
        Self(CMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        Self(CMatrix::identity(n))
    }

    pub fn from_real_diag(d: &[f64]) -> Self {
        Self(CMatrix::diag_real(d))
    }

    pub fn from_real_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new_checked(CMatrix::from_real_rows(rows)?, 1e-12)
    }

    pub fn as_cmatrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_cmatrix(self) -> CMatrix {
        self.0
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        herm_eigenvalues(self)
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        if self.dim() == 1 {
            return Ok(self[(0, 0)].re);
        }
        if self.dim() == 2 {
            let (lo, _) = eig2(self);
            return Ok(lo);
        }
        if self.is_diagonal() {
            return Ok(self.real_diagonal().into_iter().fold(f64::INFINITY, f64::min));
        }
        Ok(self.eigenvalues()?[0])
    }

    /// True when the matrix is diagonal up to exact zeros.
    pub fn is_diagonal(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| i == j || self[(i, j)] == ZERO))
    }

    pub fn real_diagonal(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self[(i, i)].re).collect()
    }

    pub fn add_herm(&self, other: &HermMatrix) -> HermMatrix {
        Self(&self.0 + &other.0)
    }

    pub fn scale_herm(&self, c: f64) -> HermMatrix {
        Self(self.0.scale_real(c))
    }
}

fn eig2(m: &CMatrix) -> (f64, f64) {
    let a = m[(0, 0)].re;
    let d = m[(1, 1)].re;
    let b = m[(0, 1)].norm();
    let mean = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    (mean - rad, mean + rad)
}

/// Eigenpairs of a Hermitian matrix, ascending.
#[derive(Clone, Debug)]
pub struct HermEig {
    pub values: Vec<f64>,
    /// Columns are orthonormal eigenvectors.
    pub vectors: CMatrix,
}

/// Full eigendecomposition, with the reconstruction residual checked
/// against `1e-10 * max(1, ||m||_F)`.
pub fn herm_eig(m: &HermMatrix) -> Result<HermEig> {
    let evd = m
        .as_faer()
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::Eigen(format!("{e:?}")))?;
    let n = m.dim();
    let values: Vec<f64> = (0..n).map(|i| evd.S()[i].re).collect();
    let u = evd.U().to_owned();
    let ud = Mat::from_fn(n, n, |i, j| u[(i, j)] * values[j]);
    let resid = (&ud - m.as_faer() * &u).norm_l2();
    let scale = m.frobenius_norm().max(1.0);
    if !(resid <= 1e-10 * scale) {
        return Err(Error::Eigen(format!("reconstruction residual {resid:.3e}")));
    }
    Ok(HermEig { values, vectors: CMatrix::from_faer(u) })
}

/// Eigenvalues only, ascending.
pub fn herm_eigenvalues(m: &HermMatrix) -> Result<Vec<f64>> {
    if m.dim() == 0 {
        return Ok(Vec::new());
    }
    let mut v = m
        .as_faer()
        .self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::Eigen(format!("{e:?}")))?;
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// `(m - m*)/(2i)`.
pub fn imag_part(m: &CMatrix) -> HermMatrix {
    assert!(m.is_square());
    let n = m.nrows();
    HermMatrix::symmetrize(CMatrix::from_fn(n, n, |i, j| {
        (m[(i, j)] - m[(j, i)].conj()) / (2.0 * I)
    }))
}

/// Smallest eigenvalue of the imaginary part.
pub fn min_imag_eigenvalue(m: &CMatrix) -> f64 {
    imag_part(m).min_eigenvalue().unwrap_or(f64::NAN)
}

/// `Im m` positive definite.
pub fn in_upper_half(m: &CMatrix) -> bool {
    m.is_square() && m.is_finite() && min_imag_eigenvalue(m) > 0.0
}

/// Operator norm. Exact for small matrices, power iteration otherwise.
pub fn op_norm(m: &CMatrix) -> f64 {
    let (r, c) = (m.nrows(), m.ncols());
    if r == 0 || c == 0 {
        return 0.0;
    }
    if r == 1 || c == 1 {
        return m.frobenius_norm();
    }
    if r.min(c) <= 1024 {
        let g = if r <= c { m * &m.adjoint() } else { &m.adjoint() * m };
        let g = HermMatrix::symmetrize(g);
        let top = if g.dim() == 2 {
            eig2(&g).1
        } else {
            herm_eigenvalues(&g).map(|v| v[v.len() - 1]).unwrap_or(f64::NAN)
        };
        return top.max(0.0).sqrt();
    }
    power_norm(m, 500, 1e-12)
}

fn power_norm(m: &CMatrix, max_iter: usize, tol: f64) -> f64 {
    // Deterministic quasi-random start vector (golden-ratio sequence).
    let c = m.ncols();
    let phi = 0.618_033_988_749_894_9_f64;
    let mut v = CMatrix::from_fn(c, 1, |i, _| {
        let t = ((i + 1) as f64 * phi).fract();
        C64::new(t - 0.5, ((i + 7) as f64 * phi * phi).fract() - 0.5)
    });
    let mut sigma = 0.0;
    let adj = m.adjoint();
    for _ in 0..max_iter {
        let nv = v.frobenius_norm();
        if nv == 0.0 {
            return 0.0;
        }
        v = v.scale_real(1.0 / nv);
        let w = m * &v;
        let next = w.frobenius_norm();
        v = &adj * &w;
        if (next - sigma).abs() <= tol * next {
            return next;
        }
        sigma = next;
    }
    sigma
}

/// Kronecker product with row index `(u, m) -> u * rows(b) + m`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ar, ac, br, bc) = (a.nrows(), a.ncols(), b.nrows(), b.ncols());
    let mut out = CMatrix::zeros(ar * br, ac * bc);
    for u in 0..ar {
        for v in 0..ac {
            let s = a[(u, v)];
            if s == ZERO {
                continue;
            }
            for i in 0..br {
                for j in 0..bc {
                    out[(u * br + i, v * bc + j)] = s * b[(i, j)];
                }
            }
        }
    }
    out
}

/// Square matrix of side `k * n`, read as a `k x k` array of `n x n` blocks.
#[derive(Clone, Debug)]
pub struct BlockOperator {
    k: usize,
    n: usize,
    m: CMatrix,
}

impl BlockOperator {
    pub fn new(k: usize, n: usize, m: CMatrix) -> Result<Self> {
        if k == 0 || n == 0 {
            return Err(invalid("block operator needs k, n >= 1"));
        }
        if m.nrows() != k * n || m.ncols() != k * n {
            return Err(Error::DimensionMismatch {
                context: "block operator",
                expected: k * n,
                found: m.nrows().max(m.ncols()),
            });
        }
        Ok(Self { k, n, m })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.m
    }

    pub fn into_matrix(self) -> CMatrix {
        self.m
    }

    pub fn block(&self, u: usize, v: usize) -> CMatrix {
        self.m.block(u * self.n, v * self.n, self.n, self.n)
    }
}

/// `(Lambda (x) 1_N - z)^{-1}` for `Lambda` in the upper half plane and `z`
/// selfadjoint.
pub fn resolvent(lambda: &CMatrix, z: &BlockOperator) -> Result<BlockOperator> {
    let (k, n) = (z.k, z.n);
    if !lambda.is_square() || lambda.nrows() != k {
        return Err(Error::DimensionMismatch {
            context: "resolvent spectral argument",
            expected: k,
            found: lambda.nrows(),
        });
    }
    if !in_upper_half(lambda) {
        return Err(Error::NotUpperHalfPlane {
            context: "resolvent spectral argument",
            min_imag: min_imag_eigenvalue(lambda),
        });
    }
    if z.m.hermitian_defect() > 1e-10 * z.m.max_abs().max(1.0) {
        return Err(invalid("resolvent argument is not selfadjoint"));
    }
    let mut a = -&z.m;
    for u in 0..k {
        for v in 0..k {
            let l = lambda[(u, v)];
            if l == ZERO {
                continue;
            }
            for i in 0..n {
                a[(u * n + i, v * n + i)] += l;
            }
        }
    }
    BlockOperator::new(k, n, a.inverse()?)
}

/// `(id (x) tau_N)(b)`: entry `(u, v)` is the normalized trace of block `(u, v)`.
pub fn partial_trace(b: &BlockOperator) -> CMatrix {
    let (k, n) = (b.k, b.n);
    CMatrix::from_fn(k, k, |u, v| {
        let mut s = ZERO;
        for i in 0..n {
            s += b.m[(u * n + i, v * n + i)];
        }
        s / n as f64
    })
}

/// Partial trace of a product, `(id (x) tau_N)(a c)`, without forming `a c`.
pub fn partial_trace_of_product(a: &BlockOperator, c: &BlockOperator) -> CMatrix {
    assert_eq!((a.k, a.n), (c.k, c.n));
    let (k, n) = (a.k, a.n);
    let kn = k * n;
    let am = a.m.as_faer();
    let cm = c.m.as_faer();
    CMatrix::from_fn(k, k, |u, v| {
        let mut s = ZERO;
        for i in 0..n {
            let row = u * n + i;
            let col = v * n + i;
            for j in 0..kn {
                s += am[(row, j)] * cm[(j, col)];
            }
        }
        s / n as f64
    })
}

// Matrices serialize as row-major nested arrays of `[re, im]` pairs.

impl serde::Serialize for CMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<Vec<[f64; 2]>> = (0..self.nrows())
            .map(|i| (0..self.ncols()).map(|j| [self[(i, j)].re, self[(i, j)].im]).collect())
            .collect();
        rows.serialize(s)
    }
}

impl<'de> serde::Deserialize<'de> for CMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows: Vec<Vec<[f64; 2]>> = serde::Deserialize::deserialize(d)?;
        let rows: Vec<Vec<C64>> = rows
            .into_iter()
            .map(|r| r.into_iter().map(|[a, b]| C64::new(a, b)).collect())
            .collect();
        CMatrix::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

impl serde::Serialize for HermMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.0.serialize(s)
    }
}

impl<'de> serde::Deserialize<'de> for HermMatrix {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let m = CMatrix::deserialize(d)?;
        HermMatrix::new_checked(m, 1e-12).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn eig_of_pauli_x() {
        let m = HermMatrix::from_real_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let e = herm_eig(&m).unwrap();
        assert!((e.values[0] + 1.0).abs() < 1e-14);
        assert!((e.values[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn eig_of_complex_hermitian() {
        let m = HermMatrix::new_checked(
            CMatrix::from_rows(&[vec![c(2.0, 0.0), c(0.0, 1.0)], vec![c(0.0, -1.0), c(2.0, 0.0)]])
                .unwrap(),
            1e-12,
        )
        .unwrap();
        let v = m.eigenvalues().unwrap();
        assert!((v[0] - 1.0).abs() < 1e-14 && (v[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn eig_residual_on_larger_matrix() {
        let n = 40;
        let m = HermMatrix::symmetrize(CMatrix::from_fn(n, n, |i, j| {
            c(((i * 7 + j * 3) % 11) as f64 - 5.0, ((i * 5 + j) % 7) as f64 - 3.0)
        }));
        let e = herm_eig(&m).unwrap();
        let d = CMatrix::diag_real(&e.values);
        let rec = &(&e.vectors * &d) * &e.vectors.adjoint();
        assert!(rec.max_abs_diff(&m) < 1e-10 * m.frobenius_norm());
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn imag_part_examples() {
        let m = CMatrix::scalar(1, c(0.0, 2.0));
        assert!((imag_part(&m)[(0, 0)] - c(2.0, 0.0)).norm() < 1e-15);
        assert!(in_upper_half(&m));
        let z = CMatrix::diag(&[c(1.0, 1.0), c(0.0, 0.0)]);
        assert!(!in_upper_half(&z));
        let m = CMatrix::from_rows(&[vec![c(0.0, 1.0), c(0.0, 3.0)], vec![c(0.0, 0.0), c(0.0, 1.0)]])
            .unwrap();
        // Im = [[1, 1.5], [1.5, 1]] has eigenvalue -0.5.
        assert!(!in_upper_half(&m));
    }

    #[test]
    fn scalar_resolvent() {
        let lam = CMatrix::scalar(1, c(0.0, 1.0));
        let z = BlockOperator::new(1, 1, CMatrix::zeros(1, 1)).unwrap();
        let r = resolvent(&lam, &z).unwrap();
        assert!((r.matrix()[(0, 0)] - c(0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn resolvent_rejects_real_argument() {
        let lam = CMatrix::scalar(1, c(1.0, 0.0));
        let z = BlockOperator::new(1, 2, CMatrix::zeros(2, 2)).unwrap();
        assert!(matches!(resolvent(&lam, &z), Err(Error::NotUpperHalfPlane { .. })));
    }

    #[test]
    fn partial_trace_of_kron() {
        let a = CMatrix::from_rows(&[vec![c(1.0, 0.0), c(2.0, 1.0)], vec![c(2.0, -1.0), c(0.5, 0.0)]])
            .unwrap();
        let b = CMatrix::diag_real(&[1.0, 2.0, 3.0]);
        let bo = BlockOperator::new(2, 3, kron(&a, &b)).unwrap();
        let pt = partial_trace(&bo);
        assert!(pt.max_abs_diff(&a.scale_real(2.0)) < 1e-14);
    }

    #[test]
    fn partial_trace_product_matches_dense() {
        let (k, n) = (2, 3);
        let a = CMatrix::from_fn(k * n, k * n, |i, j| c((i + 2 * j) as f64, (i * j) as f64 * 0.1));
        let b = CMatrix::from_fn(k * n, k * n, |i, j| c((3 * i + j) as f64 * 0.2, -(i as f64)));
        let ab = BlockOperator::new(k, n, &a * &b).unwrap();
        let a = BlockOperator::new(k, n, a).unwrap();
        let b = BlockOperator::new(k, n, b).unwrap();
        assert!(partial_trace_of_product(&a, &b).max_abs_diff(&partial_trace(&ab)) < 1e-10);
    }

    #[test]
    fn op_norm_small_and_power() {
        let m = CMatrix::from_real_rows(&[vec![3.0, 0.0], vec![4.0, 5.0]]).unwrap();
        // singular values of [[3,0],[4,5]] are sqrt(45) and sqrt(5)
        assert!((op_norm(&m) - 45f64.sqrt()).abs() < 1e-12);
        let n = 1100;
        let mut d: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 / n as f64).collect();
        d[n - 1] = 3.0;
        let m = CMatrix::diag_real(&d);
        assert!((op_norm(&m) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn inverse_roundtrip() {
        let m = CMatrix::from_fn(5, 5, |i, j| if i == j { c(3.0, 1.0) } else { c(0.1 * (i + j) as f64, 0.0) });
        let inv = m.inverse().unwrap();
        assert!((&m * &inv).max_abs_diff(&CMatrix::identity(5)) < 1e-13);
        assert!(CMatrix::zeros(3, 3).inverse().is_err());
    }

    #[test]
    fn json_roundtrip() {
        let m = CMatrix::from_rows(&[vec![c(1.0, 0.5), c(-2.0, 0.0)]]).unwrap();
        let s = serde_json::to_string(&m).unwrap();
        assert_eq!(s, "[[[1.0,0.5],[-2.0,0.0]]]");
        let back: CMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, m);
        assert!(serde_json::from_str::<HermMatrix>("[[[0,0],[1,0]],[[2,0],[0,0]]]").is_err());
    }

    #[test]
    fn symmetrize_is_hermitian() {
        let m = CMatrix::from_fn(4, 4, |i, j| c(i as f64, j as f64));
        let h = HermMatrix::symmetrize(m);
        assert_eq!(h.hermitian_defect(), 0.0);
        assert!(HermMatrix::new_checked(CMatrix::from_fn(2, 2, |i, _| c(i as f64, 0.0)), 1e-12).is_err());
    }
}
