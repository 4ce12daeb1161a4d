//! Random and deterministic matrix ensembles: GUE, Ginibre, quantile
//! diagonals, the Wishart corner embedding, block matrices and banded
//! MIMO channels.

use num_complex::Complex64 as C64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{CMatrix, HermMatrix};
use crate::pencil::{NCPolynomial, Pencil};
use crate::stieltjes::{DeterministicModel, QuantileTable};

/// Seed plus stream index. Distinct streams give independent sequences.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngSpec {
    pub seed: u64,
    pub stream: u64,
}

impl RngSpec {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(self.stream);
        r
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// GUE normalized to `E tau_N(X^2) = 1`: diagonal `N(0, 1/N)`, off-diagonal
/// real and imaginary parts `N(0, 1/(2N))`.
pub fn sample_gue(n: usize, rng: &mut ChaCha8Rng) -> HermMatrix {
    let sd_diag = (1.0 / n as f64).sqrt();
    let sd_off = (0.5 / n as f64).sqrt();
    let mut m = CMatrix::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = C64::new(sd_diag * normal(rng), 0.0);
        for j in 0..i {
            let z = C64::new(sd_off * normal(rng), sd_off * normal(rng));
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
        }
    }
    HermMatrix::symmetrize(m)
}

/// Complex Ginibre matrix with `E|m_ij|^2 = variance`.
pub fn sample_ginibre(rows: usize, cols: usize, variance: f64, rng: &mut ChaCha8Rng) -> CMatrix {
    let sd = (0.5 * variance).sqrt();
    let mut m = CMatrix::zeros(rows, cols);
    for i in 0..rows {
        for j in 0..cols {
            m[(i, j)] = C64::new(sd * normal(rng), sd * normal(rng));
        }
    }
    m
}

/// Diagonal of `F^{-1}(i/N)`, `i = 1..N`, rotated by `floor(v N)`.
pub fn quantile_diag(table: &QuantileTable, v: f64, n: usize) -> HermMatrix {
    HermMatrix::from_real_diag(&quantile_values(table, v, n))
}

/// The diagonal of [`quantile_diag`] without building the matrix.
pub fn quantile_values(table: &QuantileTable, v: f64, n: usize) -> Vec<f64> {
    let lambdas: Vec<f64> = (1..=n).map(|i| table.inverse_cdf(i as f64 / n as f64)).collect();
    let shift = (v * n as f64).floor() as usize;
    (0..n).map(|i| lambdas[(i + shift) % n]).collect()
}

/// Deterministic Hermitian matrix of a size fixed at sampling time.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeSpec {
    Identity,
    Quantile {
        table: QuantileTable,
        #[serde(default)]
        offset: f64,
    },
    Explicit { matrix: HermMatrix },
}

impl ShapeSpec {
    pub fn materialize(&self, size: usize) -> Result<HermMatrix> {
        match self {
            ShapeSpec::Identity => Ok(HermMatrix::identity(size)),
            ShapeSpec::Quantile { table, offset } => {
                table.validate()?;
                Ok(quantile_diag(table, *offset, size))
            }
            ShapeSpec::Explicit { matrix } => {
                if matrix.dim() != size {
                    return Err(Error::DimensionMismatch {
                        context: "explicit shape matrix",
                        expected: size,
                        found: matrix.dim(),
                    });
                }
                Ok(matrix.clone())
            }
        }
    }

    /// Diagonal entries, when the shape is diagonal.
    fn diagonal(&self, size: usize) -> Result<Vec<f64>> {
        let m = self.materialize(size)?;
        if !m.is_diagonal() {
            return Err(invalid("shape must be diagonal here"));
        }
        Ok(m.real_diagonal())
    }
}

/// `W_j = M_j Z_j M_j^*` with `M_j` an `rN x s_j N` Gaussian matrix of
/// entry variance `1/(rN)`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WishartSpec {
    pub r: usize,
    pub s: Vec<usize>,
    pub z: Vec<ShapeSpec>,
    pub n: usize,
}

impl WishartSpec {
    pub fn validate(&self) -> Result<()> {
        if self.r == 0 || self.n == 0 || self.s.contains(&0) {
            return Err(invalid("wishart dimensions must be positive"));
        }
        if self.s.len() != self.z.len() {
            return Err(invalid("wishart needs one shape matrix per block"));
        }
        for (z, &s) in self.z.iter().zip(&self.s) {
            let m = z.materialize(s * self.n)?;
            if m.min_eigenvalue()? <= 0.0 {
                return Err(invalid("wishart shape matrices must be positive definite"));
            }
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.s.len()
    }

    fn s_total(&self) -> usize {
        self.s.iter().sum()
    }

    /// `(r + s) / r`.
    pub fn kappa2(&self) -> f64 {
        (self.r + self.s_total()) as f64 / self.r as f64
    }

    /// Side of the embedding space.
    pub fn big_dim(&self) -> usize {
        (self.r + self.s_total()) * self.n
    }

    fn offsets(&self) -> Vec<usize> {
        let mut off = vec![self.r * self.n];
        for &s in &self.s {
            off.push(off[off.len() - 1] + s * self.n);
        }
        off
    }
}

/// Wishart matrices together with the GUE matrices they were cut from.
#[derive(Clone, Debug)]
pub struct WishartEmbedding {
    pub spec: WishartSpec,
    pub w: Vec<HermMatrix>,
    pub m: Vec<CMatrix>,
    pub z: Vec<HermMatrix>,
    pub x_tilde: Vec<HermMatrix>,
    pub z_tilde: Vec<HermMatrix>,
    /// `e_0` (the `rN` corner) followed by one projection per block.
    pub e: Vec<HermMatrix>,
}

impl WishartEmbedding {
    /// `diag(y, 0)` in the embedding space.
    pub fn embed(&self, y: &CMatrix) -> Result<CMatrix> {
        let rn = self.spec.r * self.spec.n;
        if y.nrows() != rn || y.ncols() != rn {
            return Err(Error::DimensionMismatch {
                context: "wishart corner matrix",
                expected: rn,
                found: y.nrows(),
            });
        }
        let mut out = CMatrix::zeros(self.spec.big_dim(), self.spec.big_dim());
        out.set_block(0, 0, y);
        Ok(out)
    }
}

fn diag_projection(dim: usize, lo: usize, hi: usize) -> HermMatrix {
    let d: Vec<f64> = (0..dim).map(|i| if (lo..hi).contains(&i) { 1.0 } else { 0.0 }).collect();
    HermMatrix::from_real_diag(&d)
}

/// Sample `X~_j` in the big space and cut `M_j` from its off-diagonal block.
pub fn build_wishart_embedding(spec: &WishartSpec, rng: &mut ChaCha8Rng) -> Result<WishartEmbedding> {
    spec.validate()?;
    let big = spec.big_dim();
    let rn = spec.r * spec.n;
    let off = spec.offsets();
    let kappa = spec.kappa2().sqrt();
    let mut e = vec![diag_projection(big, 0, rn)];
    let (mut w, mut m, mut z, mut x_tilde, mut z_tilde) = (vec![], vec![], vec![], vec![], vec![]);
    for j in 0..spec.p() {
        let xt = sample_gue(big, rng);
        let sj = spec.s[j] * spec.n;
        let mj = xt.block(0, off[j], rn, sj).scale_real(kappa);
        let zj = spec.z[j].materialize(sj)?;
        let wj = HermMatrix::symmetrize(&(&mj * zj.as_cmatrix()) * &mj.adjoint());
        let mut zt = CMatrix::zeros(big, big);
        zt.set_block(off[j], off[j], zj.as_cmatrix());
        e.push(diag_projection(big, off[j], off[j + 1]));
        w.push(wj);
        m.push(mj);
        z.push(zj);
        x_tilde.push(xt);
        z_tilde.push(HermMatrix::symmetrize(zt));
    }
    Ok(WishartEmbedding { spec: spec.clone(), w, m, z, x_tilde, z_tilde, e })
}

fn det_letter(q: usize, j: usize) -> NCPolynomial {
    NCPolynomial::y(0, q, j)
}

/// The polynomial in the big space whose value at `(X~, Y~, Z~, e)` is
/// `diag(P(W, Y, Y^*), 0)`. Deterministic letters are ordered
/// `y~_1..y~_q, z~_1..z~_p, e_0..e_p`.
pub fn embedded_polynomial(poly: &NCPolynomial, spec: &WishartSpec) -> Result<NCPolynomial> {
    let (p, q) = (spec.p(), poly.q());
    if poly.p() > p {
        return Err(invalid("polynomial uses more Wishart letters than the embedding has blocks"));
    }
    let qq = q + 2 * p + 1;
    let e = |i: usize| det_letter(qq, q + p + i);
    let kappa2 = C64::new(spec.kappa2(), 0.0);
    let xs: Vec<NCPolynomial> = (0..p)
        .map(|j| {
            let x = NCPolynomial::x(p, qq, j);
            let zj = det_letter(qq, q + j);
            let a = &(&(&e(0) * &x) * &e(j + 1)) * &zj;
            let b = &(&e(j + 1) * &x) * &e(0);
            let s = &a + &b;
            (&e(0) * &(&s * &s)).scale(kappa2)
        })
        .collect();
    let ys: Vec<NCPolynomial> = (0..q).map(|j| det_letter(qq, j)).collect();
    let inner = poly.substitute(&xs, &ys)?;
    Ok((&e(0) * &inner).with_arity(p, qq))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EmbeddingCheck {
    /// `||lhs - rhs||_F / ||lhs||_F`.
    pub deviation: f64,
    pub lhs_norm: f64,
    pub big_dim: usize,
}

/// Compare `diag(P(W, Y, Y^*), 0)` with the embedded polynomial evaluated in
/// the big space.
pub fn embedding_identity_check(
    poly: &NCPolynomial,
    spec: &WishartSpec,
    y: &[CMatrix],
    rng: &mut ChaCha8Rng,
) -> Result<EmbeddingCheck> {
    if y.len() != poly.q() {
        return Err(invalid(format!("polynomial needs {} deterministic matrices, got {}", poly.q(), y.len())));
    }
    let emb = build_wishart_embedding(spec, rng)?;
    let p = spec.p();
    let lhs_small = poly.clone().with_arity(p, poly.q()).evaluate(&emb.w, y)?;
    let lhs = emb.embed(&lhs_small)?;
    let big_poly = embedded_polynomial(poly, spec)?;
    let mut dets: Vec<CMatrix> = y.iter().map(|m| emb.embed(m)).collect::<Result<_>>()?;
    dets.extend(emb.z_tilde.iter().map(|m| m.as_cmatrix().clone()));
    dets.extend(emb.e.iter().map(|m| m.as_cmatrix().clone()));
    let rhs = big_poly.evaluate(&emb.x_tilde, &dets)?;
    let lhs_norm = lhs.frobenius_norm();
    let deviation = (&lhs - &rhs).frobenius_norm() / lhs_norm.max(f64::MIN_POSITIVE);
    Ok(EmbeddingCheck { deviation, lhs_norm, big_dim: spec.big_dim() })
}

/// Selfadjoint polynomial in the big space with spectrum
/// `r/(r+s) mu_P + s/(r+s) delta_{P(0)}`, for density prediction.
/// Deterministic letters are ordered `y~_1..y~_q, z~_1..z~_p, e_0`.
pub fn wishart_lift(poly: &NCPolynomial, spec: &WishartSpec) -> Result<NCPolynomial> {
    let (p, q) = (spec.p(), poly.q());
    if poly.p() > p {
        return Err(invalid("polynomial uses more Wishart letters than the embedding has blocks"));
    }
    let qq = q + p + 1;
    let e0 = det_letter(qq, q + p);
    let kappa2 = C64::new(spec.kappa2(), 0.0);
    let xs: Vec<NCPolynomial> = (0..p)
        .map(|j| {
            let x = NCPolynomial::x(p, qq, j);
            let zj = det_letter(qq, q + j);
            (&(&(&(&e0 * &x) * &zj) * &x) * &e0).scale(kappa2)
        })
        .collect();
    let ys: Vec<NCPolynomial> = (0..q).map(|j| det_letter(qq, j)).collect();
    Ok(poly.hermitize().substitute(&xs, &ys)?.with_arity(p, qq))
}

/// Diagonal deterministic family of [`wishart_lift`] at corner size `n`.
/// The `Y_j` and `Z_j` must be diagonal.
pub fn wishart_lift_model(spec: &WishartSpec, y: &[ShapeSpec], n: usize) -> Result<DeterministicModel> {
    let spec = WishartSpec { n, ..spec.clone() };
    spec.validate()?;
    let big = spec.big_dim();
    let rn = spec.r * n;
    let off = spec.offsets();
    let mut matrices = Vec::new();
    for yj in y {
        let mut d = yj.diagonal(rn)?;
        d.resize(big, 0.0);
        matrices.push(HermMatrix::from_real_diag(&d));
    }
    for (j, zj) in spec.z.iter().enumerate() {
        let zd = zj.diagonal(spec.s[j] * n)?;
        let mut d = vec![0.0; big];
        d[off[j]..off[j + 1]].copy_from_slice(&zd);
        matrices.push(HermMatrix::from_real_diag(&d));
    }
    matrices.push(diag_projection(big, 0, rn));
    Ok(DeterministicModel::Empirical { matrices })
}

/// Undo the embedding: `g_P = ((r+s)/r) g_lift - (s/r)/(lambda - P(0))`.
pub fn wishart_unlift(g_lift: C64, lambda: C64, constant: f64, spec: &WishartSpec) -> C64 {
    let k2 = spec.kappa2();
    k2 * g_lift - (k2 - 1.0) / (lambda - constant)
}

/// Assemble the Hermitian block matrix `[P_uv(X, Y)]`. The grid must satisfy
/// `P_vu = P_uv^*`.
pub fn build_block(grid: &[Vec<NCPolynomial>], x: &[HermMatrix], y: &[HermMatrix]) -> Result<HermMatrix> {
    let l = grid.len();
    if l == 0 || grid.iter().any(|row| row.len() != l) {
        return Err(invalid("block grid must be square and nonempty"));
    }
    for u in 0..l {
        for v in 0..=u {
            let d = (&grid[v][u] - &grid[u][v].adjoint()).hermitize();
            if d.terms().any(|(_, c)| c.norm() > 1e-12) {
                return Err(Error::NotSelfAdjoint {
                    defect: d.terms().map(|(_, c)| c.norm()).fold(0.0, f64::max),
                });
            }
        }
    }
    let n = x
        .first()
        .or(y.first())
        .map(|m| m.dim())
        .ok_or_else(|| invalid("cannot infer block size"))?;
    let yc: Vec<CMatrix> = y.iter().map(|m| m.as_cmatrix().clone()).collect();
    let mut out = CMatrix::zeros(l * n, l * n);
    for u in 0..l {
        for v in u..l {
            let poly = &grid[u][v];
            let xs: Vec<HermMatrix> = x.iter().take(poly.p().max(x.len())).cloned().collect();
            let blk = poly.evaluate(&xs, &yc)?;
            out.set_block(u * n, v * n, &blk);
            if u != v {
                out.set_block(v * n, u * n, &blk.adjoint());
            }
        }
    }
    Ok(HermMatrix::symmetrize(out))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChannelTap {
    pub sigma2: f64,
    #[serde(default = "identity_shape")]
    pub c: ShapeSpec,
    #[serde(default = "identity_shape")]
    pub d: ShapeSpec,
}

fn identity_shape() -> ShapeSpec {
    ShapeSpec::Identity
}

/// Banded block-Toeplitz channel with `L` taps `A_l = C_l M_l D_l`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub taps: Vec<ChannelTap>,
    pub r: usize,
    pub t: usize,
    pub n: usize,
    #[serde(default = "one")]
    pub block_rows: usize,
}

fn one() -> usize {
    1
}

impl ChannelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.taps.is_empty() || self.r == 0 || self.t == 0 || self.n == 0 || self.block_rows == 0 {
            return Err(invalid("channel dimensions must be positive"));
        }
        if self.taps.iter().any(|tap| !(tap.sigma2 >= 0.0 && tap.sigma2.is_finite())) {
            return Err(invalid("tap variances must be finite and nonnegative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ChannelMatrix {
    pub h: CMatrix,
    pub hh: HermMatrix,
}

pub fn build_channel(spec: &ChannelSpec, rng: &mut ChaCha8Rng) -> Result<ChannelMatrix> {
    spec.validate()?;
    let (rn, tn) = (spec.r * spec.n, spec.t * spec.n);
    let l = spec.taps.len();
    let b = spec.block_rows;
    let mut taps = Vec::with_capacity(l);
    for tap in &spec.taps {
        let m = sample_ginibre(rn, tn, tap.sigma2 / spec.n as f64, rng);
        let c = tap.c.materialize(rn)?;
        let d = tap.d.materialize(tn)?;
        taps.push(&(c.as_cmatrix() * &m) * d.as_cmatrix());
    }
    let mut h = CMatrix::zeros(b * rn, (b + l - 1) * tn);
    for row in 0..b {
        for (ell, a) in taps.iter().enumerate() {
            h.set_block(row * rn, (row + ell) * tn, a);
        }
    }
    let hh = HermMatrix::symmetrize(&h * &h.adjoint());
    Ok(ChannelMatrix { h, hh })
}

/// A source of Hermitian random matrices at a requested size.
pub trait HermitianSampler: Send + Sync {
    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<HermMatrix>;
}

/// `P(X_1..X_p, Y_1..Y_q)` with fresh GUE matrices.
#[derive(Clone, Debug)]
pub struct PolynomialSampler {
    pub poly: NCPolynomial,
    pub model: DeterministicModel,
}

impl HermitianSampler for PolynomialSampler {
    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<HermMatrix> {
        let x: Vec<HermMatrix> = (0..self.poly.p()).map(|_| sample_gue(n, rng)).collect();
        let y = self.model.materialize(n)?;
        if y.len() < self.poly.q() {
            return Err(invalid("deterministic model has too few matrices for the polynomial"));
        }
        let poly = self.poly.hermitize();
        poly.evaluate_hermitian(&x, &y)
    }
}

/// The pencil `L_N` itself, as a `kN x kN` Hermitian matrix.
#[derive(Clone, Debug)]
pub struct PencilSampler {
    pub pencil: Pencil,
    pub model: DeterministicModel,
}

impl HermitianSampler for PencilSampler {
    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<HermMatrix> {
        let x: Vec<HermMatrix> = (0..self.pencil.p()).map(|_| sample_gue(n, rng)).collect();
        let y = self.model.materialize(n)?;
        Ok(HermMatrix::symmetrize(self.pencil.evaluate(&x, &y)?.into_matrix()))
    }
}

/// `P(W_1..W_p, Y)` with Wishart letters, sampled directly.
#[derive(Clone, Debug)]
pub struct WishartSampler {
    pub poly: NCPolynomial,
    pub spec: WishartSpec,
    pub y: Vec<ShapeSpec>,
}

impl HermitianSampler for WishartSampler {
    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<HermMatrix> {
        let spec = WishartSpec { n, ..self.spec.clone() };
        spec.validate()?;
        let rn = spec.r * n;
        let mut w = Vec::new();
        for (j, &s) in spec.s.iter().enumerate() {
            let m = sample_ginibre(rn, s * n, 1.0 / rn as f64, rng);
            let z = spec.z[j].materialize(s * n)?;
            w.push(HermMatrix::symmetrize(&(&m * z.as_cmatrix()) * &m.adjoint()));
        }
        let y: Vec<HermMatrix> = self.y.iter().map(|s| s.materialize(rn)).collect::<Result<_>>()?;
        self.poly.hermitize().evaluate_hermitian(&w, &y)
    }
}

/// `H H^*` of a banded channel; `n` overrides `ChannelSpec::n`.
#[derive(Clone, Debug)]
pub struct ChannelSampler {
    pub spec: ChannelSpec,
}

impl HermitianSampler for ChannelSampler {
    fn sample(&self, n: usize, rng: &mut ChaCha8Rng) -> Result<HermMatrix> {
        let spec = ChannelSpec { n, ..self.spec.clone() };
        Ok(build_channel(&spec, rng)?.hh)
    }
}
