//! Operator-valued Stieltjes transforms of the deterministic part, density
//! inversion and support detection.

use std::path::Path;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{kron, partial_trace, resolvent, BlockOperator, CMatrix, HermMatrix};

/// Default number of quadrature nodes in quantile mode.
pub const DEFAULT_QUANTILE_NODES: usize = 4096;

/// Inverse cdf of a real distribution, on `(0, 1]`, extended 1-periodically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum QuantileTable {
    /// Sorted sample; `F^{-1}(u) = values[ceil(u n) - 1]`.
    Step { values: Vec<f64> },
    Uniform { a: f64, b: f64 },
    /// Semicircle of the given radius centered at `center`.
    Semicircle {
        #[serde(default)]
        center: f64,
        radius: f64,
    },
    /// Finite distribution with the given atoms and weights.
    Discrete { values: Vec<f64>, probs: Vec<f64> },
}

impl QuantileTable {
    pub fn validate(&self) -> Result<()> {
        match self {
            QuantileTable::Step { values } => {
                if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
                    return Err(invalid("step quantile table needs finite values"));
                }
                if values.windows(2).any(|w| w[0] > w[1]) {
                    return Err(invalid("step quantile table must be nondecreasing"));
                }
            }
            QuantileTable::Uniform { a, b } => {
                if !(a.is_finite() && b.is_finite() && a <= b) {
                    return Err(invalid("uniform quantile table needs a <= b"));
                }
            }
            QuantileTable::Semicircle { center, radius } => {
                if !(center.is_finite() && *radius > 0.0 && radius.is_finite()) {
                    return Err(invalid("semicircle needs a positive radius"));
                }
            }
            QuantileTable::Discrete { values, probs } => {
                if values.is_empty() || values.len() != probs.len() {
                    return Err(invalid("discrete quantile table needs matching values and probs"));
                }
                if probs.iter().any(|&p| !(p >= 0.0)) || values.iter().any(|v| !v.is_finite()) {
                    return Err(invalid("discrete probabilities must be nonnegative"));
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(invalid(format!("discrete probabilities sum to {total}, not 1")));
                }
            }
        }
        Ok(())
    }

    /// `F^{-1}(u)`, with `u` reduced into `(0, 1]`.
    pub fn inverse_cdf(&self, u: f64) -> f64 {
        let mut u = u - u.floor();
        if u == 0.0 {
            u = 1.0;
        }
        match self {
            QuantileTable::Step { values } => {
                let n = values.len();
                let idx = ((u * n as f64).ceil() as usize).clamp(1, n);
                values[idx - 1]
            }
            QuantileTable::Uniform { a, b } => a + (b - a) * u,
            QuantileTable::Semicircle { center, radius } => center + radius * 0.5 * semicircle_quantile(u),
            QuantileTable::Discrete { values, probs } => {
                let mut pairs: Vec<(f64, f64)> = values.iter().copied().zip(probs.iter().copied()).collect();
                pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
                let mut acc = 0.0;
                for &(v, p) in &pairs {
                    acc += p;
                    if u <= acc + 1e-15 {
                        return v;
                    }
                }
                pairs[pairs.len() - 1].0
            }
        }
    }

    /// Largest absolute value in the support.
    pub fn sup_abs(&self) -> f64 {
        match self {
            QuantileTable::Step { values } => values.iter().fold(0.0, |m, v| m.max(v.abs())),
            QuantileTable::Uniform { a, b } => a.abs().max(b.abs()),
            QuantileTable::Semicircle { center, radius } => center.abs() + radius,
            QuantileTable::Discrete { values, .. } => values.iter().fold(0.0, |m, v| m.max(v.abs())),
        }
    }

    /// Cumulative distribution function.
    pub fn cdf(&self, t: f64) -> f64 {
        match self {
            QuantileTable::Step { values } => {
                values.partition_point(|&v| v <= t) as f64 / values.len() as f64
            }
            QuantileTable::Uniform { a, b } => {
                if t < *a {
                    0.0
                } else if t >= *b {
                    1.0
                } else {
                    (t - a) / (b - a)
                }
            }
            QuantileTable::Semicircle { center, radius } => semicircle_cdf(2.0 * (t - center) / radius),
            QuantileTable::Discrete { values, probs } => values
                .iter()
                .zip(probs)
                .filter(|(v, _)| **v <= t)
                .map(|(_, p)| p)
                .sum(),
        }
    }
}

/// Cdf of the standard semicircle on `[-2, 2]`.
pub fn semicircle_cdf(t: f64) -> f64 {
    if t <= -2.0 {
        return 0.0;
    }
    if t >= 2.0 {
        return 1.0;
    }
    0.5 + t * (4.0 - t * t).sqrt() / (4.0 * std::f64::consts::PI) + (t / 2.0).asin() / std::f64::consts::PI
}

/// Inverse of [`semicircle_cdf`] by safeguarded Newton.
fn semicircle_quantile(u: f64) -> f64 {
    if u >= 1.0 {
        return 2.0;
    }
    if u <= 0.0 {
        return -2.0;
    }
    let (mut lo, mut hi) = (-2.0f64, 2.0f64);
    let mut t = 0.0f64;
    for _ in 0..100 {
        let f = semicircle_cdf(t) - u;
        if f > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let dens = (4.0 - t * t).max(0.0).sqrt() / (2.0 * std::f64::consts::PI);
        let mut next = if dens > 1e-300 { t - f / dens } else { 0.5 * (lo + hi) };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - t).abs() < 1e-15 || hi - lo < 1e-15 {
            return next;
        }
        t = next;
    }
    t
}

/// Law of the deterministic matrices `Y_1, ..., Y_q`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum DeterministicModel {
    /// Explicit Hermitian `N x N` matrices.
    Empirical { matrices: Vec<HermMatrix> },
    /// Diagonal matrices given by inverse cdfs and offsets, approximated by
    /// midpoint quadrature on `nodes` points.
    Quantile {
        tables: Vec<QuantileTable>,
        #[serde(default)]
        offsets: Vec<f64>,
        #[serde(default = "default_nodes")]
        nodes: usize,
    },
}

fn default_nodes() -> usize {
    DEFAULT_QUANTILE_NODES
}

impl DeterministicModel {
    pub fn none() -> Self {
        DeterministicModel::Empirical { matrices: Vec::new() }
    }

    pub fn q(&self) -> usize {
        match self {
            DeterministicModel::Empirical { matrices } => matrices.len(),
            DeterministicModel::Quantile { tables, .. } => tables.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DeterministicModel::Empirical { matrices } => {
                if let Some(n) = matrices.first().map(|m| m.dim()) {
                    if matrices.iter().any(|m| m.dim() != n) {
                        return Err(invalid("empirical matrices must share one size"));
                    }
                }
            }
            DeterministicModel::Quantile { tables, offsets, nodes } => {
                for t in tables {
                    t.validate()?;
                }
                if !offsets.is_empty() && offsets.len() != tables.len() {
                    return Err(invalid("quantile offsets must match the number of tables"));
                }
                if offsets.iter().any(|v| !(0.0..1.0).contains(v)) {
                    return Err(invalid("quantile offsets must lie in [0, 1)"));
                }
                if *nodes == 0 {
                    return Err(invalid("quantile mode needs at least one node"));
                }
            }
        }
        Ok(())
    }

    fn offset(&self, j: usize) -> f64 {
        match self {
            DeterministicModel::Quantile { offsets, .. } => offsets.get(j).copied().unwrap_or(0.0),
            _ => 0.0,
        }
    }

    /// The matrices `Y_j` at size `n`.
    pub fn materialize(&self, n: usize) -> Result<Vec<HermMatrix>> {
        match self {
            DeterministicModel::Empirical { matrices } => {
                if let Some(m) = matrices.first() {
                    if m.dim() != n {
                        return Err(Error::DimensionMismatch {
                            context: "empirical deterministic model",
                            expected: m.dim(),
                            found: n,
                        });
                    }
                }
                Ok(matrices.clone())
            }
            DeterministicModel::Quantile { tables, .. } => Ok(tables
                .iter()
                .enumerate()
                .map(|(j, t)| crate::ensembles::quantile_diag(t, self.offset(j), n))
                .collect()),
        }
    }

    /// Upper bound on `max_j ||Y_j||`.
    pub fn sup_norm(&self) -> f64 {
        match self {
            DeterministicModel::Empirical { matrices } => matrices
                .iter()
                .map(|m| crate::linalg::op_norm(m))
                .fold(0.0, f64::max),
            DeterministicModel::Quantile { tables, .. } => {
                tables.iter().map(|t| t.sup_abs()).fold(0.0, f64::max)
            }
        }
    }
}

/// `G_T(Gamma) = (id (x) tau_N)[(Gamma (x) 1 - T)^{-1}]` for the deterministic
/// part `T = sum_j b_j (x) Y_j`.
pub trait MatrixStieltjes: Send + Sync {
    fn k(&self) -> usize;

    fn eval(&self, gamma: &CMatrix) -> Result<CMatrix>;

    /// Value and the `k^2 x k^2` Jacobian of `E -> D G_T(Gamma)[E]` in
    /// row-major vectorization.
    fn eval_with_jacobian(&self, gamma: &CMatrix) -> Result<(CMatrix, CMatrix)>;

    /// Upper bound on `||T||`.
    fn norm_bound(&self) -> f64;
}

fn check_gamma(gamma: &CMatrix, k: usize) -> Result<()> {
    if !gamma.is_square() || gamma.nrows() != k {
        return Err(Error::DimensionMismatch {
            context: "Stieltjes argument",
            expected: k,
            found: gamma.nrows(),
        });
    }
    Ok(())
}

/// `sum_i w_i (Gamma - B_i)^{-1}`: point masses at Hermitian `B_i`.
#[derive(Clone, Debug)]
pub struct AtomicStieltjes {
    k: usize,
    weights: Vec<f64>,
    atoms: Vec<Vec<C64>>,
    bound: f64,
}

impl AtomicStieltjes {
    /// Equal atoms are merged.
    pub fn new(k: usize, atoms: Vec<(f64, CMatrix)>) -> Result<Self> {
        let mut merged: std::collections::HashMap<Vec<u64>, usize> = Default::default();
        let mut weights = Vec::new();
        let mut flat: Vec<Vec<C64>> = Vec::new();
        for (w, b) in atoms {
            check_gamma(&b, k)?;
            let entries: Vec<C64> = (0..k * k).map(|i| b[(i / k, i % k)]).collect();
            let key: Vec<u64> = entries.iter().flat_map(|z| [z.re.to_bits(), z.im.to_bits()]).collect();
            match merged.get(&key) {
                Some(&i) => weights[i] += w,
                None => {
                    merged.insert(key, flat.len());
                    weights.push(w);
                    flat.push(entries);
                }
            }
        }
        let bound = flat
            .iter()
            .map(|e| e.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        Ok(Self { k, weights, atoms: flat, bound })
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }
}

/// In-place inverse of a small row-major matrix by Gauss-Jordan with
/// partial pivoting.
fn small_inverse(a: &mut [C64], k: usize, out: &mut [C64]) -> Result<()> {
    out.iter_mut().for_each(|z| *z = C64::default());
    for i in 0..k {
        out[i * k + i] = C64::new(1.0, 0.0);
    }
    if k == 1 {
        if a[0] == C64::default() {
            return Err(Error::Singular("atom resolvent"));
        }
        out[0] = 1.0 / a[0];
        return Ok(());
    }
    for col in 0..k {
        let mut piv = col;
        let mut best = a[col * k + col].norm();
        for r in col + 1..k {
            let v = a[r * k + col].norm();
            if v > best {
                best = v;
                piv = r;
            }
        }
        if best == 0.0 || !best.is_finite() {
            return Err(Error::Singular("atom resolvent"));
        }
        if piv != col {
            for j in 0..k {
                a.swap(col * k + j, piv * k + j);
                out.swap(col * k + j, piv * k + j);
            }
        }
        let inv = 1.0 / a[col * k + col];
        for j in 0..k {
            a[col * k + j] *= inv;
            out[col * k + j] *= inv;
        }
        for r in 0..k {
            if r == col {
                continue;
            }
            let f = a[r * k + col];
            if f == C64::default() {
                continue;
            }
            for j in 0..k {
                let (ac, oc) = (a[col * k + j], out[col * k + j]);
                a[r * k + j] -= f * ac;
                out[r * k + j] -= f * oc;
            }
        }
    }
    Ok(())
}

impl AtomicStieltjes {
    fn accumulate(&self, gamma: &CMatrix, jac: bool) -> Result<(CMatrix, Option<CMatrix>)> {
        let k = self.k;
        check_gamma(gamma, k)?;
        let g: Vec<C64> = (0..k * k).map(|i| gamma[(i / k, i % k)]).collect();
        let mut sum = vec![C64::default(); k * k];
        let mut jsum = if jac { vec![C64::default(); k * k * k * k] } else { Vec::new() };
        let mut work = vec![C64::default(); k * k];
        let mut r = vec![C64::default(); k * k];
        for (w, b) in self.weights.iter().zip(&self.atoms) {
            for i in 0..k * k {
                work[i] = g[i] - b[i];
            }
            small_inverse(&mut work, k, &mut r)?;
            for i in 0..k * k {
                sum[i] += r[i] * *w;
            }
            if jac {
                // J[(a,b),(c,d)] -= w R[a,c] R[d,b]
                let kk = k * k;
                for a in 0..k {
                    for bb in 0..k {
                        let row = (a * k + bb) * kk;
                        for c in 0..k {
                            let rac = r[a * k + c] * *w;
                            for d in 0..k {
                                jsum[row + c * k + d] -= rac * r[d * k + bb];
                            }
                        }
                    }
                }
            }
        }
        let g = CMatrix::from_fn(k, k, |i, j| sum[i * k + j]);
        let jm = jac.then(|| CMatrix::from_fn(k * k, k * k, |i, j| jsum[i * k * k + j]));
        Ok((g, jm))
    }
}

impl MatrixStieltjes for AtomicStieltjes {
    fn k(&self) -> usize {
        self.k
    }

    fn eval(&self, gamma: &CMatrix) -> Result<CMatrix> {
        Ok(self.accumulate(gamma, false)?.0)
    }

    fn eval_with_jacobian(&self, gamma: &CMatrix) -> Result<(CMatrix, CMatrix)> {
        let (g, j) = self.accumulate(gamma, true)?;
        Ok((g, j.unwrap()))
    }

    fn norm_bound(&self) -> f64 {
        self.bound
    }
}

/// Dense evaluation through the full `kN x kN` resolvent.
#[derive(Clone, Debug)]
pub struct DenseStieltjes {
    t: BlockOperator,
    bound: f64,
}

impl DenseStieltjes {
    pub fn new(t: BlockOperator) -> Self {
        let bound = crate::linalg::op_norm(t.matrix());
        Self { t, bound }
    }
}

impl MatrixStieltjes for DenseStieltjes {
    fn k(&self) -> usize {
        self.t.k()
    }

    fn eval(&self, gamma: &CMatrix) -> Result<CMatrix> {
        check_gamma(gamma, self.k())?;
        Ok(partial_trace(&resolvent(gamma, &self.t)?))
    }

    fn eval_with_jacobian(&self, gamma: &CMatrix) -> Result<(CMatrix, CMatrix)> {
        check_gamma(gamma, self.k())?;
        let r = resolvent(gamma, &self.t)?;
        let (k, n) = (r.k(), r.n());
        let rm = r.matrix();
        let kk = k * k;
        // J[(u,v),(a,b)] = -(1/N) sum_{i,j} R[(u,i),(a,j)] R[(b,j),(v,i)]
        let mut jm = CMatrix::zeros(kk, kk);
        for u in 0..k {
            for v in 0..k {
                for a in 0..k {
                    for b in 0..k {
                        let mut s = C64::default();
                        for i in 0..n {
                            for j in 0..n {
                                s += rm[(u * n + i, a * n + j)] * rm[(b * n + j, v * n + i)];
                            }
                        }
                        jm[(u * k + v, a * k + b)] = -s / n as f64;
                    }
                }
            }
        }
        Ok((partial_trace(&r), jm))
    }

    fn norm_bound(&self) -> f64 {
        self.bound
    }
}

/// Pick the cheapest exact representation of `G_T` for the model.
pub fn build_stieltjes(model: &DeterministicModel, b: &[HermMatrix], k: usize) -> Result<Box<dyn MatrixStieltjes>> {
    model.validate()?;
    if model.q() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "deterministic coefficients",
            expected: b.len(),
            found: model.q(),
        });
    }
    for bj in b {
        check_gamma(bj, k)?;
    }
    if b.is_empty() {
        return Ok(Box::new(AtomicStieltjes::new(k, vec![(1.0, CMatrix::zeros(k, k))])?));
    }
    match model {
        DeterministicModel::Empirical { matrices } => {
            let n = matrices[0].dim();
            if matrices.iter().all(|m| m.is_diagonal()) {
                let atoms = (0..n)
                    .map(|i| {
                        let mut bm = CMatrix::zeros(k, k);
                        for (bj, y) in b.iter().zip(matrices) {
                            bm += &bj.scale_real(y[(i, i)].re);
                        }
                        (1.0 / n as f64, bm)
                    })
                    .collect();
                Ok(Box::new(AtomicStieltjes::new(k, atoms)?))
            } else {
                let mut t = CMatrix::zeros(k * n, k * n);
                for (bj, y) in b.iter().zip(matrices) {
                    t += &kron(bj, y);
                }
                let t = BlockOperator::new(k, n, HermMatrix::symmetrize(t).into_cmatrix())?;
                Ok(Box::new(DenseStieltjes::new(t)))
            }
        }
        DeterministicModel::Quantile { tables, nodes, .. } => {
            let m = *nodes;
            let atoms = (0..m)
                .map(|i| {
                    let u = (i as f64 + 0.5) / m as f64;
                    let mut bm = CMatrix::zeros(k, k);
                    for (j, (bj, t)) in b.iter().zip(tables).enumerate() {
                        bm += &bj.scale_real(t.inverse_cdf(u + model.offset(j)));
                    }
                    (1.0 / m as f64, bm)
                })
                .collect();
            Ok(Box::new(AtomicStieltjes::new(k, atoms)?))
        }
    }
}

/// One-shot evaluation of `G_T(Gamma)`.
pub fn eval_gt(model: &DeterministicModel, b: &[HermMatrix], gamma: &CMatrix) -> Result<CMatrix> {
    let k = gamma.nrows();
    build_stieltjes(model, b, k)?.eval(gamma)
}

/// `rho = max(0, -Im g / pi)` and the smallest value before clamping.
pub fn invert_density(g: &[C64]) -> (Vec<f64>, f64) {
    let raw: Vec<f64> = g.iter().map(|z| -z.im / std::f64::consts::PI).collect();
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    (raw.into_iter().map(|v| v.max(0.0)).collect(), min)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

/// Maximal runs of grid points with density above `delta`. Gaps shorter
/// than two grid steps are bridged.
pub fn detect_support(grid: &[f64], density: &[f64], delta: f64) -> Result<Vec<Interval>> {
    if grid.len() != density.len() {
        return Err(Error::DimensionMismatch {
            context: "density grid",
            expected: grid.len(),
            found: density.len(),
        });
    }
    let mut runs: Vec<(usize, usize)> = Vec::new();
    let mut i = 0;
    while i < grid.len() {
        if density[i] > delta {
            let start = i;
            while i + 1 < grid.len() && density[i + 1] > delta {
                i += 1;
            }
            runs.push((start, i));
        }
        i += 1;
    }
    if runs.is_empty() {
        return Err(Error::EmptySupport);
    }
    let mut merged: Vec<(usize, usize)> = vec![runs[0]];
    for &(s, e) in &runs[1..] {
        let last = merged.last_mut().unwrap();
        if s - last.1 <= 2 {
            last.1 = e;
        } else {
            merged.push((s, e));
        }
    }
    // Endpoints by linear interpolation of the threshold crossing.
    let cross = |a: usize, b: usize| -> f64 {
        let (da, db) = (density[a] - delta, density[b] - delta);
        if da == db {
            0.5 * (grid[a] + grid[b])
        } else {
            grid[a] + (grid[b] - grid[a]) * da / (da - db)
        }
    };
    Ok(merged
        .into_iter()
        .map(|(s, e)| Interval {
            lo: if s > 0 { cross(s - 1, s) } else { grid[s] },
            hi: if e + 1 < grid.len() { cross(e, e + 1) } else { grid[e] },
        })
        .collect())
}

/// Bisect each endpoint of `support` on `density(t) - delta` between the
/// neighboring grid points.
pub fn refine_support(
    support: &[Interval],
    step: f64,
    delta: f64,
    tol: f64,
    mut density: impl FnMut(f64) -> Result<f64>,
) -> Result<Vec<Interval>> {
    let mut bisect = |inside: f64, outside: f64| -> Result<f64> {
        let (mut a, mut b) = (inside, outside);
        if density(a)? <= delta || density(b)? > delta {
            return Ok(0.5 * (a + b));
        }
        while (b - a).abs() > tol {
            let m = 0.5 * (a + b);
            if density(m)? > delta {
                a = m;
            } else {
                b = m;
            }
        }
        Ok(0.5 * (a + b))
    };
    let mut out = Vec::with_capacity(support.len());
    for iv in support {
        let lo = bisect(iv.lo + step, iv.lo - step)?;
        let hi = bisect(iv.hi - step, iv.hi + step)?;
        out.push(Interval { lo, hi });
    }
    Ok(out)
}

/// `max |endpoint|`.
pub fn norm_estimate(support: &[Interval]) -> Result<f64> {
    support
        .iter()
        .map(|iv| iv.lo.abs().max(iv.hi.abs()))
        .reduce(f64::max)
        .ok_or(Error::EmptySupport)
}

/// Per-point solver record.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointDiagnostics {
    pub t: f64,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Predicted density on a grid, with support and solver diagnostics.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpectralReport {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
    /// Scalar Stieltjes transform at `t + i eta`, as `[re, im]`.
    pub stieltjes: Vec<[f64; 2]>,
    pub support: Vec<Interval>,
    pub norm_estimate: Option<f64>,
    pub eta: f64,
    pub support_threshold: f64,
    pub min_density_before_clamp: f64,
    pub unconverged: usize,
    pub diagnostics: Vec<PointDiagnostics>,
}

impl SpectralReport {
    /// Total mass by the trapezoid rule.
    pub fn mass(&self) -> f64 {
        trapezoid(&self.grid, &self.density)
    }

    /// Predicted cdf at the grid points, normalized to end at 1.
    pub fn cdf(&self) -> Vec<f64> {
        let mut acc = vec![0.0; self.grid.len()];
        for i in 1..self.grid.len() {
            acc[i] = acc[i - 1] + 0.5 * (self.density[i] + self.density[i - 1]) * (self.grid[i] - self.grid[i - 1]);
        }
        let total = acc.last().copied().unwrap_or(0.0);
        if total > 0.0 {
            acc.iter_mut().for_each(|v| *v /= total);
        }
        acc
    }

    /// `t,density` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,density\n");
        for (t, d) in self.grid.iter().zip(&self.density) {
            out.push_str(&format!("{t},{d}\n"));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (ys[0] + ys[1]) * (xs[1] - xs[0]))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn zero_model_gives_inverse() {
        let model = DeterministicModel::none();
        let g = eval_gt(&model, &[], &CMatrix::scalar(1, c(0.0, 1.0))).unwrap();
        assert!((g[(0, 0)] - c(0.0, -1.0)).norm() < 1e-15);
    }

    #[test]
    fn bernoulli_atoms() {
        let y = HermMatrix::from_real_diag(&[1.0, -1.0, 1.0, -1.0]);
        let model = DeterministicModel::Empirical { matrices: vec![y] };
        let b = vec![HermMatrix::identity(1)];
        let gt = build_stieltjes(&model, &b, 1).unwrap();
        let z = c(0.3, 0.7);
        let g = gt.eval(&CMatrix::scalar(1, z)).unwrap()[(0, 0)];
        let expect = 0.5 / (z - 1.0) + 0.5 / (z + 1.0);
        assert!((g - expect).norm() < 1e-14);
    }

    #[test]
    fn atoms_are_merged() {
        let y = HermMatrix::from_real_diag(&[1.0, -1.0, 1.0, -1.0, 1.0]);
        let model = DeterministicModel::Empirical { matrices: vec![y] };
        let atoms = match &model {
            DeterministicModel::Empirical { matrices } => (0..5)
                .map(|i| (0.2, CMatrix::scalar(1, matrices[0][(i, i)])))
                .collect(),
            _ => unreachable!(),
        };
        let a = AtomicStieltjes::new(1, atoms).unwrap();
        assert_eq!(a.len(), 2);
    }

    #[test]
    fn dense_matches_atomic_for_diagonal_model() {
        let n = 6;
        let y = HermMatrix::from_real_diag(&[0.5, -1.0, 2.0, 0.0, 1.5, -0.3]);
        let b = vec![HermMatrix::from_real_rows(&[vec![1.0, 0.5], vec![0.5, -1.0]]).unwrap()];
        let gamma = CMatrix::from_rows(&[vec![c(0.1, 1.0), c(0.2, 0.0)], vec![c(0.2, 0.0), c(-0.3, 2.0)]]).unwrap();
        let atomic = build_stieltjes(&DeterministicModel::Empirical { matrices: vec![y.clone()] }, &b, 2).unwrap();
        let t = BlockOperator::new(2, n, kron(&b[0], &y)).unwrap();
        let dense = DenseStieltjes::new(t);
        let (ga, ja) = atomic.eval_with_jacobian(&gamma).unwrap();
        let (gd, jd) = dense.eval_with_jacobian(&gamma).unwrap();
        assert!(ga.max_abs_diff(&gd) < 1e-13);
        assert!(ja.max_abs_diff(&jd) < 1e-13);
    }

    #[test]
    fn jacobian_matches_finite_difference() {
        let y = HermMatrix::from_real_diag(&[0.5, -1.0, 2.0]);
        let b = vec![HermMatrix::from_real_rows(&[vec![1.0, 0.5], vec![0.5, -1.0]]).unwrap()];
        let gt = build_stieltjes(&DeterministicModel::Empirical { matrices: vec![y] }, &b, 2).unwrap();
        let gamma = CMatrix::from_rows(&[vec![c(0.1, 1.0), c(0.2, 0.1)], vec![c(0.2, -0.1), c(-0.3, 2.0)]]).unwrap();
        let (g0, j) = gt.eval_with_jacobian(&gamma).unwrap();
        let h = 1e-6;
        for idx in 0..4 {
            let mut e = CMatrix::zeros(2, 2);
            e[(idx / 2, idx % 2)] = c(h, 0.0);
            let g1 = gt.eval(&(&gamma + &e)).unwrap();
            for out in 0..4 {
                let fd = (g1[(out / 2, out % 2)] - g0[(out / 2, out % 2)]) / h;
                assert!((fd - j[(out, idx)]).norm() < 1e-5);
            }
        }
    }

    #[test]
    fn quantile_matches_sorted_empirical() {
        let vals = vec![-1.3, -0.2, 0.0, 0.4, 0.9, 2.2, 3.1];
        let n = vals.len();
        let empirical = DeterministicModel::Empirical { matrices: vec![HermMatrix::from_real_diag(&vals)] };
        let quantile = DeterministicModel::Quantile {
            tables: vec![QuantileTable::Step { values: vals }],
            offsets: vec![0.0],
            nodes: n,
        };
        let b = vec![HermMatrix::identity(1)];
        let gamma = CMatrix::scalar(1, c(0.25, 0.4));
        let a = eval_gt(&empirical, &b, &gamma).unwrap();
        let q = eval_gt(&quantile, &b, &gamma).unwrap();
        assert!(a.max_abs_diff(&q) <= 1e-8);
    }

    #[test]
    fn quantile_tables_are_periodic() {
        let t = QuantileTable::Uniform { a: -1.0, b: 1.0 };
        assert!((t.inverse_cdf(0.25) - t.inverse_cdf(1.25)).abs() < 1e-15);
        assert_eq!(t.inverse_cdf(0.0), 1.0);
        let s = QuantileTable::Semicircle { center: 0.0, radius: 2.0 };
        for u in [0.01, 0.3, 0.5, 0.77, 0.999] {
            assert!((semicircle_cdf(s.inverse_cdf(u)) - u).abs() < 1e-12);
        }
        let d = QuantileTable::Discrete { values: vec![1.0, -1.0], probs: vec![0.5, 0.5] };
        assert_eq!(d.inverse_cdf(0.3), -1.0);
        assert_eq!(d.inverse_cdf(0.7), 1.0);
    }

    #[test]
    fn density_inversion_clamps() {
        let (rho, min) = invert_density(&[c(0.0, -std::f64::consts::PI), c(0.0, 1e-12)]);
        assert!((rho[0] - 1.0).abs() < 1e-15);
        assert_eq!(rho[1], 0.0);
        assert!(min < 0.0);
    }

    #[test]
    fn support_of_two_bumps() {
        let grid: Vec<f64> = (0..=100).map(|i| i as f64 * 0.1 - 5.0).collect();
        let density: Vec<f64> = grid
            .iter()
            .map(|&t| if (-3.0..=-1.0).contains(&t) || (1.0..=3.0).contains(&t) { 0.5 } else { 0.0 })
            .collect();
        let s = detect_support(&grid, &density, 1e-2).unwrap();
        assert_eq!(s.len(), 2);
        assert!((s[0].lo + 3.1).abs() < 0.1 && (s[1].hi - 3.1).abs() < 0.1);
        assert!((norm_estimate(&s).unwrap() - 3.1).abs() < 0.1);
        assert!(matches!(detect_support(&grid, &vec![0.0; grid.len()], 1e-2), Err(Error::EmptySupport)));
    }
}
