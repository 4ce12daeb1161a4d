//! Matrix fixed point `G = G_T(Lambda - a0 - R_s(G))` and the spectral
//! pipeline built on it.

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{imag_part, in_upper_half, kron, min_imag_eigenvalue, op_norm, CMatrix, HermMatrix};
use crate::pencil::{covariance_map, LinearizationCertificate, Pencil};
use crate::stieltjes::{
    build_stieltjes, detect_support, invert_density, norm_estimate, refine_support, DeterministicModel,
    MatrixStieltjes, PointDiagnostics, SpectralReport,
};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Initial Picard damping in `(0, 1]`.
    pub damping: f64,
    /// Switch to Newton steps when Picard contracts slowly.
    pub newton: bool,
    /// Starting imaginary shift of the continuation; automatic when absent.
    pub start_im: Option<f64>,
    /// Geometric factor of the continuation.
    pub step_factor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { tol: 1e-12, max_iter: 10_000, damping: 1.0, newton: true, start_im: None, step_factor: 0.9 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(invalid("solver needs tol > 0 and max_iter >= 1"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(invalid("damping must lie in (0, 1]"));
        }
        if !(self.step_factor > 0.0 && self.step_factor < 1.0) {
            return Err(invalid("continuation step factor must lie in (0, 1)"));
        }
        if let Some(s) = self.start_im {
            if !(s > 0.0) {
                return Err(invalid("start_im must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SubordinationSolution {
    pub g: CMatrix,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    /// `||(Im Lambda)^{-1}||^2 sum ||a_j||^2 < 1`.
    pub in_contraction_domain: bool,
    pub residual_history: Vec<f64>,
}

/// How the scalar Stieltjes transform is read off the matrix solution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Readout {
    /// Linearized polynomial: `Lambda = diag(lambda, i eps, ..)`, value `G[0][0]`.
    Corner { epsilon_pad: f64 },
    /// Plain pencil: `Lambda = lambda 1_k`, value `tau_k(G)`.
    Trace,
}

/// The fixed-point problem of one pencil and deterministic model.
pub struct Subordination {
    gt: Box<dyn MatrixStieltjes>,
    a0: HermMatrix,
    a: Vec<HermMatrix>,
    rs_jacobian: CMatrix,
    variance_norm: f64,
    a0_norm: f64,
}

impl Subordination {
    pub fn new(pencil: &Pencil, model: &DeterministicModel) -> Result<Self> {
        let gt = build_stieltjes(model, &pencil.b, pencil.k)?;
        Ok(Self::from_parts(gt, pencil.a0.clone(), pencil.a.clone()))
    }

    pub fn from_parts(gt: Box<dyn MatrixStieltjes>, a0: HermMatrix, a: Vec<HermMatrix>) -> Self {
        let k = a0.dim();
        let mut rs_jacobian = CMatrix::zeros(k * k, k * k);
        for aj in &a {
            rs_jacobian += &kron(aj, &aj.transpose());
        }
        let variance_norm = a.iter().map(|m| op_norm(m).powi(2)).sum();
        let a0_norm = op_norm(&a0);
        Self { gt, a0, a, rs_jacobian, variance_norm, a0_norm }
    }

    pub fn k(&self) -> usize {
        self.a0.dim()
    }

    pub fn stieltjes(&self) -> &dyn MatrixStieltjes {
        self.gt.as_ref()
    }

    pub fn a0(&self) -> &HermMatrix {
        &self.a0
    }

    pub fn a(&self) -> &[HermMatrix] {
        &self.a
    }

    /// `sum_j ||a_j||^2`.
    pub fn variance_norm(&self) -> f64 {
        self.variance_norm
    }

    pub fn covariance_map(&self, m: &CMatrix) -> CMatrix {
        covariance_map(&self.a, m)
    }

    fn omega(&self, lambda: &CMatrix, g: &CMatrix) -> CMatrix {
        &(lambda - self.a0.as_cmatrix()) - &self.covariance_map(g)
    }

    /// `Phi(G)` and optionally the Jacobian of `F(G) = G - Phi(G)`.
    fn phi(&self, lambda: &CMatrix, g: &CMatrix, jac: bool) -> Result<(CMatrix, Option<CMatrix>)> {
        let om = self.omega(lambda, g);
        if jac {
            let (v, jg) = self.gt.eval_with_jacobian(&om)?;
            let kk = self.k() * self.k();
            let mut jf = &jg * &self.rs_jacobian;
            for i in 0..kk {
                jf[(i, i)] += C64::new(1.0, 0.0);
            }
            Ok((v, Some(jf)))
        } else {
            Ok((self.gt.eval(&om)?, None))
        }
    }

    /// Starting value `G_T(Lambda - a0)`.
    pub fn initial_guess(&self, lambda: &CMatrix) -> Result<CMatrix> {
        self.gt.eval(&(lambda - self.a0.as_cmatrix()))
    }

    pub fn contraction_product(&self, lambda: &CMatrix) -> f64 {
        let inv = 1.0 / min_imag_eigenvalue(lambda);
        inv * inv * self.variance_norm
    }

    /// Solve at one spectral argument, from `warm` when given.
    pub fn solve_point(
        &self,
        lambda: &CMatrix,
        cfg: &SolverConfig,
        warm: Option<&CMatrix>,
    ) -> Result<SubordinationSolution> {
        let k = self.k();
        if !lambda.is_square() || lambda.nrows() != k {
            return Err(Error::DimensionMismatch { context: "spectral argument", expected: k, found: lambda.nrows() });
        }
        if !in_upper_half(lambda) {
            return Err(Error::NotUpperHalfPlane { context: "spectral argument", min_imag: min_imag_eigenvalue(lambda) });
        }
        let contraction = self.contraction_product(lambda) < 1.0;
        let mut g = match warm {
            Some(w) if in_lower_half(w) => w.clone(),
            _ => self.initial_guess(lambda)?,
        };
        let mut theta = cfg.damping;
        let mut history = Vec::new();
        let (mut phi_g, mut jac) = self.phi(lambda, &g, false)?;
        let mut use_newton = cfg.newton && !contraction;
        for iter in 0..cfg.max_iter {
            let f = &g - &phi_g;
            let r = f.frobenius_norm();
            history.push(r);
            if r <= cfg.tol {
                return Ok(SubordinationSolution {
                    g,
                    residual: r,
                    iterations: iter,
                    converged: true,
                    in_contraction_domain: contraction,
                    residual_history: history,
                });
            }
            if !r.is_finite() {
                break;
            }
            if cfg.newton && !use_newton && history.len() >= 3 {
                let n = history.len();
                if history[n - 1] > 0.5 * history[n - 2] {
                    use_newton = true;
                }
            }
            if use_newton {
                if jac.is_none() {
                    jac = self.phi(lambda, &g, true)?.1;
                }
                if let Some((g_new, phi_new, jac_new)) = self.newton_step(lambda, &g, &f, r, jac.as_ref().unwrap())? {
                    g = g_new;
                    phi_g = phi_new;
                    jac = Some(jac_new);
                    continue;
                }
                // Newton failed to decrease the residual: fall back to a
                // damped Picard step.
                theta = (0.5 * theta).max(1e-3);
            }
            let n = history.len();
            if n >= 3 && history[n - 1] > history[n - 2] && history[n - 2] > history[n - 3] {
                theta *= 0.5;
            }
            g = &g.scale_real(1.0 - theta) + &phi_g.scale_real(theta);
            let (p, _) = self.phi(lambda, &g, false)?;
            phi_g = p;
            jac = None;
        }
        let r = (&g - &phi_g).frobenius_norm();
        Ok(SubordinationSolution {
            g,
            residual: r,
            iterations: cfg.max_iter,
            converged: false,
            in_contraction_domain: contraction,
            residual_history: history,
        })
    }

    #[allow(clippy::type_complexity)]
    fn newton_step(
        &self,
        lambda: &CMatrix,
        g: &CMatrix,
        f: &CMatrix,
        r: f64,
        jf: &CMatrix,
    ) -> Result<Option<(CMatrix, CMatrix, CMatrix)>> {
        let k = self.k();
        let rhs = CMatrix::from_fn(k * k, 1, |i, _| -f[(i / k, i % k)]);
        let delta = match jf.solve(&rhs) {
            Ok(d) => d,
            Err(_) => return Ok(None),
        };
        let delta = CMatrix::from_fn(k, k, |i, j| delta[(i * k + j, 0)]);
        let mut alpha = 1.0;
        for _ in 0..12 {
            let trial = g + &delta.scale_real(alpha);
            if in_lower_half(&trial) {
                if let Ok((p, Some(j))) = self.phi(lambda, &trial, true) {
                    let rt = (&trial - &p).frobenius_norm();
                    if rt < r {
                        return Ok(Some((trial, p, j)));
                    }
                }
            }
            alpha *= 0.5;
        }
        Ok(None)
    }

    /// Automatic continuation start: far enough up that Picard contracts.
    pub fn default_start_im(&self) -> f64 {
        8.0 * self.a.iter().map(|m| op_norm(m)).sum::<f64>() + self.a0_norm + self.gt.norm_bound() + 1.0
    }

    /// Solve at `lambda` by descending from `lambda + i s 1` with large `s`.
    pub fn solve_continuation(&self, lambda: &CMatrix, cfg: &SolverConfig) -> Result<SubordinationSolution> {
        if !in_upper_half(lambda) {
            return Err(Error::NotUpperHalfPlane { context: "spectral argument", min_imag: min_imag_eigenvalue(lambda) });
        }
        let k = self.k();
        let floor = min_imag_eigenvalue(lambda);
        let shift = |s: f64| -> CMatrix {
            let mut m = lambda.clone();
            for i in 0..k {
                m[(i, i)] += C64::new(0.0, s);
            }
            m
        };
        let mut s = cfg.start_im.unwrap_or_else(|| self.default_start_im());
        let mut sol = self.solve_point(&shift(s), cfg, None)?;
        let mut total = sol.iterations;
        let mut factor = cfg.step_factor;
        let mut history = Vec::new();
        loop {
            // Jump straight to the target once the shift is negligible.
            let next = if s * factor < 1e-3 * floor { 0.0 } else { s * factor };
            let attempt = self.solve_point(&shift(next), cfg, Some(&sol.g));
            match attempt {
                Ok(a) if a.converged && in_lower_half(&a.g) => {
                    total += a.iterations;
                    let quick = a.iterations <= 4;
                    history.push(a.residual);
                    sol = a;
                    s = next;
                    if s == 0.0 {
                        break;
                    }
                    if quick {
                        factor = (factor * factor).max(1e-3);
                    }
                }
                _ => {
                    factor = factor.sqrt();
                    if factor > 0.999_999 {
                        // Cannot make progress: return the last attempt at the target.
                        let mut last = self.solve_point(lambda, cfg, Some(&sol.g))?;
                        last.iterations += total;
                        return Ok(last);
                    }
                }
            }
        }
        sol.iterations = total;
        Ok(sol)
    }

    /// Evaluate the scalar transform at `t + i eta` under `readout`.
    pub fn solve_scalar(&self, t: f64, eta: f64, readout: Readout, cfg: &SolverConfig) -> Result<(C64, SubordinationSolution)> {
        let k = self.k();
        let z = C64::new(t, eta);
        let lambda = match readout {
            Readout::Corner { epsilon_pad } => CMatrix::from_fn(k, k, |u, v| match (u, v) {
                (0, 0) => z,
                (u, v) if u == v => C64::new(0.0, epsilon_pad),
                _ => C64::default(),
            }),
            Readout::Trace => CMatrix::scalar(k, z),
        };
        let sol = self.solve_continuation(&lambda, cfg)?;
        let g = match readout {
            Readout::Corner { .. } => sol.g[(0, 0)],
            Readout::Trace => sol.g.normalized_trace(),
        };
        Ok((g, sol))
    }
}

/// `Im m` negative definite.
fn in_lower_half(m: &CMatrix) -> bool {
    if !m.is_finite() {
        return false;
    }
    let im = imag_part(m);
    match im.eigenvalues() {
        Ok(v) => v[v.len() - 1] < 0.0,
        Err(_) => false,
    }
}

/// Grid and smoothing parameters for a density computation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GridSpec {
    pub t_min: f64,
    pub t_max: f64,
    pub step: f64,
    pub eta: f64,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_min < self.t_max && self.step > 0.0 && self.eta > 0.0) {
            return Err(invalid("grid needs t_min < t_max, step > 0 and eta > 0"));
        }
        if (self.t_max - self.t_min) / self.step > 1e7 {
            return Err(invalid("grid has too many points"));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<f64> {
        let n = ((self.t_max - self.t_min) / self.step + 1e-9).floor() as usize;
        (0..=n).map(|i| self.t_min + i as f64 * self.step).collect()
    }
}

/// Default density threshold for support detection.
pub const DEFAULT_SUPPORT_THRESHOLD: f64 = 1e-2;

/// Density, support and diagnostics on a grid. Columns are solved
/// independently and in parallel.
pub fn solve_grid(
    problem: &Subordination,
    grid: &GridSpec,
    readout: Readout,
    cfg: &SolverConfig,
    support_threshold: f64,
    transform: &(dyn Fn(C64, C64) -> C64 + Sync),
) -> Result<SpectralReport> {
    grid.validate()?;
    cfg.validate()?;
    let ts = grid.points();
    let cols: Vec<Result<(C64, PointDiagnostics)>> = ts
        .par_iter()
        .map(|&t| {
            let (g, sol) = problem.solve_scalar(t, grid.eta, readout, cfg)?;
            let g = transform(g, C64::new(t, grid.eta));
            Ok((g, PointDiagnostics { t, residual: sol.residual, iterations: sol.iterations, converged: sol.converged }))
        })
        .collect();
    let mut gs = Vec::with_capacity(ts.len());
    let mut diagnostics = Vec::with_capacity(ts.len());
    for c in cols {
        let (g, d) = c?;
        gs.push(g);
        diagnostics.push(d);
    }
    let (density, min_raw) = invert_density(&gs);
    let unconverged = diagnostics.iter().filter(|d| !d.converged).count();
    let support = match detect_support(&ts, &density, support_threshold) {
        Ok(s) => {
            let dens_at = |t: f64| -> Result<f64> {
                let (g, _) = problem.solve_scalar(t, grid.eta, readout, cfg)?;
                let g = transform(g, C64::new(t, grid.eta));
                Ok((-g.im / std::f64::consts::PI).max(0.0))
            };
            refine_support(&s, grid.step, support_threshold, 1e-2 * grid.step, dens_at)?
        }
        Err(Error::EmptySupport) => Vec::new(),
        Err(e) => return Err(e),
    };
    let norm = norm_estimate(&support).ok();
    Ok(SpectralReport {
        grid: ts,
        density,
        stieltjes: gs.iter().map(|z| [z.re, z.im]).collect(),
        support,
        norm_estimate: norm,
        eta: grid.eta,
        support_threshold,
        min_density_before_clamp: min_raw,
        unconverged,
        diagnostics,
    })
}

/// Density of a linearized polynomial.
pub fn polynomial_density(
    cert: &LinearizationCertificate,
    model: &DeterministicModel,
    grid: &GridSpec,
    cfg: &SolverConfig,
    support_threshold: f64,
) -> Result<SpectralReport> {
    let problem = Subordination::new(&cert.pencil, model)?;
    let readout = Readout::Corner { epsilon_pad: cert.epsilon_pad };
    solve_grid(&problem, grid, readout, cfg, support_threshold, &|g, _| g)
}

#[derive(Clone, Debug)]
pub struct ThetaResidual {
    pub theta: CMatrix,
    pub norm: f64,
}

/// `Theta = G_hat - G_T(Lambda - a0 - R_s(G_hat))`.
pub fn theta_residual(problem: &Subordination, g_hat: &CMatrix, lambda: &CMatrix) -> Result<ThetaResidual> {
    let gamma = problem.omega(lambda, g_hat);
    if !in_upper_half(&gamma) {
        return Err(Error::NotUpperHalfPlane {
            context: "Lambda - a0 - R_s(G_hat)",
            min_imag: min_imag_eigenvalue(&gamma),
        });
    }
    let theta = g_hat - &problem.stieltjes().eval(&gamma)?;
    let norm = op_norm(&theta);
    Ok(ThetaResidual { theta, norm })
}

/// Perturbation bound `||G_hat - G|| <= (1 + eps^{-1} S ||(Im Lambda)^{-1}||^2) ||Theta||`
/// with `S = sum ||a_j||^2`, valid when
/// `kappa = ||Theta|| ||(Im Lambda)^{-1}|| S < 1 - eps`.
pub fn stability_bound(theta_norm: f64, lambda: &CMatrix, a: &[HermMatrix], eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(invalid("stability margin must lie in (0, 1)"));
    }
    if !in_upper_half(lambda) {
        return Err(Error::NotUpperHalfPlane { context: "spectral argument", min_imag: min_imag_eigenvalue(lambda) });
    }
    let inv_im = 1.0 / min_imag_eigenvalue(lambda);
    let s: f64 = a.iter().map(|m| op_norm(m).powi(2)).sum();
    let kappa = theta_norm * inv_im * s;
    if kappa >= 1.0 - eps {
        return Err(Error::BoundUnavailable { kappa });
    }
    Ok((1.0 + s * inv_im * inv_im / eps) * theta_norm)
}
