//! Acceptance runner: one PASS/FAIL line per criterion.
//!
//! Run a subset with `cargo test --test acceptance -- 1 5`.

mod support;

use std::time::{Duration, Instant};

use freespec::ensembles::{
    embedding_identity_check, quantile_values, RngSpec, ShapeSpec, WishartSpec,
};
use freespec::experiments::{
    histogram_vs_density, pooled_eigenvalues, sd_mean_residual, spectrum_inclusion, theta_decay, theta_envelope,
    McSetup,
};
use freespec::linalg::{resolvent, CMatrix, HermMatrix};
use freespec::pencil::{linearize, NCPolynomial};
use freespec::scenario::Scenario;
use freespec::stieltjes::{semicircle_cdf, DeterministicModel, QuantileTable, SpectralReport};
use freespec::C64;
use proptest::test_runner::{Config, TestRunner};
use rand::Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

type Check = fn() -> Result<Outcome, String>;

fn e2s(e: freespec::Error) -> String {
    e.to_string()
}

fn interp(report: &SpectralReport, t: f64) -> f64 {
    let g = &report.grid;
    let i = g.partition_point(|&x| x <= t).clamp(1, g.len() - 1) - 1;
    let w = (t - g[i]) / (g[i + 1] - g[i]);
    report.density[i] * (1.0 - w) + report.density[i + 1] * w
}

fn outer_edges(report: &SpectralReport) -> Result<(f64, f64), String> {
    let lo = report.support.first().ok_or("empty support")?.lo;
    let hi = report.support.last().ok_or("empty support")?.hi;
    Ok((lo, hi))
}

fn c1_semicircle() -> Result<Outcome, String> {
    let start = Instant::now();
    let s = Scenario::bundled("semicircle").map_err(e2s)?;
    let r = s.density().map_err(e2s)?;
    let elapsed = start.elapsed();
    let err = r
        .grid
        .iter()
        .zip(&r.density)
        .map(|(&t, &d)| (d - (4.0 - t * t).max(0.0).sqrt() / (2.0 * std::f64::consts::PI)).abs())
        .fold(0.0, f64::max);
    let (lo, hi) = outer_edges(&r)?;
    let rho0 = interp(&r, 0.0);
    let passed = err <= 2e-2
        && (lo + 2.0).abs() <= 0.05
        && (hi - 2.0).abs() <= 0.05
        && (rho0 - 1.0 / std::f64::consts::PI).abs() <= 0.01
        && elapsed <= Duration::from_secs(10)
        && r.unconverged == 0;
    Ok(Outcome {
        passed,
        detail: format!(
            "sup error {err:.2e}, support [{lo:.4}, {hi:.4}], rho(0) {rho0:.5}, {} unconverged, {:.2}s",
            r.unconverged,
            elapsed.as_secs_f64()
        ),
    })
}

fn c2_free_sum() -> Result<Outcome, String> {
    let s = Scenario::bundled("free-sum").map_err(e2s)?;
    let r = s.density().map_err(e2s)?;
    let (lo, hi) = outer_edges(&r)?;
    let norm = r.norm_estimate.ok_or("no norm estimate")?;
    let edge = 2.0 * 2f64.sqrt();
    // Monte Carlo oracle: operator norm of X1 + X2.
    let n = 2000;
    let sampler = s.sampler().map_err(e2s)?;
    let mut mc = 0.0;
    for i in 0..5 {
        let mut rng = RngSpec::new(s.seed, 1000 + i).rng();
        let e = sampler.sample(n, &mut rng).map_err(e2s)?.eigenvalues().map_err(e2s)?;
        mc += e[0].abs().max(e[n - 1].abs()) / 5.0;
    }
    let passed = (lo + edge).abs() <= 0.05
        && (hi - edge).abs() <= 0.05
        && (2.78..=2.88).contains(&norm)
        && (norm - mc).abs() <= 0.05;
    Ok(Outcome {
        passed,
        detail: format!("support [{lo:.4}, {hi:.4}], norm estimate {norm:.4}, Monte Carlo norm {mc:.4} (N = {n})"),
    })
}

fn random_herm(n: usize, rng: &mut impl Rng) -> HermMatrix {
    let m = CMatrix::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    HermMatrix::symmetrize(m.scale_real(1.0 / (n as f64).sqrt()))
}

fn c3_linearization() -> Result<Outcome, String> {
    let start = Instant::now();
    let mut rng = RngSpec::new(3, 0).rng();
    let mut worst = 0.0f64;
    for text in ["x1*x1", "x1*y1 + y1*x1", "x1*y1*x1 + y1"] {
        let p = NCPolynomial::parse(text).map_err(e2s)?;
        let cert = linearize(&p).map_err(e2s)?;
        for n in [2, 3, 5] {
            let x = vec![random_herm(n, &mut rng)];
            let y = if p.q() > 0 { vec![random_herm(n, &mut rng)] } else { vec![] };
            let l = cert.pencil.evaluate(&x, &y).map_err(e2s)?;
            let pv = p.evaluate_hermitian(&x, &y).map_err(e2s)?;
            for i in 0..10 {
                let lambda = C64::new(-3.0 + 6.0 * i as f64 / 9.0, 0.5);
                let h = resolvent(&cert.spectral_argument(lambda), &l).map_err(e2s)?;
                let direct = (&CMatrix::scalar(n, lambda) - pv.as_cmatrix()).inverse().map_err(e2s)?;
                worst = worst.max(h.block(0, 0).max_abs_diff(&direct));
            }
        }
    }
    let elapsed = start.elapsed();
    Ok(Outcome {
        passed: worst <= 1e-6 && elapsed <= Duration::from_secs(1),
        detail: format!("max deviation {worst:.2e}, {:.3}s", elapsed.as_secs_f64()),
    })
}

fn c4_embedding() -> Result<Outcome, String> {
    let start = Instant::now();
    let n = 50;
    let spec = WishartSpec { r: 1, s: vec![1], z: vec![ShapeSpec::Identity], n };
    let mut rng = RngSpec::new(4, 0).rng();
    let y = vec![CMatrix::from_fn(n, n, |_, _| C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))];
    let suite = ["x1", "x1*x1", "x1*x1*x1", "x1*y1", "y1*x1*y1^*", "x1*y1*x1*y1^*", "y1^**x1*x1*y1"];
    let mut worst = 0.0f64;
    for (i, text) in suite.iter().enumerate() {
        let p = NCPolynomial::parse(text).map_err(e2s)?;
        let ys: Vec<CMatrix> = y[..p.q()].to_vec();
        let mut rng = RngSpec::new(4, 1 + i as u64).rng();
        let c = embedding_identity_check(&p, &spec, &ys, &mut rng).map_err(e2s)?;
        worst = worst.max(c.deviation);
    }
    let elapsed = start.elapsed();
    Ok(Outcome {
        passed: worst <= 1e-10 && elapsed <= Duration::from_secs(5),
        detail: format!("max relative deviation {worst:.2e} over {} monomials, {:.2}s", suite.len(), elapsed.as_secs_f64()),
    })
}

fn c5_white_wishart() -> Result<Outcome, String> {
    let s = Scenario::bundled("marchenko-pastur").map_err(e2s)?;
    let r = s.density().map_err(e2s)?;
    let (_, hi) = outer_edges(&r)?;
    let eigs = pooled_eigenvalues(s.sampler().map_err(e2s)?.as_ref(), 1000, 1, s.seed).map_err(e2s)?;
    let ks = histogram_vs_density(&eigs, &r).map_err(e2s)?;
    Ok(Outcome {
        passed: ks <= 0.05 && (hi - 4.0).abs() <= 0.1,
        detail: format!("KS {ks:.4} against N = 1000, upper edge {hi:.4}, mass {:.4}", r.mass()),
    })
}

fn theta_setup() -> Result<(Scenario, freespec::pencil::Pencil, DeterministicModel), String> {
    let s = Scenario::bundled("theta-decay").map_err(e2s)?;
    let cert = s.certificate().map_err(e2s)?;
    let model = match &s.system {
        freespec::scenario::System::Polynomial { model, .. } => model.clone(),
        _ => return Err("theta-decay is not a polynomial scenario".into()),
    };
    Ok((s, cert.pencil, model))
}

fn c6_theta_decay() -> Result<Outcome, String> {
    let start = Instant::now();
    let (s, pencil, model) = theta_setup()?;
    let setup = McSetup { pencil: &pencil, model: &model };
    let lambda = CMatrix::scalar(pencil.k, C64::new(0.0, 2.0));
    let decay = theta_decay(&setup, &[100, 200, 400, 800], 200, &lambda, s.seed, -1.6).map_err(e2s)?;
    let env = theta_envelope(&setup, 200, 200, 2.0, 4.0, 32.0 * 1.5, s.seed).map_err(e2s)?;
    let elapsed = start.elapsed();
    let slope = decay.slope.unwrap_or(f64::NAN);
    let norms: Vec<String> = decay.per_n.iter().map(|p| format!("{}:{:.2e}", p.n, p.mean)).collect();
    Ok(Outcome {
        passed: decay.passed && env.passed && elapsed <= Duration::from_secs(600),
        detail: format!(
            "slope {slope:.3} [{}], envelope {}, {:.0}s",
            norms.join(" "),
            env.message,
            elapsed.as_secs_f64()
        ),
    })
}

fn c7_sd_residual() -> Result<Outcome, String> {
    let start = Instant::now();
    let (s, pencil, model) = theta_setup()?;
    let mut lines = Vec::new();
    let mut passed = true;
    // k = 1 from the bundled scenario, and a k = 2 pencil.
    let square = linearize(&NCPolynomial::parse("x1*x1 + y1").map_err(e2s)?).map_err(e2s)?;
    for (pencil, label) in [(&pencil, "x1 + y1"), (&square.pencil, "x1*x1 + y1")] {
        if pencil.k > 2 {
            return Err(format!("{label} linearizes to k = {}", pencil.k));
        }
        let setup = McSetup { pencil, model: &model };
        let k = pencil.k;
        let l = CMatrix::scalar(k, C64::new(0.0, 2.0));
        let g = CMatrix::scalar(k, C64::new(0.0, 3.0));
        let r = sd_mean_residual(&setup, 200, 500, &l, &g, s.seed).map_err(e2s)?;
        passed &= r.passed;
        lines.push(format!("k = {k}: {:.2e} vs 3 x {:.2e}", r.residual, r.stderr));
    }
    let elapsed = start.elapsed();
    Ok(Outcome {
        passed: passed && elapsed <= Duration::from_secs(120),
        detail: format!("{}, {:.0}s", lines.join("; "), elapsed.as_secs_f64()),
    })
}

fn c8_inclusion() -> Result<Outcome, String> {
    let mut passed = true;
    let mut lines = Vec::new();
    for name in ["semicircle", "free-sum", "bernoulli-anticommutator"] {
        let s = Scenario::bundled(name).map_err(e2s)?;
        let r = s.density().map_err(e2s)?;
        let res = spectrum_inclusion(s.sampler().map_err(e2s)?.as_ref(), &r.support, 1000, 20, 0.15, s.seed)
            .map_err(e2s)?;
        passed &= res.passed;
        lines.push(format!(
            "{name}: {} (max outside {:.3})",
            res.message,
            res.metrics["max_distance_outside"]
        ));
    }
    Ok(Outcome { passed, detail: lines.join("; ") })
}

fn c9_quantiles() -> Result<Outcome, String> {
    let n = 10_000;
    let tol = 5.0 / (n as f64).sqrt();
    let tables = [
        ("uniform", QuantileTable::Uniform { a: -1.0, b: 1.0 }),
        ("semicircle", QuantileTable::Semicircle { center: 0.0, radius: 2.0 }),
    ];
    let mut worst = 0.0f64;
    for (i, (_, table)) in tables.iter().enumerate() {
        // Deterministic quantile diagonal, and sorted iid draws from the law.
        let mut det = quantile_values(table, 0.3, n);
        det.sort_by(f64::total_cmp);
        let mut rng = RngSpec::new(9, i as u64).rng();
        let mut iid: Vec<f64> = (0..n).map(|_| table.inverse_cdf(rng.random_range(0.0..1.0))).collect();
        iid.sort_by(f64::total_cmp);
        for j in 1..100 {
            let v = j as f64 / 100.0;
            let target = table.inverse_cdf(v);
            let idx = (v * n as f64).floor() as usize;
            worst = worst.max((det[idx] - target).abs()).max((iid[idx] - target).abs());
        }
    }
    // The cdf used for the semicircle table is the one the quantiles invert.
    let check = (semicircle_cdf(0.0) - 0.5).abs();
    Ok(Outcome {
        passed: worst <= tol && check < 1e-12,
        detail: format!("max quantile error {worst:.4} (limit {tol:.3}) at N = {n}"),
    })
}

fn c10_properties() -> Result<Outcome, String> {
    let cases = 1000;
    let mut lines = Vec::new();
    let mut passed = true;
    let config = || Config { cases, failure_persistence: None, ..Config::default() };
    let mut record = |name: &str, r: Result<(), String>| {
        passed &= r.is_ok();
        lines.push(match r {
            Ok(()) => format!("{name} ok"),
            Err(e) => format!("{name} FAILED: {e}"),
        });
    };
    let r = TestRunner::new(config()).run(&support::resolvent_case(), |c| support::check_resolvent_bound(&c));
    record("resolvent bound", r.map_err(|e| e.to_string()));
    let r = TestRunner::new(config()).run(&support::pencil_case(), |c| support::check_half_plane(&c));
    record("half-plane", r.map_err(|e| e.to_string()));
    let r = TestRunner::new(config()).run(&support::pencil_case(), |c| support::check_uniqueness(&c));
    record("uniqueness", r.map_err(|e| e.to_string()));
    let r = TestRunner::new(config()).run(&support::pencil_case(), |c| support::check_mass(&c));
    record("mass", r.map_err(|e| e.to_string()));
    Ok(Outcome { passed, detail: format!("{cases} cases each: {}", lines.join(", ")) })
}

fn main() {
    let criteria: [(&str, Check); 10] = [
        ("semicircle density", c1_semicircle),
        ("free sum support and norm", c2_free_sum),
        ("linearization corner identity", c3_linearization),
        ("Wishart embedding identity", c4_embedding),
        ("white Wishart density", c5_white_wishart),
        ("residual decay and envelope", c6_theta_decay),
        ("mean Schwinger-Dyson residual", c7_sd_residual),
        ("spectrum inclusion", c8_inclusion),
        ("quantile convergence", c9_quantiles),
        ("property suites", c10_properties),
    ];
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let (passed, detail) = match check() {
            Ok(o) => (o.passed, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !passed {
            failures += 1;
        }
        println!(
            "criterion {id:>2} {}: {name}: {detail} [{:.1}s]",
            if passed { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}
