use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use freespec::ensembles::embedding_identity_check;
use freespec::ensembles::RngSpec;
use freespec::linalg::{CMatrix, HermMatrix};
use freespec::pencil::NCPolynomial;
use freespec::scenario::{bundled_names, Scenario, System};
use freespec::stieltjes::{Interval, SpectralReport};
use rayon::prelude::*;
use serde::Serialize;

/// Spectra of polynomials in random matrices from a JSON scenario.
#[derive(Parser)]
#[command(name = "freespec", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Density on the scenario grid (density.csv, density.json).
    Density(Common),
    /// Support intervals and norm estimate (support.json).
    Support(Common),
    /// Eigenvalues of sampled matrices, one CSV per trial.
    Sample(Common),
    /// Run the scenario's experiments (check.json).
    Check(Common),
    /// Print the linearizing pencil as JSON.
    Linearize(Common),
    /// Deviation of the Wishart embedding identity (embed_check.json).
    EmbedCheck(Common),
    /// List bundled scenarios.
    List,
}

#[derive(Args)]
struct Common {
    /// Scenario file, or the name of a bundled scenario.
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    threads: Option<usize>,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
}

const EXIT_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_UNCONVERGED: u8 = 3;

/// Largest tolerated fraction of unconverged grid points.
const UNCONVERGED_LIMIT: f64 = 0.01;

struct Failure {
    code: u8,
    msg: String,
}

impl From<freespec::Error> for Failure {
    fn from(e: freespec::Error) -> Self {
        let code = match e {
            freespec::Error::NoConvergence { .. } => EXIT_UNCONVERGED,
            _ => EXIT_CONFIG,
        };
        Failure { code, msg: e.to_string() }
    }
}

fn config_error(msg: impl Into<String>) -> Failure {
    Failure { code: EXIT_CONFIG, msg: msg.into() }
}

/// Files are only written once everything has been computed.
struct Output {
    files: Vec<(String, Vec<u8>)>,
    code: u8,
}

impl Output {
    fn new() -> Self {
        Self { files: Vec::new(), code: 0 }
    }

    fn json(&mut self, name: &str, value: &impl Serialize) -> Result<(), Failure> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| config_error(e.to_string()))?;
        bytes.push(b'\n');
        self.files.push((name.to_string(), bytes));
        Ok(())
    }

    fn json_compact(&mut self, name: &str, value: &impl Serialize) -> Result<(), Failure> {
        let mut bytes = serde_json::to_vec(value).map_err(|e| config_error(e.to_string()))?;
        bytes.push(b'\n');
        self.files.push((name.to_string(), bytes));
        Ok(())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let common = match cli.command {
        Command::List => {
            for name in bundled_names() {
                println!("{name}");
            }
            return ExitCode::SUCCESS;
        }
        Command::Density(ref c)
        | Command::Support(ref c)
        | Command::Sample(ref c)
        | Command::Check(ref c)
        | Command::Linearize(ref c)
        | Command::EmbedCheck(ref c) => c,
    };
    match run(&cli.command, common) {
        Ok(out) => match write(common, &out) {
            Ok(()) => ExitCode::from(out.code),
            Err(msg) => {
                eprintln!("error: {msg}");
                ExitCode::from(EXIT_CONFIG)
            }
        },
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}

fn write(common: &Common, out: &Output) -> Result<(), String> {
    if out.files.is_empty() {
        return Ok(());
    }
    std::fs::create_dir_all(&common.out).map_err(|e| format!("{}: {e}", common.out.display()))?;
    for (name, bytes) in &out.files {
        let path = common.out.join(name);
        std::fs::write(&path, bytes).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    Ok(())
}

fn run(command: &Command, common: &Common) -> Result<Output, Failure> {
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(config_error("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| config_error(e.to_string()))?;
    }
    let mut scenario = Scenario::resolve(&common.scenario)?;
    if let Some(seed) = common.seed {
        scenario.seed = seed;
    }
    let mut out = Output::new();
    match command {
        Command::Density(_) => {
            let report = scenario.density()?;
            out.files.push(("density.csv".into(), report.to_csv().into_bytes()));
            out.json_compact("density.json", &report)?;
            out.code = convergence_code(&report);
        }
        Command::Support(_) => {
            let report = scenario.density()?;
            out.json("support.json", &SupportOut::new(&scenario, &report))?;
            out.code = convergence_code(&report);
        }
        Command::Sample(_) => sample(&scenario, &mut out)?,
        Command::Check(_) => {
            let summary = scenario.check()?;
            for r in &summary.results {
                eprintln!("{}: {} ({})", r.name, if r.passed { "pass" } else { "FAIL" }, r.message);
            }
            out.json("check.json", &summary)?;
            if !summary.passed {
                out.code = EXIT_FAILED;
            }
        }
        Command::Linearize(_) => {
            let lin = LinearizeOut::new(&scenario)?;
            let text = serde_json::to_string_pretty(&lin).map_err(|e| config_error(e.to_string()))?;
            // A closed pipe on stdout is not an error worth reporting.
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            out.json("linearization.json", &lin)?;
        }
        Command::EmbedCheck(_) => {
            let check = embed_check(&scenario)?;
            eprintln!("relative deviation {:.3e}", check.deviation);
            if !check.passed {
                out.code = EXIT_FAILED;
            }
            out.json("embed_check.json", &check)?;
        }
        Command::List => unreachable!("handled in main"),
    }
    Ok(out)
}

fn convergence_code(report: &SpectralReport) -> u8 {
    let frac = report.unconverged as f64 / report.grid.len().max(1) as f64;
    if frac > UNCONVERGED_LIMIT {
        eprintln!("{} of {} grid points did not converge", report.unconverged, report.grid.len());
        EXIT_UNCONVERGED
    } else {
        0
    }
}

#[derive(Serialize)]
struct SupportOut {
    scenario: String,
    eta: f64,
    support_threshold: f64,
    support: Vec<Interval>,
    norm_estimate: Option<f64>,
}

impl SupportOut {
    fn new(s: &Scenario, r: &SpectralReport) -> Self {
        Self {
            scenario: s.name.clone(),
            eta: r.eta,
            support_threshold: r.support_threshold,
            support: r.support.clone(),
            norm_estimate: r.norm_estimate,
        }
    }
}

fn sample(scenario: &Scenario, out: &mut Output) -> Result<(), Failure> {
    let spec = scenario.sample.as_ref().ok_or_else(|| config_error("scenario has no sample section"))?;
    let sampler = scenario.sampler()?;
    let seed = scenario.seed;
    let eigs: Vec<freespec::Result<Vec<f64>>> = (0..spec.trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngSpec::new(seed, i as u64).rng();
            sampler.sample(spec.n, &mut rng)?.eigenvalues()
        })
        .collect();
    let width = spec.trials.to_string().len().max(3);
    for (i, e) in eigs.into_iter().enumerate() {
        let mut csv = String::from("index,eigenvalue\n");
        for (j, v) in e?.iter().enumerate() {
            csv.push_str(&format!("{j},{v}\n"));
        }
        out.files.push((format!("eigenvalues_{i:0width$}.csv"), csv.into_bytes()));
    }
    Ok(())
}

#[derive(Serialize)]
struct LinearizeOut {
    scenario: String,
    k: usize,
    p: usize,
    q: usize,
    corner_dim: Option<usize>,
    epsilon_pad: Option<f64>,
    a0: HermMatrix,
    a: Vec<HermMatrix>,
    b: Vec<HermMatrix>,
}

impl LinearizeOut {
    fn new(s: &Scenario) -> Result<Self, Failure> {
        let (pencil, corner_dim, pad) = match &s.system {
            System::Pencil { pencil, .. } => (pencil.clone(), None, None),
            _ => {
                let cert = s.certificate()?;
                (cert.pencil, Some(cert.corner_dim), Some(cert.epsilon_pad))
            }
        };
        Ok(Self {
            scenario: s.name.clone(),
            k: pencil.k,
            p: pencil.p(),
            q: pencil.q(),
            corner_dim,
            epsilon_pad: pad,
            a0: pencil.a0,
            a: pencil.a,
            b: pencil.b,
        })
    }
}

/// Relative deviation above which the embedding identity is reported as failed.
const EMBED_TOLERANCE: f64 = 1e-10;

#[derive(Serialize)]
struct EmbedOut {
    scenario: String,
    polynomial: String,
    n: usize,
    big_dim: usize,
    deviation: f64,
    lhs_norm: f64,
    tolerance: f64,
    passed: bool,
}

fn embed_check(s: &Scenario) -> Result<EmbedOut, Failure> {
    let System::Wishart { polynomial, wishart, y, .. } = &s.system else {
        return Err(config_error("embed-check needs a wishart scenario"));
    };
    let poly = NCPolynomial::parse(polynomial)?;
    let rn = wishart.r * wishart.n;
    let ys: Vec<CMatrix> = y[..poly.q()]
        .iter()
        .map(|shape| Ok(shape.materialize(rn)?.into_cmatrix()))
        .collect::<Result<_, freespec::Error>>()?;
    let mut rng = RngSpec::new(s.seed, 0).rng();
    let c = embedding_identity_check(&poly, wishart, &ys, &mut rng)?;
    Ok(EmbedOut {
        scenario: s.name.clone(),
        polynomial: polynomial.clone(),
        n: wishart.n,
        big_dim: c.big_dim,
        deviation: c.deviation,
        lhs_norm: c.lhs_norm,
        tolerance: EMBED_TOLERANCE,
        passed: c.deviation <= EMBED_TOLERANCE,
    })
}
