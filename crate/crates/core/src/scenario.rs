//! JSON scenario files: what system to study, where to look, and which
//! Monte Carlo checks to run.

use std::path::Path;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::ensembles::{
    wishart_lift, wishart_lift_model, wishart_unlift, ChannelSampler, ChannelSpec, HermitianSampler, PencilSampler,
    PolynomialSampler, ShapeSpec, WishartSampler, WishartSpec,
};
use crate::error::{invalid, Error, Result};
use crate::experiments::{
    g_difference_decay, histogram_vs_density, pooled_eigenvalues, sd_mean_residual, spectrum_inclusion,
    theta_decay, theta_envelope, ExperimentResult, McSetup, PerN,
};
use crate::linalg::CMatrix;
use crate::pencil::{linearize_with, LinearizationCertificate, NCPolynomial, Pencil, DEFAULT_EPSILON_PAD};
use crate::stieltjes::{DeterministicModel, SpectralReport};
use crate::subordination::{
    solve_grid, GridSpec, Readout, SolverConfig, Subordination, DEFAULT_SUPPORT_THRESHOLD,
};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum System {
    /// Polynomial in GUE letters `x_j` and deterministic letters `y_j`.
    Polynomial {
        polynomial: String,
        #[serde(default = "DeterministicModel::none")]
        model: DeterministicModel,
        #[serde(default)]
        epsilon_pad: Option<f64>,
    },
    /// Explicit pencil; the density is that of `L` itself.
    Pencil {
        pencil: Pencil,
        #[serde(default = "DeterministicModel::none")]
        model: DeterministicModel,
    },
    /// Polynomial whose `x_j` letters are Wishart matrices.
    Wishart {
        polynomial: String,
        wishart: WishartSpec,
        #[serde(default)]
        y: Vec<ShapeSpec>,
        #[serde(default)]
        epsilon_pad: Option<f64>,
    },
    /// Banded channel `H H^*`; sampling only.
    Channel { channel: ChannelSpec },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Experiment {
    SpectrumInclusion {
        n: usize,
        trials: usize,
        eps: f64,
    },
    HistogramKs {
        n: usize,
        trials: usize,
        max_ks: f64,
    },
    ThetaDecay {
        n_list: Vec<usize>,
        trials: usize,
        #[serde(default = "two")]
        lambda_im: f64,
        #[serde(default = "default_slope")]
        slope_threshold: f64,
    },
    ThetaEnvelope {
        n: usize,
        trials: usize,
        #[serde(default = "two")]
        im_low: f64,
        #[serde(default = "four")]
        im_high: f64,
        #[serde(default = "default_ratio")]
        max_ratio: f64,
    },
    SdResidual {
        n: usize,
        trials: usize,
        #[serde(default = "two")]
        lambda_im: f64,
        #[serde(default = "three")]
        gamma_im: f64,
    },
    GDifference {
        n_list: Vec<usize>,
        trials: usize,
        lambda: [f64; 2],
    },
}

fn two() -> f64 {
    2.0
}
fn three() -> f64 {
    3.0
}
fn four() -> f64 {
    4.0
}
fn default_slope() -> f64 {
    -1.6
}
fn default_ratio() -> f64 {
    48.0
}
fn default_threshold() -> f64 {
    DEFAULT_SUPPORT_THRESHOLD
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpec {
    pub n: usize,
    pub trials: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    #[serde(default)]
    pub description: Option<String>,
    pub system: System,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "default_threshold")]
    pub support_threshold: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub sample: Option<SampleSpec>,
    #[serde(default)]
    pub experiments: Vec<Experiment>,
}

const BUNDLED: &[(&str, &str)] = &[
    ("semicircle", include_str!("../scenarios/semicircle.json")),
    ("free-sum", include_str!("../scenarios/free-sum.json")),
    ("bernoulli-anticommutator", include_str!("../scenarios/bernoulli-anticommutator.json")),
    ("marchenko-pastur", include_str!("../scenarios/marchenko-pastur.json")),
    ("wishart-embed", include_str!("../scenarios/wishart-embed.json")),
    ("quantile-diag", include_str!("../scenarios/quantile-diag.json")),
    ("mimo-band", include_str!("../scenarios/mimo-band.json")),
    ("theta-decay", include_str!("../scenarios/theta-decay.json")),
];

pub fn bundled_names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}

/// Outcome of the experiments of a scenario.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckSummary {
    pub scenario: String,
    pub seed: u64,
    pub passed: bool,
    pub results: Vec<ExperimentResult>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scenario = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn bundled(name: &str) -> Result<Self> {
        let text = BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| invalid(format!("no bundled scenario named {name:?}")))?;
        Self::from_json(text)
    }

    /// A path if one exists, otherwise a bundled name.
    pub fn resolve(arg: &str) -> Result<Self> {
        let path = Path::new(arg);
        if path.exists() {
            Self::load(path)
        } else if BUNDLED.iter().any(|(n, _)| *n == arg) {
            Self::bundled(arg)
        } else {
            Err(invalid(format!("{arg:?} is neither a readable file nor a bundled scenario")))
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(invalid("scenario name is empty"));
        }
        if let Some(g) = &self.grid {
            g.validate()?;
        }
        self.solver.validate()?;
        if !(self.support_threshold > 0.0) {
            return Err(invalid("support_threshold must be positive"));
        }
        if let Some(s) = &self.sample {
            if s.n == 0 || s.trials == 0 {
                return Err(invalid("sample needs n >= 1 and trials >= 1"));
            }
        }
        match &self.system {
            System::Polynomial { model, epsilon_pad, .. } => {
                let cert = self.certificate()?;
                model.validate()?;
                if model.q() < cert.pencil.q() {
                    return Err(invalid("deterministic model has fewer matrices than the polynomial has y letters"));
                }
                check_pad(*epsilon_pad)?;
            }
            System::Pencil { pencil, model } => {
                Pencil::new(pencil.a0.clone(), pencil.a.clone(), pencil.b.clone())?;
                if pencil.k != pencil.a0.dim() {
                    return Err(invalid("pencil k does not match a0"));
                }
                model.validate()?;
                if model.q() != pencil.q() {
                    return Err(invalid("deterministic model does not match the pencil"));
                }
            }
            System::Wishart { polynomial, wishart, y, epsilon_pad } => {
                wishart.validate()?;
                let poly = NCPolynomial::parse(polynomial)?;
                if poly.p() > wishart.p() {
                    return Err(invalid("polynomial uses more x letters than Wishart blocks"));
                }
                if poly.q() > y.len() {
                    return Err(invalid("polynomial uses more y letters than shapes given"));
                }
                check_pad(*epsilon_pad)?;
            }
            System::Channel { channel } => channel.validate()?,
        }
        for e in &self.experiments {
            validate_experiment(e)?;
        }
        Ok(())
    }

    fn poly(&self) -> Result<NCPolynomial> {
        match &self.system {
            System::Polynomial { polynomial, .. } | System::Wishart { polynomial, .. } => NCPolynomial::parse(polynomial),
            _ => Err(invalid("scenario has no polynomial")),
        }
    }

    /// Linearization of the polynomial, or of its Wishart lift.
    pub fn certificate(&self) -> Result<LinearizationCertificate> {
        match &self.system {
            System::Polynomial { epsilon_pad, .. } => {
                linearize_with(&self.poly()?, epsilon_pad.unwrap_or(DEFAULT_EPSILON_PAD))
            }
            System::Wishart { wishart, epsilon_pad, .. } => {
                let lifted = wishart_lift(&self.poly()?, wishart)?;
                linearize_with(&lifted, epsilon_pad.unwrap_or(DEFAULT_EPSILON_PAD))
            }
            System::Pencil { .. } => Err(invalid("explicit pencils are not linearized")),
            System::Channel { .. } => Err(invalid("channel scenarios have no polynomial")),
        }
    }

    pub fn grid(&self) -> Result<&GridSpec> {
        self.grid.as_ref().ok_or_else(|| invalid("scenario has no grid"))
    }

    /// Predicted density on the scenario grid.
    pub fn density(&self) -> Result<SpectralReport> {
        if let System::Channel { .. } = self.system {
            return Err(invalid("density prediction is not available for channel scenarios"));
        }
        let grid = self.grid()?;
        let cfg = &self.solver;
        let delta = self.support_threshold;
        match &self.system {
            System::Polynomial { model, .. } => {
                let cert = self.certificate()?;
                let model = trim_model(model, cert.pencil.q());
                let problem = Subordination::new(&cert.pencil, &model)?;
                let readout = Readout::Corner { epsilon_pad: cert.epsilon_pad };
                solve_grid(&problem, grid, readout, cfg, delta, &|g, _| g)
            }
            System::Pencil { pencil, model } => {
                let problem = Subordination::new(pencil, model)?;
                solve_grid(&problem, grid, Readout::Trace, cfg, delta, &|g, _| g)
            }
            System::Wishart { wishart, y, .. } => {
                let poly = self.poly()?;
                let cert = self.certificate()?;
                let model = wishart_lift_model(wishart, &y[..poly.q()], wishart.n)?;
                let problem = Subordination::new(&cert.pencil, &model)?;
                let readout = Readout::Corner { epsilon_pad: cert.epsilon_pad };
                let c0 = poly.coefficient(&[]).re;
                let spec = wishart.clone();
                solve_grid(&problem, grid, readout, cfg, delta, &move |g, z| wishart_unlift(g, z, c0, &spec))
            }
            System::Channel { .. } => Err(invalid("density prediction is not available for channel scenarios")),
        }
    }

    pub fn sampler(&self) -> Result<Box<dyn HermitianSampler>> {
        Ok(match &self.system {
            System::Polynomial { model, .. } => {
                let poly = self.poly()?;
                Box::new(PolynomialSampler { model: trim_model(model, poly.q()), poly })
            }
            System::Pencil { pencil, model } => Box::new(PencilSampler { pencil: pencil.clone(), model: model.clone() }),
            System::Wishart { wishart, y, .. } => {
                Box::new(WishartSampler { poly: self.poly()?, spec: wishart.clone(), y: y.clone() })
            }
            System::Channel { channel } => Box::new(ChannelSampler { spec: channel.clone() }),
        })
    }

    /// Pencil and model for the resolvent-level experiments.
    fn mc_parts(&self) -> Result<(Pencil, DeterministicModel)> {
        match &self.system {
            System::Polynomial { model, .. } => {
                let cert = self.certificate()?;
                let q = cert.pencil.q();
                Ok((cert.pencil, trim_model(model, q)))
            }
            System::Pencil { pencil, model } => Ok((pencil.clone(), model.clone())),
            _ => Err(invalid("resolvent experiments need a polynomial or pencil scenario")),
        }
    }

    /// Run every listed experiment. Density-based checks compute the
    /// prediction once.
    pub fn check(&self) -> Result<CheckSummary> {
        let seed = self.seed;
        let mut report: Option<SpectralReport> = None;
        let mut results = Vec::new();
        for e in &self.experiments {
            let r = match e {
                Experiment::SpectrumInclusion { n, trials, eps } => {
                    let rep = cached_density(self, &mut report)?;
                    spectrum_inclusion(self.sampler()?.as_ref(), &rep.support, *n, *trials, *eps, seed)?
                }
                Experiment::HistogramKs { n, trials, max_ks } => {
                    let rep = cached_density(self, &mut report)?;
                    let eigs = pooled_eigenvalues(self.sampler()?.as_ref(), *n, *trials, seed)?;
                    let ks = histogram_vs_density(&eigs, rep)?;
                    let mut r = ExperimentResult {
                        name: "histogram_ks".into(),
                        passed: ks <= *max_ks,
                        per_n: vec![PerN { n: *n, trials: *trials, mean: ks, ..Default::default() }],
                        message: format!("KS distance {ks:.4} (limit {max_ks})"),
                        ..Default::default()
                    };
                    r.metrics.insert("ks".into(), ks);
                    r
                }
                Experiment::ThetaDecay { n_list, trials, lambda_im, slope_threshold } => {
                    let (pencil, model) = self.mc_parts()?;
                    let setup = McSetup { pencil: &pencil, model: &model };
                    let lambda = CMatrix::scalar(pencil.k, C64::new(0.0, *lambda_im));
                    theta_decay(&setup, n_list, *trials, &lambda, seed, *slope_threshold)?
                }
                Experiment::ThetaEnvelope { n, trials, im_low, im_high, max_ratio } => {
                    let (pencil, model) = self.mc_parts()?;
                    let setup = McSetup { pencil: &pencil, model: &model };
                    theta_envelope(&setup, *n, *trials, *im_low, *im_high, *max_ratio, seed)?
                }
                Experiment::SdResidual { n, trials, lambda_im, gamma_im } => {
                    let (pencil, model) = self.mc_parts()?;
                    let setup = McSetup { pencil: &pencil, model: &model };
                    let k = pencil.k;
                    let l = CMatrix::scalar(k, C64::new(0.0, *lambda_im));
                    let g = CMatrix::scalar(k, C64::new(0.0, *gamma_im));
                    let sd = sd_mean_residual(&setup, *n, *trials, &l, &g, seed)?;
                    let mut r = ExperimentResult {
                        name: "sd_residual".into(),
                        passed: sd.passed,
                        per_n: vec![PerN { n: *n, trials: *trials, mean: sd.residual, stderr: Some(sd.stderr), ..Default::default() }],
                        message: format!("residual {:.3e}, 3 x stderr {:.3e}", sd.residual, 3.0 * sd.stderr),
                        ..Default::default()
                    };
                    r.metrics.insert("residual".into(), sd.residual);
                    r.metrics.insert("stderr".into(), sd.stderr);
                    r
                }
                Experiment::GDifference { n_list, trials, lambda } => {
                    let (pencil, model) = self.mc_parts()?;
                    let setup = McSetup { pencil: &pencil, model: &model };
                    let z = C64::new(lambda[0], lambda[1]);
                    g_difference_decay(&setup, n_list, *trials, z, seed, &self.solver)?
                }
            };
            results.push(r);
        }
        Ok(CheckSummary {
            scenario: self.name.clone(),
            seed,
            passed: results.iter().all(|r| r.passed),
            results,
        })
    }
}

fn cached_density<'a>(s: &Scenario, slot: &'a mut Option<SpectralReport>) -> Result<&'a SpectralReport> {
    if slot.is_none() {
        *slot = Some(s.density()?);
    }
    Ok(slot.as_ref().expect("just filled"))
}

/// Keep the first `q` matrices of an empirical model.
fn trim_model(model: &DeterministicModel, q: usize) -> DeterministicModel {
    match model {
        DeterministicModel::Empirical { matrices } if matrices.len() > q => {
            DeterministicModel::Empirical { matrices: matrices[..q].to_vec() }
        }
        DeterministicModel::Quantile { tables, offsets, nodes } if tables.len() > q => DeterministicModel::Quantile {
            tables: tables[..q].to_vec(),
            offsets: offsets[..q].to_vec(),
            nodes: *nodes,
        },
        m => m.clone(),
    }
}

fn check_pad(pad: Option<f64>) -> Result<()> {
    match pad {
        Some(e) if !(e > 0.0) => Err(invalid("epsilon_pad must be positive")),
        _ => Ok(()),
    }
}

fn validate_experiment(e: &Experiment) -> Result<()> {
    let bad = |m: &str| Err(Error::Invalid(format!("experiment: {m}")));
    match e {
        Experiment::SpectrumInclusion { n, trials, eps } => {
            if *n == 0 || *trials == 0 || !(*eps >= 0.0) {
                return bad("spectrum_inclusion needs n, trials >= 1 and eps >= 0");
            }
        }
        Experiment::HistogramKs { n, trials, max_ks } => {
            if *n == 0 || *trials == 0 || !(*max_ks > 0.0) {
                return bad("histogram_ks needs n, trials >= 1 and max_ks > 0");
            }
        }
        Experiment::ThetaDecay { n_list, trials, lambda_im, .. } => {
            if n_list.len() < 2 || n_list.contains(&0) || *trials < 20 || !(*lambda_im > 0.0) {
                return bad("theta_decay needs two or more sizes, trials >= 20 and lambda_im > 0");
            }
        }
        Experiment::ThetaEnvelope { n, trials, im_low, im_high, max_ratio } => {
            if *n == 0 || *trials < 20 || !(*im_low > 0.0 && im_high > im_low && *max_ratio > 0.0) {
                return bad("theta_envelope needs n >= 1, trials >= 20 and 0 < im_low < im_high");
            }
        }
        Experiment::SdResidual { n, trials, lambda_im, gamma_im } => {
            if *n == 0 || *trials < 2 || !(*lambda_im > 0.0 && *gamma_im > 0.0) {
                return bad("sd_residual needs n >= 1, trials >= 2 and positive imaginary parts");
            }
        }
        Experiment::GDifference { n_list, trials, lambda } => {
            if n_list.is_empty() || n_list.contains(&0) || *trials < 2 || !(lambda[1] > 0.0) {
                return bad("g_difference needs sizes, trials >= 2 and Im lambda > 0");
            }
        }
    }
    Ok(())
}
