//! Run configuration, read from TOML. Every table rejects unknown keys.
//!
//! A config may also be read back from any output file of a previous run:
//! the resolved config is embedded there between `config-begin` and
//! `config-end` marker lines.

use std::path::{Path, PathBuf};

use dptraverse::nn::{Activation, Parameterization};
use dptraverse::{
    gaussian_posterior, Architecture, DatasetSpec, GaussianPosterior, MeasurementModel,
    MixtureModel, NoiseScaling, Operator, PerceptionOptions, ScheduleParams, SigmaTilde,
    ZetaSchedule,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CONFIG_BEGIN: &str = "config-begin";
pub const CONFIG_END: &str = "config-end";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; `--seed` overrides it.
    pub seed: u64,
    /// Output directory; `--out` overrides it. Never embedded in outputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub schedule: ScheduleParams,
    #[serde(default)]
    pub sampler: SamplerSection,
    #[serde(default)]
    pub metrics: PerceptionOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measurement: Option<MeasurementSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectories: Option<TrajectorySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curve: Option<CurveSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Small,
    Reference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "small")]
    pub preset: Preset,
    #[serde(default = "epsilon")]
    pub parameterization: Parameterization,
    #[serde(default = "silu")]
    pub activation: Activation,
}

fn small() -> Preset {
    Preset::Small
}
fn epsilon() -> Parameterization {
    Parameterization::Epsilon
}
fn silu() -> Activation {
    Activation::Silu
}

impl ModelSection {
    pub fn architecture(&self, data_dim: usize) -> Architecture {
        let base = match self.preset {
            Preset::Small => Architecture::small(data_dim),
            Preset::Reference => Architecture::reference(data_dim),
        };
        Architecture {
            parameterization: self.parameterization,
            activation: self.activation,
            ..base
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    #[serde(default = "one")]
    pub final_lr_fraction: f64,
    #[serde(default = "one_usize")]
    pub log_every: usize,
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Continue from this checkpoint instead of a fresh network.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resume: Option<PathBuf>,
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OperatorSection {
    Scale { a: f64 },
    /// Row-major `rows x d`.
    Matrix { rows: usize, entries: Vec<f64> },
    Tanh { gain: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSection {
    pub operator: OperatorSection,
    pub noise_std: f64,
}

impl MeasurementSection {
    pub fn model(&self, data_dim: usize) -> Result<MeasurementModel, CliError> {
        let op = match &self.operator {
            OperatorSection::Scale { a } => Operator::Scale(*a),
            OperatorSection::Matrix { rows, entries } => {
                if *rows == 0 || entries.len() != rows * data_dim {
                    return Err(CliError::Config(format!(
                        "measurement matrix needs {} entries ({} rows x {} columns), got {}",
                        rows * data_dim,
                        rows,
                        data_dim,
                        entries.len()
                    )));
                }
                Operator::Matrix(DMatrix::from_row_slice(*rows, data_dim, entries))
            }
            OperatorSection::Tanh { gain } => Operator::Tanh { gain: *gain },
        };
        Ok(MeasurementModel::new(op, self.noise_std, data_dim)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OracleSection {
    /// The posterior `N(mean, cov)` given directly (`cov` row-major).
    GaussianPosterior { mean: Vec<f64>, cov: Vec<f64> },
    /// Gaussian prior and a linear `[measurement]`, conditioned on `y`.
    Gaussian {
        prior_mean: Vec<f64>,
        prior_cov: Vec<f64>,
        y: Vec<f64>,
    },
    /// 1D mixture prior observed through `y = a x + sigma0 n`.
    Mixture {
        weights: Vec<f64>,
        means: Vec<f64>,
        stds: Vec<f64>,
        a: f64,
        sigma0: f64,
        y: f64,
    },
}

/// A resolved oracle posterior.
#[derive(Debug, Clone)]
pub enum OraclePosterior {
    Gaussian(GaussianPosterior),
    Mixture(MixtureModel, dptraverse::MixturePosterior),
}

fn square(v: &[f64], d: usize, what: &str) -> Result<DMatrix<f64>, CliError> {
    if v.len() != d * d {
        return Err(CliError::Config(format!(
            "{what} needs {} entries for dimension {d}, got {}",
            d * d,
            v.len()
        )));
    }
    Ok(DMatrix::from_row_slice(d, d, v))
}

impl OracleSection {
    pub fn resolve(&self, measurement: Option<&MeasurementSection>) -> Result<OraclePosterior, CliError> {
        match self {
            OracleSection::GaussianPosterior { mean, cov } => {
                let cov = square(cov, mean.len(), "oracle.cov")?;
                Ok(OraclePosterior::Gaussian(GaussianPosterior::new(
                    DVector::from_column_slice(mean),
                    cov,
                )?))
            }
            OracleSection::Gaussian { prior_mean, prior_cov, y } => {
                let d = prior_mean.len();
                let cov = square(prior_cov, d, "oracle.prior_cov")?;
                let m = measurement
                    .ok_or_else(|| CliError::Config("oracle kind 'gaussian' needs a [measurement] table".into()))?
                    .model(d)?;
                let post = gaussian_posterior(
                    &DVector::from_column_slice(prior_mean),
                    &cov,
                    &m,
                    &DVector::from_column_slice(y),
                )?;
                Ok(OraclePosterior::Gaussian(post))
            }
            OracleSection::Mixture {
                weights,
                means,
                stds,
                a,
                sigma0,
                y,
            } => {
                let model = MixtureModel::new(weights.clone(), means.clone(), stds.clone(), *a, *sigma0)?;
                let post = dptraverse::mixture_posterior(&model, *y)?;
                Ok(OraclePosterior::Mixture(model, post))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default)]
    pub zeta: ZetaSchedule,
    /// Defaults to `exact-c` with an oracle and `beta` otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_tilde: Option<SigmaTilde>,
    #[serde(default = "sqrt_lambda")]
    pub noise_scaling: NoiseScaling,
    #[serde(default = "thousand")]
    pub n_samples: usize,
    /// Trained network for learned (DPS) mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Fixed observation for `sample` and `trajectories` in learned mode.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<f64>>,
}

fn sqrt_lambda() -> NoiseScaling {
    NoiseScaling::SqrtLambdaVariance
}
fn thousand() -> usize {
    1000
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            zeta: ZetaSchedule::default(),
            sigma_tilde: None,
            noise_scaling: NoiseScaling::SqrtLambdaVariance,
            n_samples: 1000,
            checkpoint: None,
            y: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default = "lambda_grid")]
    pub lambdas: Vec<f64>,
    #[serde(default = "zeta_grid")]
    pub zeta_multipliers: Vec<f64>,
    /// `lambda` held fixed by `zeta-sweep`.
    #[serde(default = "one")]
    pub zeta_lambda: f64,
    /// Write every reconstruction set under `samples/`.
    #[serde(default = "yes")]
    pub save_samples: bool,
}

pub fn lambda_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}
fn zeta_grid() -> Vec<f64> {
    vec![0.25, 0.5, 1.0, 2.0, 4.0]
}
fn yes() -> bool {
    true
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            lambdas: lambda_grid(),
            zeta_multipliers: zeta_grid(),
            zeta_lambda: 1.0,
            save_samples: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySection {
    #[serde(default = "trajectory_lambdas")]
    pub lambdas: Vec<f64>,
    #[serde(default = "ten")]
    pub count: usize,
    /// Write full paths; otherwise only endpoints.
    #[serde(default = "yes")]
    pub record: bool,
}

fn trajectory_lambdas() -> Vec<f64> {
    vec![0.0, 0.3, 0.8, 1.0]
}
fn ten() -> usize {
    10
}

impl Default for TrajectorySection {
    fn default() -> Self {
        Self {
            lambdas: trajectory_lambdas(),
            count: 10,
            record: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurveSection {
    /// `Tr(Sigma_y)`.
    #[serde(default = "one")]
    pub trace: f64,
    #[serde(default = "twenty_one")]
    pub points: usize,
    /// Largest perception value; defaults to `1.25 sqrt(trace)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_max: Option<f64>,
}

fn twenty_one() -> usize {
    21
}

impl Default for CurveSection {
    fn default() -> Self {
        Self {
            trace: 1.0,
            points: 21,
            p_max: None,
        }
    }
}

fn check_lambdas(what: &str, ls: &[f64]) -> Result<(), CliError> {
    if ls.is_empty() {
        return Err(CliError::Config(format!("{what} is empty")));
    }
    if let Some(l) = ls.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(CliError::Config(format!("{what}: lambda must lie in [0, 1], got {l}")));
    }
    Ok(())
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Config(format!("{origin}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a TOML file, or the config embedded in a previous output.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let origin = path.display().to_string();
        match extract_embedded(&text) {
            Some((_, body)) => Self::parse(&body, &origin),
            None => Self::parse(&text, &origin),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.schedule.build()?;
        let s = &self.sampler;
        check_lambdas("sampler.lambda", &[s.lambda])?;
        if s.n_samples == 0 {
            return Err(CliError::Config("sampler.n_samples must be positive".into()));
        }
        let z = s.zeta;
        if !(z.base >= 0.0) || !(z.base + z.slope >= 0.0) || !z.slope.is_finite() {
            return Err(CliError::Config("sampler.zeta must be nonnegative on [0, 1]".into()));
        }
        if let Some(d) = &self.dataset {
            d.validate()?;
        }
        if let Some(sw) = &self.sweep {
            check_lambdas("sweep.lambdas", &sw.lambdas)?;
            check_lambdas("sweep.zeta_lambda", &[sw.zeta_lambda])?;
            if sw.zeta_multipliers.is_empty() {
                return Err(CliError::Config("sweep.zeta_multipliers is empty".into()));
            }
            if let Some(m) = sw.zeta_multipliers.iter().find(|m| !(**m >= 0.0) || !m.is_finite()) {
                return Err(CliError::Config(format!("zeta multipliers must be >= 0, got {m}")));
            }
        }
        if let Some(t) = &self.trajectories {
            check_lambdas("trajectories.lambdas", &t.lambdas)?;
            if t.count == 0 {
                return Err(CliError::Config("trajectories.count must be positive".into()));
            }
        }
        if let Some(c) = &self.curve {
            if !(c.trace > 0.0) || c.points < 2 {
                return Err(CliError::Config("curve needs trace > 0 and points >= 2".into()));
            }
        }
        if self.metrics.kl_bins == 0 {
            return Err(CliError::Config("metrics.kl_bins must be positive".into()));
        }
        Ok(())
    }

    /// TOML for embedding in outputs; `out_dir` is left out so a replay into
    /// another directory writes identical bytes.
    pub fn resolved_toml(&self) -> String {
        let mut c = self.clone();
        c.out_dir = None;
        toml::to_string(&c).expect("config serializes")
    }
}

/// `(command, config text)` from an output file with an embedded config.
pub fn extract_embedded(text: &str) -> Option<(String, String)> {
    let mut command = None;
    let mut body = String::new();
    let mut inside = false;
    for line in text.lines() {
        let l = line.strip_prefix("# ").or_else(|| line.strip_prefix('#'));
        let Some(l) = l else {
            if inside {
                return None;
            }
            continue;
        };
        if let Some(c) = l.strip_prefix("command = ") {
            command.get_or_insert_with(|| c.trim().to_string());
        } else if l == CONFIG_BEGIN {
            inside = true;
        } else if l == CONFIG_END {
            return Some((command?, body));
        } else if inside {
            body.push_str(l);
            body.push('\n');
        }
    }
    None
}
