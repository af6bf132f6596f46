//! Variance-scaled reverse sampling.
//!
//! One step maps `x_k` to
//! `x_{k-1} = (x_k + beta_k (s + zeta c)) / sqrt(alpha_k) + f(lambda) sigma_k z`
//! where `s` is a score, `c` the DPS guidance term (learned mode only) and
//! `f(lambda)` is `sqrt(lambda)` (covariance scaled by `lambda`) or `lambda`
//! (the literal update).
//!
//! Oracle mode uses the exact conditional score of a known posterior.
//! Learned mode uses a prior score plus guidance through the Tweedie
//! estimate `x0_hat = (x_k + (1 - abar_k) s) / sqrt(abar_k)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csv::{fmt_f64, CsvTable};
use crate::error::{ensure_dim, Error, Result};
use crate::linalg::{spd_solve, sym_sqrt, symmetrize};
use crate::measurement::MeasurementModel;
use crate::metrics::{evaluate_dp_against, DPPoint, PerceptionOptions};
use crate::nn::ScoreNetwork;
use crate::oracles::{GaussianPosterior, MixturePosterior, Posterior};
use crate::rng::{derive_seed, fill_standard_normal, seeded, SeededRng};
use crate::schedule::NoiseSchedule;

/// States with `|x|_inf` above this abort the run.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseScaling {
    /// Noise std `sqrt(lambda) sigma_k`.
    SqrtLambdaVariance,
    /// Noise std `lambda sigma_k`.
    LiteralAlg1,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaTilde {
    /// `sigma_k^2 = beta_k`.
    Beta,
    /// `sigma_k^2 = beta_k (1 - abar_{k-1}) / (1 - abar_k)`.
    Posterior,
    /// Root of the exact reverse-kernel covariance `C_{k-1}` (oracle mode).
    ExactC,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GuidanceMode {
    OracleScore,
    Dps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZetaScale {
    /// `zeta` used as given.
    Absolute,
    /// Multiples of `beta_k / (2 sqrt(alpha_k) sigma_n^2)`, the weight that
    /// makes the guidance drift equal `beta_k` times the Gaussian likelihood
    /// score.
    Bayes,
}

/// `zeta(k, lambda) = (base + slope * lambda) * unit(k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZetaSchedule {
    pub base: f64,
    #[serde(default)]
    pub slope: f64,
    #[serde(default = "absolute")]
    pub scale: ZetaScale,
}

fn absolute() -> ZetaScale {
    ZetaScale::Absolute
}

impl Default for ZetaSchedule {
    fn default() -> Self {
        Self {
            base: 1.0,
            slope: 0.0,
            scale: ZetaScale::Absolute,
        }
    }
}

impl ZetaSchedule {
    pub fn constant(zeta: f64) -> Self {
        Self {
            base: zeta,
            slope: 0.0,
            scale: ZetaScale::Absolute,
        }
    }

    pub fn bayes(multiple: f64) -> Self {
        Self {
            base: multiple,
            slope: 0.0,
            scale: ZetaScale::Bayes,
        }
    }

    /// Pinwheel default `1.2 + 1.8 lambda`.
    pub fn pinwheel(scale: ZetaScale) -> Self {
        Self {
            base: 1.2,
            slope: 1.8,
            scale,
        }
    }

    /// S-curve and moon default `1 + lambda`.
    pub fn curve(scale: ZetaScale) -> Self {
        Self {
            base: 1.0,
            slope: 1.0,
            scale,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            base: self.base * factor,
            slope: self.slope * factor,
            scale: self.scale,
        }
    }

    pub fn at(&self, k: usize, lambda: f64, schedule: &NoiseSchedule, noise_std: f64) -> f64 {
        let z = self.base + self.slope * lambda;
        match self.scale {
            ZetaScale::Absolute => z,
            ZetaScale::Bayes => {
                z * schedule.beta(k) / (2.0 * schedule.alpha(k).sqrt() * noise_std * noise_std)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerConfig {
    pub lambda: f64,
    #[serde(default)]
    pub zeta: ZetaSchedule,
    pub sigma_tilde: SigmaTilde,
    #[serde(default = "sqrt_lambda")]
    pub noise_scaling: NoiseScaling,
    pub guidance: GuidanceMode,
    pub seed: u64,
}

fn sqrt_lambda() -> NoiseScaling {
    NoiseScaling::SqrtLambdaVariance
}

impl SamplerConfig {
    /// Oracle mode with the exact kernel covariance.
    pub fn oracle(lambda: f64, seed: u64) -> Self {
        Self {
            lambda,
            zeta: ZetaSchedule::constant(0.0),
            sigma_tilde: SigmaTilde::ExactC,
            noise_scaling: NoiseScaling::SqrtLambdaVariance,
            guidance: GuidanceMode::OracleScore,
            seed,
        }
    }

    pub fn dps(lambda: f64, zeta: ZetaSchedule, seed: u64) -> Self {
        Self {
            lambda,
            zeta,
            sigma_tilde: SigmaTilde::Beta,
            noise_scaling: NoiseScaling::SqrtLambdaVariance,
            guidance: GuidanceMode::Dps,
            seed,
        }
    }

    pub fn with_lambda(&self, lambda: f64) -> Self {
        Self { lambda, ..*self }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..*self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::InvalidConfig(format!(
                "lambda must lie in [0, 1], got {}",
                self.lambda
            )));
        }
        let z = self.zeta;
        if !(z.base >= 0.0) || !(z.base + z.slope >= 0.0) || !z.slope.is_finite() {
            return Err(Error::InvalidConfig("zeta must be nonnegative on [0, 1]".into()));
        }
        if self.guidance == GuidanceMode::Dps && self.sigma_tilde == SigmaTilde::ExactC {
            return Err(Error::InvalidConfig(
                "sigma_tilde = exact-c needs an oracle posterior".into(),
            ));
        }
        Ok(())
    }

    /// Multiplier applied to `sigma_k z`.
    pub fn noise_factor(&self) -> f64 {
        match self.noise_scaling {
            NoiseScaling::SqrtLambdaVariance => self.lambda.sqrt(),
            NoiseScaling::LiteralAlg1 => self.lambda,
        }
    }

    /// `key = value` lines describing the config.
    pub fn describe(&self) -> Vec<String> {
        vec![
            format!("lambda = {}", fmt_f64(self.lambda)),
            format!(
                "zeta = {} + {} * lambda ({:?})",
                fmt_f64(self.zeta.base),
                fmt_f64(self.zeta.slope),
                self.zeta.scale
            ),
            format!("sigma_tilde = {:?}", self.sigma_tilde),
            format!("noise_scaling = {:?}", self.noise_scaling),
            format!("guidance = {:?}", self.guidance),
            format!("seed = {}", self.seed),
        ]
    }
}

/// A score of the unconditional diffused marginal `p(x_k)`.
pub trait PriorScore: Sync {
    fn dim(&self) -> usize;

    fn prior_score(&self, x: &[f64], k: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>>;

    /// Score at `x` and `u^T (d score / d x)` for a cotangent `u` computed
    /// from the score.
    fn prior_score_and_vjp(
        &self,
        x: &[f64],
        k: usize,
        schedule: &NoiseSchedule,
        cotangent_of: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    ) -> Result<(Vec<f64>, Vec<f64>)>;
}

impl PriorScore for ScoreNetwork {
    fn dim(&self) -> usize {
        self.data_dim()
    }

    fn prior_score(&self, x: &[f64], k: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        self.score_eval(x, k, schedule)
    }

    fn prior_score_and_vjp(
        &self,
        x: &[f64],
        k: usize,
        schedule: &NoiseSchedule,
        cotangent_of: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        self.score_and_vjp(x, k, schedule, cotangent_of)
    }
}

/// Exact score of a Gaussian data distribution.
impl PriorScore for GaussianPosterior {
    fn dim(&self) -> usize {
        GaussianPosterior::dim(self)
    }

    fn prior_score(&self, x: &[f64], k: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        let s = self.diffused_score(schedule, k, &DVector::from_column_slice(x))?;
        Ok(s.as_slice().to_vec())
    }

    fn prior_score_and_vjp(
        &self,
        x: &[f64],
        k: usize,
        schedule: &NoiseSchedule,
        cotangent_of: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let s = self.prior_score(x, k, schedule)?;
        let u = cotangent_of(&s);
        ensure_dim(s.len(), u.len())?;
        // the Jacobian -Sigma_k^{-1} is symmetric
        let vjp = -spd_solve_col(&self.diffused_cov(schedule, k), &u)?;
        Ok((s, vjp.as_slice().to_vec()))
    }
}

fn spd_solve_col(a: &DMatrix<f64>, b: &[f64]) -> Result<DVector<f64>> {
    crate::linalg::spd_solve_vec(a, &DVector::from_column_slice(b))
}

/// Exact score of a 1D Gaussian-mixture data distribution.
impl PriorScore for MixturePosterior {
    fn dim(&self) -> usize {
        1
    }

    fn prior_score(&self, x: &[f64], k: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
        schedule.check_index(k)?;
        ensure_dim(1, x.len())?;
        Ok(vec![self.diffused(schedule, k).score(x[0])])
    }

    fn prior_score_and_vjp(
        &self,
        x: &[f64],
        k: usize,
        schedule: &NoiseSchedule,
        cotangent_of: &mut dyn FnMut(&[f64]) -> Vec<f64>,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        schedule.check_index(k)?;
        ensure_dim(1, x.len())?;
        let dk = self.diffused(schedule, k);
        let s = vec![dk.score(x[0])];
        let u = cotangent_of(&s);
        ensure_dim(1, u.len())?;
        Ok((s, vec![u[0] * dk.score_derivative(x[0])]))
    }
}

#[derive(Debug, Clone)]
enum OracleStep {
    Gaussian {
        mean: DVector<f64>,
        precision: DMatrix<f64>,
        /// Root of `C_{k-1} = beta_k Sigma_{k-1} Sigma_k^{-1}`.
        c_root: DMatrix<f64>,
    },
    Mixture {
        diffused: MixturePosterior,
        /// `sqrt(C_{k-1})` of the moment-matched Gaussian.
        c_std: f64,
    },
}

/// Exact conditional scores `grad log p(x_k | y)` of a known posterior,
/// precomputed for every step of one schedule.
#[derive(Debug, Clone)]
pub struct OracleScore {
    posterior: Posterior,
    steps: Vec<OracleStep>,
}

impl OracleScore {
    pub fn new(posterior: impl Into<Posterior>, schedule: &NoiseSchedule) -> Result<Self> {
        let posterior = posterior.into();
        let t = schedule.steps();
        let mut steps = Vec::with_capacity(t);
        match &posterior {
            Posterior::Gaussian(g) => {
                let d = g.dim();
                let eye = DMatrix::identity(d, d);
                for k in 1..=t {
                    let cov_k = g.diffused_cov(schedule, k);
                    let precision = symmetrize(&spd_solve(&cov_k, &eye)?);
                    let c = g.diffused_cov(schedule, k - 1) * &precision * schedule.beta(k);
                    steps.push(OracleStep::Gaussian {
                        mean: g.diffused_mean(schedule, k),
                        precision,
                        c_root: sym_sqrt(&symmetrize(&c))?,
                    });
                }
            }
            Posterior::Mixture(m) => {
                let var = m.variance();
                let diffused_var =
                    |k: usize| schedule.alpha_bar(k) * var + 1.0 - schedule.alpha_bar(k);
                for k in 1..=t {
                    let c = schedule.beta(k) * diffused_var(k - 1) / diffused_var(k);
                    steps.push(OracleStep::Mixture {
                        diffused: m.diffused(schedule, k),
                        c_std: c.max(0.0).sqrt(),
                    });
                }
            }
        }
        Ok(Self { posterior, steps })
    }

    pub fn posterior(&self) -> &Posterior {
        &self.posterior
    }

    pub fn dim(&self) -> usize {
        self.posterior.dim()
    }

    pub fn steps(&self) -> usize {
        self.steps.len()
    }

    fn step(&self, k: usize) -> Result<&OracleStep> {
        if k == 0 {
            return Err(Error::ZeroStepScore);
        }
        self.steps.get(k - 1).ok_or(Error::IndexOutOfRange {
            k,
            steps: self.steps.len(),
        })
    }

    pub fn score(&self, x: &[f64], k: usize) -> Result<Vec<f64>> {
        ensure_dim(self.dim(), x.len())?;
        Ok(match self.step(k)? {
            OracleStep::Gaussian {
                mean, precision, ..
            } => {
                let r = DVector::from_column_slice(x) - mean;
                (-(precision * r)).as_slice().to_vec()
            }
            OracleStep::Mixture { diffused, .. } => vec![diffused.score(x[0])],
        })
    }

    /// `C_{k-1}^{1/2} z`.
    fn exact_noise(&self, k: usize, z: &[f64]) -> Result<Vec<f64>> {
        Ok(match self.step(k)? {
            OracleStep::Gaussian { c_root, .. } => {
                (c_root * DVector::from_column_slice(z)).as_slice().to_vec()
            }
            OracleStep::Mixture { c_std, .. } => vec![c_std * z[0]],
        })
    }
}

/// Where the score comes from.
#[derive(Clone, Copy)]
pub enum ScoreSource<'a> {
    /// Exact conditional score; the observation is already folded in.
    Oracle(&'a OracleScore),
    /// Prior score plus DPS guidance toward `y` under `model`.
    Learned {
        prior: &'a dyn PriorScore,
        model: &'a MeasurementModel,
    },
}

impl ScoreSource<'_> {
    pub fn dim(&self) -> usize {
        match self {
            ScoreSource::Oracle(o) => o.dim(),
            ScoreSource::Learned { prior, .. } => prior.dim(),
        }
    }

    fn check(&self, config: &SamplerConfig, schedule: &NoiseSchedule) -> Result<()> {
        config.validate()?;
        match (self, config.guidance) {
            (ScoreSource::Oracle(o), GuidanceMode::OracleScore) => {
                if o.steps() != schedule.steps() {
                    return Err(Error::InvalidConfig(format!(
                        "oracle was built for {} steps, schedule has {}",
                        o.steps(),
                        schedule.steps()
                    )));
                }
                Ok(())
            }
            (ScoreSource::Learned { prior, model }, GuidanceMode::Dps) => {
                ensure_dim(prior.dim(), model.data_dim())
            }
            _ => Err(Error::InvalidConfig(
                "guidance mode does not match the score source (oracle-score needs an oracle, dps a learned prior)".into(),
            )),
        }
    }
}

/// `(x_k + (1 - abar_k) s) / sqrt(abar_k)`.
pub fn tweedie_x0(score: &[f64], x: &[f64], schedule: &NoiseSchedule, k: usize) -> Vec<f64> {
    let ab = schedule.alpha_bar(k);
    let r = ab.sqrt();
    x.iter().zip(score).map(|(xi, si)| (xi + (1.0 - ab) * si) / r).collect()
}

/// Prior score, Tweedie estimate and guidance at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct DpsTerms {
    pub score: Vec<f64>,
    pub x0_hat: Vec<f64>,
    /// `L = ||y - A(x0_hat)||^2`.
    pub residual_sq: f64,
    /// `grad_x L`.
    pub grad: Vec<f64>,
    /// `c = -(sqrt(alpha_k) / beta_k) grad_x L`.
    pub guidance: Vec<f64>,
}

pub fn dps_terms(
    prior: &dyn PriorScore,
    x: &[f64],
    k: usize,
    y: &[f64],
    model: &MeasurementModel,
    schedule: &NoiseSchedule,
) -> Result<DpsTerms> {
    ensure_dim(prior.dim(), x.len())?;
    ensure_dim(model.output_dim(), y.len())?;
    let ab = schedule.alpha_bar(k);
    let mut x0_hat = Vec::new();
    let mut residual_sq = 0.0;
    let mut u = Vec::new();
    let (score, vjp) = prior.prior_score_and_vjp(x, k, schedule, &mut |s| {
        x0_hat = tweedie_x0(s, x, schedule, k);
        let r: Vec<f64> = y.iter().zip(model.apply(&x0_hat)).map(|(a, b)| a - b).collect();
        residual_sq = r.iter().map(|v| v * v).sum();
        u = model.vjp(&x0_hat, &r);
        u.iter().map(|v| v * (1.0 - ab)).collect()
    })?;
    let r = ab.sqrt();
    let grad: Vec<f64> = u.iter().zip(&vjp).map(|(ui, vi)| -2.0 * (ui + vi) / r).collect();
    let c = -schedule.alpha(k).sqrt() / schedule.beta(k);
    let guidance = grad.iter().map(|g| c * g).collect();
    Ok(DpsTerms {
        score,
        x0_hat,
        residual_sq,
        grad,
        guidance,
    })
}

/// `-(sqrt(alpha_k) / beta_k) grad_{x_k} ||y - A(x0_hat(x_k))||^2`.
pub fn dps_guidance(
    prior: &dyn PriorScore,
    x: &[f64],
    k: usize,
    y: &[f64],
    model: &MeasurementModel,
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    Ok(dps_terms(prior, x, k, y, model, schedule)?.guidance)
}

fn sigma_scalar(config: &SamplerConfig, schedule: &NoiseSchedule, k: usize) -> f64 {
    match config.sigma_tilde {
        SigmaTilde::Beta => schedule.beta(k).sqrt(),
        SigmaTilde::Posterior => schedule.posterior_variance(k).sqrt(),
        SigmaTilde::ExactC => unreachable!("exact-c noise is matrix valued"),
    }
}

/// The deterministic part of one step.
fn drift(
    x: &[f64],
    k: usize,
    y: &[f64],
    config: &SamplerConfig,
    source: &ScoreSource<'_>,
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    let beta = schedule.beta(k);
    let r = schedule.alpha(k).sqrt();
    let direction: Vec<f64> = match source {
        ScoreSource::Oracle(o) => o.score(x, k)?,
        ScoreSource::Learned { prior, model } => {
            let zeta = config.zeta.at(k, config.lambda, schedule, model.noise_std());
            if zeta == 0.0 {
                prior.prior_score(x, k, schedule)?
            } else {
                let t = dps_terms(*prior, x, k, y, model, schedule)?;
                t.score.iter().zip(&t.guidance).map(|(s, c)| s + zeta * c).collect()
            }
        }
    };
    Ok(x.iter().zip(&direction).map(|(xi, di)| (xi + beta * di) / r).collect())
}

fn noise(
    k: usize,
    z: &[f64],
    config: &SamplerConfig,
    source: &ScoreSource<'_>,
    schedule: &NoiseSchedule,
) -> Result<Vec<f64>> {
    let f = config.noise_factor();
    match (config.sigma_tilde, source) {
        (SigmaTilde::ExactC, ScoreSource::Oracle(o)) => {
            Ok(o.exact_noise(k, z)?.into_iter().map(|v| f * v).collect())
        }
        (SigmaTilde::ExactC, _) => Err(Error::InvalidConfig(
            "sigma_tilde = exact-c needs an oracle posterior".into(),
        )),
        _ => {
            let s = f * sigma_scalar(config, schedule, k);
            Ok(z.iter().map(|v| s * v).collect())
        }
    }
}

fn guard(x: &[f64], k: usize) -> Result<()> {
    let max_abs = x.iter().fold(0.0f64, |m, v| if v.is_nan() { f64::NAN } else { m.max(v.abs()) });
    if max_abs.is_nan() || max_abs > DIVERGENCE_LIMIT {
        return Err(Error::SamplerDivergence { step: k, max_abs });
    }
    Ok(())
}

/// One reverse step `x_k -> x_{k-1}`; `y` is ignored in oracle mode.
pub fn reverse_step(
    x: &[f64],
    k: usize,
    y: &[f64],
    config: &SamplerConfig,
    source: &ScoreSource<'_>,
    schedule: &NoiseSchedule,
    rng: &mut SeededRng,
) -> Result<Vec<f64>> {
    if k == 0 || k > schedule.steps() {
        return Err(Error::IndexOutOfRange {
            k,
            steps: schedule.steps(),
        });
    }
    ensure_dim(source.dim(), x.len())?;
    let mut z = vec![0.0; x.len()];
    fill_standard_normal(rng, &mut z);
    let mut next = drift(x, k, y, config, source, schedule)?;
    for (a, b) in next.iter_mut().zip(noise(k, &z, config, source, schedule)?) {
        *a += b;
    }
    Ok(next)
}

/// A full reverse run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `(k, x_k)` from `k = T` down to 0; empty unless recorded.
    pub states: Vec<(usize, Vec<f64>)>,
    pub x0: Vec<f64>,
    pub config: SamplerConfig,
    pub seed: u64,
}

impl Trajectory {
    /// Columns `k, x0, x1, ...`, with the sampler config as comments.
    pub fn to_table(&self) -> CsvTable {
        let d = self.x0.len();
        let mut header = vec!["k".to_string()];
        header.extend((0..d).map(|j| format!("x{j}")));
        let refs: Vec<&str> = header.iter().map(String::as_str).collect();
        let mut t = CsvTable::new(&refs);
        t.comments = self.config.describe();
        for (k, x) in &self.states {
            let mut row = vec![k.to_string()];
            row.extend(x.iter().map(|v| fmt_f64(*v)));
            t.push(row);
        }
        t
    }
}

/// Run `k = T, ..., 1` from `x_T ~ N(0, I)` drawn with `config.seed`.
pub fn sample(
    y: &[f64],
    config: &SamplerConfig,
    source: &ScoreSource<'_>,
    schedule: &NoiseSchedule,
    record: bool,
) -> Result<Trajectory> {
    source.check(config, schedule)?;
    if let ScoreSource::Learned { model, .. } = source {
        ensure_dim(model.output_dim(), y.len())?;
    }
    let d = source.dim();
    let mut rng = seeded(config.seed);
    let mut x = vec![0.0; d];
    fill_standard_normal(&mut rng, &mut x);
    let t = schedule.steps();
    let mut states = Vec::new();
    if record {
        states.reserve(t + 1);
        states.push((t, x.clone()));
    }
    for k in (1..=t).rev() {
        x = reverse_step(&x, k, y, config, source, schedule, &mut rng)?;
        guard(&x, k)?;
        if record {
            states.push((k - 1, x.clone()));
        }
    }
    Ok(Trajectory {
        states,
        x0: x,
        config: *config,
        seed: config.seed,
    })
}

/// Observations for a batch.
#[derive(Debug, Clone, Copy)]
pub enum Observations<'a> {
    /// The same `y` for every sample.
    Fixed(&'a [f64]),
    /// Row `i` is the observation of sample `i`.
    PerRow(&'a DMatrix<f64>),
}

/// `n` endpoints as rows; sample `i` runs with seed
/// `derive_seed(config.seed, [i])`, so row `i` does not depend on `n`.
pub fn sample_batch(
    ys: Observations<'_>,
    n: usize,
    config: &SamplerConfig,
    source: &ScoreSource<'_>,
    schedule: &NoiseSchedule,
) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::InvalidRange("need at least one sample".into()));
    }
    if let Observations::PerRow(m) = ys {
        ensure_dim(n, m.nrows())?;
    }
    source.check(config, schedule)?;
    let d = source.dim();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let row;
            let y: &[f64] = match ys {
                Observations::Fixed(y) => y,
                Observations::PerRow(m) => {
                    row = m.row(i).iter().copied().collect::<Vec<f64>>();
                    &row
                }
            };
            let cfg = config.with_seed(derive_seed(config.seed, &[i as u64]));
            sample(y, &cfg, source, schedule, false).map(|t| t.x0)
        })
        .collect::<Result<_>>()?;
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(DMatrix::from_row_slice(n, d, &flat))
}

/// Observations and ground truth for a sweep.
#[derive(Debug, Clone, Copy)]
pub enum YSource<'a> {
    /// One observation; `truth` holds draws from `p(x0 | y)` (one per
    /// reconstruction), and `analytic` its exact moments when known.
    Fixed {
        y: &'a [f64],
        truth: &'a DMatrix<f64>,
        analytic: Option<&'a GaussianPosterior>,
    },
    /// `ys[i]` observes `truth[i]`. Perception is measured against
    /// `reference`, an independent sample of the data law, because the
    /// reconstructions are correlated with `truth`.
    Paired {
        ys: &'a DMatrix<f64>,
        truth: &'a DMatrix<f64>,
        reference: &'a DMatrix<f64>,
    },
}

impl YSource<'_> {
    fn truth(&self) -> &DMatrix<f64> {
        match self {
            YSource::Fixed { truth, .. } | YSource::Paired { truth, .. } => truth,
        }
    }

    fn reference(&self) -> &DMatrix<f64> {
        match self {
            YSource::Fixed { truth, .. } => truth,
            YSource::Paired { reference, .. } => reference,
        }
    }
}

/// One sweep entry; errors are per `lambda` so other entries survive.
#[derive(Debug)]
pub struct SweepEntry {
    pub lambda: f64,
    pub result: Result<(DPPoint, DMatrix<f64>)>,
}

/// For each `lambda`, `truth.nrows()` reconstructions and their DP point.
/// All `lambda` values share the per-sample seeds (common random numbers),
/// so repeated `lambda` values give identical points.
pub fn sweep_lambda(
    lambdas: &[f64],
    ysource: YSource<'_>,
    template: &SamplerConfig,
    source: &ScoreSource<'_>,
    schedule: &NoiseSchedule,
    perception: &PerceptionOptions,
) -> Result<Vec<SweepEntry>> {
    let n = ysource.truth().nrows();
    if n == 0 {
        return Err(Error::EmptyInput("sweep ground truth"));
    }
    if lambdas.is_empty() {
        return Err(Error::EmptyInput("lambda grid"));
    }
    if let Some(l) = lambdas.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(Error::InvalidConfig(format!("lambda must lie in [0, 1], got {l}")));
    }
    Ok(lambdas
        .iter()
        .map(|&lambda| {
            let cfg = template.with_lambda(lambda);
            let result = (|| {
                let (obs, analytic) = match ysource {
                    YSource::Fixed { y, analytic, .. } => (Observations::Fixed(y), analytic),
                    YSource::Paired { ys, .. } => (Observations::PerRow(ys), None),
                };
                let recon = sample_batch(obs, n, &cfg, source, schedule)?;
                let analytic = analytic.map(|g| (&g.mean, &g.cov));
                let point = evaluate_dp_against(
                    lambda,
                    &recon,
                    ysource.truth(),
                    ysource.reference(),
                    analytic,
                    perception,
                    template.seed,
                )?;
                Ok((point, recon))
            })();
            SweepEntry { lambda, result }
        })
        .collect())
}
