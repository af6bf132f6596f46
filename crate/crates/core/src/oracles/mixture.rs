//! One-dimensional Gaussian mixtures: the prior/measurement model, its exact
//! posterior, and the scores of the diffused posterior. Everything that
//! touches component weights runs in log space.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::standard_normal;
use crate::schedule::NoiseSchedule;

use super::gaussian::GaussianPosterior;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (LN_2PI + var.ln() + (x - mean).powi(2) / var)
}

/// Prior `sum_i w_i N(mu_i, sigma_i^2)` observed through `y = a x + N(0, sigma_0^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureModel {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub a: f64,
    pub sigma0: f64,
}

impl MixtureModel {
    pub fn new(weights: Vec<f64>, means: Vec<f64>, stds: Vec<f64>, a: f64, sigma0: f64) -> Result<Self> {
        let m = Self {
            weights,
            means,
            stds,
            a,
            sigma0,
        };
        m.validate()?;
        Ok(m)
    }

    /// The two-component example: `w = (1/2, 1/2)`, `mu = (-1, 1)`,
    /// `sigma = (0.5, 0.5)`, `a = 1`, `sigma_0 = 0.5`.
    pub fn two_component_example() -> Self {
        Self {
            weights: vec![0.5, 0.5],
            means: vec![-1.0, 1.0],
            stds: vec![0.5, 0.5],
            a: 1.0,
            sigma0: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.weights.len();
        if n == 0 {
            return Err(Error::InvalidConfig("mixture needs at least one component".into()));
        }
        if self.means.len() != n || self.stds.len() != n {
            return Err(Error::InvalidConfig(
                "mixture weights, means and stds must have equal length".into(),
            ));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidRange("mixture weights must be nonnegative".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidRange(format!("mixture weights sum to {total}, not 1")));
        }
        if self.stds.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidRange("component stds must be positive".into()));
        }
        if !(self.sigma0 > 0.0) || !self.sigma0.is_finite() {
            return Err(Error::InvalidRange("measurement noise std must be positive".into()));
        }
        if !self.a.is_finite() || self.means.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidRange("mixture parameters must be finite".into()));
        }
        Ok(())
    }

    /// The prior as a mixture distribution.
    pub fn prior(&self) -> MixturePosterior {
        MixturePosterior {
            weights: self.weights.clone(),
            means: self.means.clone(),
            vars: self.stds.iter().map(|s| s * s).collect(),
        }
    }

    /// Draw `(x0, y)` pairs.
    pub fn sample_pairs<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<(f64, f64)> {
        let prior = self.prior();
        (0..n)
            .map(|_| {
                let x = prior.draw(rng);
                (x, self.a * x + self.sigma0 * standard_normal(rng))
            })
            .collect()
    }
}

/// A 1D Gaussian mixture `sum_i w_i N(m_i, v_i)`; used for posteriors
/// `p(x0 | y)` and their diffused marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct MixturePosterior {
    pub weights: Vec<f64>,
    pub means: Vec<f64>,
    pub vars: Vec<f64>,
}

/// `p(x0 | y) = sum_i a_i(y) N(m_i(y), v_i)`, with
/// `a_i(y) ∝ w_i N(y; a mu_i, a^2 sigma_i^2 + sigma_0^2)`,
/// `v_i = 1 / (a^2 / sigma_0^2 + 1 / sigma_i^2)` and
/// `m_i = v_i (mu_i / sigma_i^2 + a y / sigma_0^2)`.
pub fn mixture_posterior(model: &MixtureModel, y: f64) -> Result<MixturePosterior> {
    model.validate()?;
    if !y.is_finite() {
        return Err(Error::InvalidRange(format!("observation must be finite, got {y}")));
    }
    let a = model.a;
    let s0sq = model.sigma0 * model.sigma0;
    let n = model.weights.len();
    let mut logw = Vec::with_capacity(n);
    let mut means = Vec::with_capacity(n);
    let mut vars = Vec::with_capacity(n);
    for i in 0..n {
        let sisq = model.stds[i] * model.stds[i];
        let marg_var = a * a * sisq + s0sq;
        logw.push(model.weights[i].ln() + log_normal_pdf(y, a * model.means[i], marg_var));
        let v = 1.0 / (a * a / s0sq + 1.0 / sisq);
        vars.push(v);
        means.push(v * (model.means[i] / sisq + a * y / s0sq));
    }
    let z = log_sum_exp(&logw);
    let weights = logw.iter().map(|l| (l - z).exp()).collect();
    Ok(MixturePosterior {
        weights,
        means,
        vars,
    })
}

impl MixturePosterior {
    pub fn mean(&self) -> f64 {
        self.weights.iter().zip(&self.means).map(|(w, m)| w * m).sum()
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.vars))
            .map(|(w, (m, v))| w * (v + (m - mu).powi(2)))
            .sum()
    }

    /// Gaussian with the same first two moments.
    pub fn moment_matched(&self) -> GaussianPosterior {
        GaussianPosterior {
            mean: DVector::from_element(1, self.mean()),
            cov: DMatrix::from_element(1, 1, self.variance()),
        }
    }

    fn log_terms(&self, x: f64) -> Vec<f64> {
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.vars))
            .map(|(w, (m, v))| w.ln() + log_normal_pdf(x, *m, *v))
            .collect()
    }

    pub fn log_density(&self, x: f64) -> f64 {
        log_sum_exp(&self.log_terms(x))
    }

    pub fn density(&self, x: f64) -> f64 {
        self.log_density(x).exp()
    }

    /// `d/dx log p(x)`.
    pub fn score(&self, x: f64) -> f64 {
        let lt = self.log_terms(x);
        let z = log_sum_exp(&lt);
        lt.iter()
            .zip(self.means.iter().zip(&self.vars))
            .filter(|(l, _)| l.is_finite())
            .map(|(l, (m, v))| (l - z).exp() * (m - x) / v)
            .sum()
    }

    /// `d/dx` of [`Self::score`].
    pub fn score_derivative(&self, x: f64) -> f64 {
        let lt = self.log_terms(x);
        let z = log_sum_exp(&lt);
        let mut s = 0.0;
        let mut acc = 0.0;
        for (l, (m, v)) in lt.iter().zip(self.means.iter().zip(&self.vars)) {
            if !l.is_finite() {
                continue;
            }
            let r = (l - z).exp();
            let g = (m - x) / v;
            s += r * g;
            acc += r * (g * g - 1.0 / v);
        }
        acc - s * s
    }

    /// Marginal after diffusing to step `k`:
    /// components `N(sqrt(abar_k) m_i, abar_k v_i + 1 - abar_k)`.
    pub fn diffused(&self, schedule: &NoiseSchedule, k: usize) -> Self {
        let ab = schedule.alpha_bar(k);
        Self {
            weights: self.weights.clone(),
            means: self.means.iter().map(|m| ab.sqrt() * m).collect(),
            vars: self.vars.iter().map(|v| ab * v + 1.0 - ab).collect(),
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut pick = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                pick = i;
                break;
            }
        }
        self.means[pick] + self.vars[pick].sqrt() * standard_normal(rng)
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        (0..n).map(|_| self.draw(rng)).collect()
    }
}

/// `d/dx log p(x_k = x | y)` for the mixture model.
pub fn diffused_mixture_score(
    model: &MixtureModel,
    y: f64,
    schedule: &NoiseSchedule,
    k: usize,
    x: f64,
) -> Result<f64> {
    schedule.check_index(k)?;
    Ok(mixture_posterior(model, y)?.diffused(schedule, k).score(x))
}

/// A posterior of either kind.
#[derive(Debug, Clone, PartialEq)]
pub enum Posterior {
    Gaussian(GaussianPosterior),
    Mixture(MixturePosterior),
}

impl Posterior {
    pub fn dim(&self) -> usize {
        match self {
            Posterior::Gaussian(g) => g.dim(),
            Posterior::Mixture(_) => 1,
        }
    }
}

impl From<GaussianPosterior> for Posterior {
    fn from(g: GaussianPosterior) -> Self {
        Posterior::Gaussian(g)
    }
}

impl From<MixturePosterior> for Posterior {
    fn from(m: MixturePosterior) -> Self {
        Posterior::Mixture(m)
    }
}

/// Posterior mean `E[x0 | y]`.
pub fn mmse_estimate(posterior: &Posterior) -> DVector<f64> {
    match posterior {
        Posterior::Gaussian(g) => g.mean.clone(),
        Posterior::Mixture(m) => DVector::from_element(1, m.mean()),
    }
}
