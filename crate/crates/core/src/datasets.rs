//! Synthetic data: the 1D two-component mixture, Gaussians, and the 2D
//! pinwheel, S-curve and moon distributions, plus the degradation channel
//! `y = a x + sigma_n eps`.
//!
//! Recipes (constants frozen so tests stay stable):
//! - pinwheel: `arms` arms at angles `2 pi c / arms`; a point starts at
//!   `(1 + radial_std e1, tangential_std e2)` and is rotated by
//!   `arm angle + rate * exp(first coordinate)`, then scaled by `scale`.
//! - S-curve: `t ~ U(-3 pi / 2, 3 pi / 2)`, point `(sin t, sign(t)(cos t - 1))`,
//!   centred by symmetry, plus isotropic jitter.
//! - moon: two interleaved half circles, recentred at the origin, plus jitter.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{check_psd, sym_sqrt};
use crate::rng::{seeded, standard_normal};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DatasetSpec {
    Mixture1d {
        weights: Vec<f64>,
        means: Vec<f64>,
        stds: Vec<f64>,
    },
    Gaussian {
        mean: Vec<f64>,
        /// Row-major `d x d` covariance.
        cov: Vec<f64>,
    },
    Pinwheel {
        #[serde(default = "default_arms")]
        arms: usize,
        #[serde(default = "default_radial")]
        radial_std: f64,
        #[serde(default = "default_tangential")]
        tangential_std: f64,
        #[serde(default = "default_rate")]
        rate: f64,
        #[serde(default = "default_scale")]
        scale: f64,
    },
    Scurve {
        #[serde(default = "default_jitter")]
        noise: f64,
    },
    Moon {
        #[serde(default = "default_jitter")]
        noise: f64,
    },
}

fn default_arms() -> usize {
    5
}
fn default_radial() -> f64 {
    0.3
}
fn default_tangential() -> f64 {
    0.1
}
fn default_rate() -> f64 {
    0.25
}
fn default_scale() -> f64 {
    1.0
}
fn default_jitter() -> f64 {
    0.1
}

impl DatasetSpec {
    pub fn pinwheel() -> Self {
        DatasetSpec::Pinwheel {
            arms: default_arms(),
            radial_std: default_radial(),
            tangential_std: default_tangential(),
            rate: default_rate(),
            scale: default_scale(),
        }
    }

    pub fn mixture_example() -> Self {
        DatasetSpec::Mixture1d {
            weights: vec![0.5, 0.5],
            means: vec![-1.0, 1.0],
            stds: vec![0.5, 0.5],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            DatasetSpec::Mixture1d { .. } => 1,
            DatasetSpec::Gaussian { mean, .. } => mean.len(),
            _ => 2,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DatasetSpec::Mixture1d { .. } => "mixture1d",
            DatasetSpec::Gaussian { .. } => "gaussian",
            DatasetSpec::Pinwheel { .. } => "pinwheel",
            DatasetSpec::Scurve { .. } => "scurve",
            DatasetSpec::Moon { .. } => "moon",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        match self {
            DatasetSpec::Mixture1d {
                weights,
                means,
                stds,
            } => {
                crate::oracles::MixtureModel::new(
                    weights.clone(),
                    means.clone(),
                    stds.clone(),
                    1.0,
                    1.0,
                )?;
            }
            DatasetSpec::Gaussian { mean, cov } => {
                let d = mean.len();
                if d == 0 || cov.len() != d * d {
                    return bad("gaussian dataset needs mean of length d and a d*d covariance");
                }
                check_psd(&DMatrix::from_row_slice(d, d, cov), "dataset covariance")?;
            }
            DatasetSpec::Pinwheel {
                arms,
                radial_std,
                tangential_std,
                scale,
                rate,
            } => {
                if *arms == 0 || !(*radial_std >= 0.0) || !(*tangential_std >= 0.0) {
                    return bad("pinwheel needs arms >= 1 and nonnegative stds");
                }
                if !(*scale > 0.0) || !rate.is_finite() {
                    return bad("pinwheel scale must be positive and rate finite");
                }
            }
            DatasetSpec::Scurve { noise } | DatasetSpec::Moon { noise } => {
                if !(*noise >= 0.0) {
                    return bad("jitter must be nonnegative");
                }
            }
        }
        Ok(())
    }
}

/// `n` i.i.d. samples as rows.
pub fn generate(spec: &DatasetSpec, n: usize, seed: u64) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::InvalidRange("need at least one sample".into()));
    }
    spec.validate()?;
    let mut rng = seeded(seed);
    let d = spec.dim();
    let mut out = DMatrix::zeros(n, d);
    match spec {
        DatasetSpec::Mixture1d {
            weights,
            means,
            stds,
        } => {
            let prior = crate::oracles::MixturePosterior {
                weights: weights.clone(),
                means: means.clone(),
                vars: stds.iter().map(|s| s * s).collect(),
            };
            for i in 0..n {
                out[(i, 0)] = prior.draw(&mut rng);
            }
        }
        DatasetSpec::Gaussian { mean, cov } => {
            let root = sym_sqrt(&DMatrix::from_row_slice(d, d, cov))?;
            let mu = DVector::from_column_slice(mean);
            for i in 0..n {
                let z = DVector::from_fn(d, |_, _| standard_normal(&mut rng));
                let x = &mu + &root * z;
                out.row_mut(i).copy_from(&x.transpose());
            }
        }
        DatasetSpec::Pinwheel {
            arms,
            radial_std,
            tangential_std,
            rate,
            scale,
        } => {
            for i in 0..n {
                let arm = rng.random_range(0..*arms);
                let f0 = 1.0 + radial_std * standard_normal(&mut rng);
                let f1 = tangential_std * standard_normal(&mut rng);
                let angle = 2.0 * PI * arm as f64 / *arms as f64 + rate * f0.exp();
                let (s, c) = angle.sin_cos();
                out[(i, 0)] = scale * (c * f0 - s * f1);
                out[(i, 1)] = scale * (s * f0 + c * f1);
            }
        }
        DatasetSpec::Scurve { noise } => {
            // both coordinates are odd in t, so the curve is centred
            for i in 0..n {
                let t = 3.0 * PI * (rng.random::<f64>() - 0.5);
                out[(i, 0)] = t.sin() + noise * standard_normal(&mut rng);
                out[(i, 1)] = t.signum() * (t.cos() - 1.0) + noise * standard_normal(&mut rng);
            }
        }
        DatasetSpec::Moon { noise } => {
            for i in 0..n {
                let theta = PI * rng.random::<f64>();
                let (s, c) = theta.sin_cos();
                let (x, y) = if rng.random::<bool>() {
                    (c, s)
                } else {
                    (1.0 - c, 0.5 - s)
                };
                // the union of both halves has mean (0.5, 0.25)
                out[(i, 0)] = x - 0.5 + noise * standard_normal(&mut rng);
                out[(i, 1)] = y - 0.25 + noise * standard_normal(&mut rng);
            }
        }
    }
    Ok(out)
}

/// `y = a x + sigma_n eps` row by row. `a = 0` is allowed but makes the
/// observation uninformative.
pub fn degrade(x: &DMatrix<f64>, a: f64, sigma_n: f64, seed: u64) -> Result<DMatrix<f64>> {
    if !(sigma_n >= 0.0) || !a.is_finite() {
        return Err(Error::InvalidRange(format!(
            "degradation needs finite a and sigma_n >= 0, got a = {a}, sigma_n = {sigma_n}"
        )));
    }
    let mut rng = seeded(seed);
    let mut y = x * a;
    if sigma_n > 0.0 {
        // row-major draw order so the noise of row i does not depend on d
        for i in 0..y.nrows() {
            for j in 0..y.ncols() {
                y[(i, j)] += sigma_n * standard_normal(&mut rng);
            }
        }
    }
    Ok(y)
}
