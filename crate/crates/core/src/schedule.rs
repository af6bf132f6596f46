//! Discrete variance-preserving diffusion schedule.
//!
//! Index convention: `k = 0` is clean data and `beta[0] = 0` is a sentinel
//! that never drives a transition. The forward transition `k-1 -> k` is
//! `N(sqrt(1 - beta_k) x_{k-1}, beta_k I)`, so
//! `x_k = sqrt(alpha_bar_k) x_0 + sqrt(1 - alpha_bar_k) eps`.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::standard_normal;

/// Parameters of a linear beta schedule, as they appear in run configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleParams {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            steps: 1000,
            beta_min: 1e-4,
            beta_max: 0.02,
        }
    }
}

impl ScheduleParams {
    pub fn build(&self) -> Result<NoiseSchedule> {
        build_schedule(self.steps, self.beta_min, self.beta_max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    /// `tail[k] = alpha_k * alpha_{k+1} * ... * alpha_T`, with `tail[T+1] = 1`.
    tail: Vec<f64>,
}

/// Linear schedule with `beta_1 = beta_min`, `beta_T = beta_max`.
pub fn build_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::InvalidRange(format!("need at least 2 steps, got {steps}")));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(Error::InvalidRange(format!(
            "need 0 < beta_min <= beta_max < 1, got beta_min = {beta_min}, beta_max = {beta_max}"
        )));
    }
    let span = (steps - 1) as f64;
    let mut beta = Vec::with_capacity(steps + 1);
    beta.push(0.0);
    for k in 1..=steps {
        let t = (k - 1) as f64 / span;
        beta.push(beta_min + (beta_max - beta_min) * t);
    }
    NoiseSchedule::from_betas(beta)
}

impl NoiseSchedule {
    /// Build from a full beta array (index 0..=T, `beta[0]` must be 0).
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.len() < 3 {
            return Err(Error::InvalidRange("schedule needs T >= 2".into()));
        }
        if beta[0] != 0.0 {
            return Err(Error::InvalidRange("beta_0 must be 0".into()));
        }
        for w in beta.windows(2) {
            if w[1] < w[0] {
                return Err(Error::InvalidRange("beta must be nondecreasing".into()));
            }
        }
        if beta[1..].iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::InvalidRange("beta_k must lie in (0, 1) for k >= 1".into()));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut acc = 1.0;
        for &a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let steps = beta.len() - 1;
        let mut tail = vec![1.0; steps + 2];
        for k in (0..=steps).rev() {
            tail[k] = tail[k + 1] * alpha[k];
        }
        Ok(Self {
            beta,
            alpha,
            alpha_bar,
            tail,
        })
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.beta.len() - 1
    }

    pub fn beta(&self, k: usize) -> f64 {
        self.beta[k]
    }

    pub fn alpha(&self, k: usize) -> f64 {
        self.alpha[k]
    }

    pub fn alpha_bar(&self, k: usize) -> f64 {
        self.alpha_bar[k]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// `alpha_k * ... * alpha_T`; equals 1 for `k = T + 1`.
    pub fn tail_product(&self, k: usize) -> f64 {
        self.tail[k]
    }

    /// `beta_k (1 - alpha_bar_{k-1}) / (1 - alpha_bar_k)` for `k >= 1`.
    pub fn posterior_variance(&self, k: usize) -> f64 {
        debug_assert!(k >= 1);
        self.beta[k] * (1.0 - self.alpha_bar[k - 1]) / (1.0 - self.alpha_bar[k])
    }

    pub fn check_index(&self, k: usize) -> Result<()> {
        if k > self.steps() {
            Err(Error::IndexOutOfRange {
                k,
                steps: self.steps(),
            })
        } else {
            Ok(())
        }
    }

    /// Draw `x_k ~ N(sqrt(alpha_bar_k) x0, (1 - alpha_bar_k) I)`.
    pub fn forward_sample<R: Rng + ?Sized>(
        &self,
        x0: &DVector<f64>,
        k: usize,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        self.check_index(k)?;
        if k == 0 {
            return Ok(x0.clone());
        }
        let ab = self.alpha_bar[k];
        let (signal, noise) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(x0.map(|v| signal * v + noise * standard_normal(rng)))
    }
}
