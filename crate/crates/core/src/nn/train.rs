//! Adam and the denoising score matching training loop.
//!
//! Step `s` draws its batch and noise from `derive_seed(seed, [s])`, so a run
//! resumed from a checkpoint at step `s` replays the uninterrupted run.

use std::path::PathBuf;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::{generate, DatasetSpec};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};
use crate::schedule::NoiseSchedule;

use super::checkpoint::{save_checkpoint, Checkpoint};
use super::network::{Architecture, ScoreNetwork};

/// Path component reserved for the initialisation stream.
const INIT_STREAM: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub params: AdamParams,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl Adam {
    pub fn new(params: AdamParams, n: usize) -> Self {
        Self {
            params,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let AdamParams { beta1, beta2, eps } = self.params;
        let c1 = 1.0 - beta1.powf(self.t as f64);
        let c2 = 1.0 - beta2.powf(self.t as f64);
        for i in 0..theta.len() {
            let g = grad[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            theta[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Learning rate decays linearly to `learning_rate * final_lr_fraction`.
    #[serde(default = "one")]
    pub final_lr_fraction: f64,
    #[serde(default = "adam")]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub adam: AdamParams,
    pub seed: u64,
    #[serde(default)]
    pub checkpoint_path: Option<PathBuf>,
    /// Write a checkpoint every this many steps (0: only at the end).
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Record the loss every this many steps.
    #[serde(default = "one_usize")]
    pub log_every: usize,
    /// Fill the `wall_ms` column of the log (makes logs run-dependent).
    #[serde(default)]
    pub record_wall_time: bool,
}

fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn adam() -> OptimizerKind {
    OptimizerKind::Adam
}

impl TrainConfig {
    pub fn new(steps: usize, batch_size: usize, learning_rate: f64, seed: u64) -> Self {
        Self {
            steps,
            batch_size,
            learning_rate,
            final_lr_fraction: 1.0,
            optimizer: OptimizerKind::Adam,
            adam: AdamParams::default(),
            seed,
            checkpoint_path: None,
            checkpoint_every: 0,
            log_every: 1,
            record_wall_time: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(self.final_lr_fraction > 0.0 && self.final_lr_fraction <= 1.0) {
            return Err(Error::InvalidConfig("final_lr_fraction must lie in (0, 1]".into()));
        }
        if self.log_every == 0 {
            return Err(Error::InvalidConfig("log_every must be positive".into()));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return Err(Error::InvalidConfig("invalid Adam hyperparameters".into()));
        }
        Ok(())
    }

    fn lr_at(&self, step: usize) -> f64 {
        let frac = if self.steps > 1 {
            step as f64 / (self.steps - 1) as f64
        } else {
            0.0
        };
        self.learning_rate * (1.0 - (1.0 - self.final_lr_fraction) * frac)
    }
}

/// Where training batches come from.
#[derive(Debug, Clone, Copy)]
pub enum DataSource<'a> {
    /// Uniform draws with replacement from a fixed sample.
    Fixed(&'a DMatrix<f64>),
    /// Fresh samples every step.
    Generator(&'a DatasetSpec),
}

impl DataSource<'_> {
    fn dim(&self) -> usize {
        match self {
            DataSource::Fixed(m) => m.ncols(),
            DataSource::Generator(s) => s.dim(),
        }
    }

    fn batch<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<DMatrix<f64>> {
        match self {
            DataSource::Fixed(m) => {
                if m.nrows() == 0 {
                    return Err(Error::EmptyInput("training data"));
                }
                let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..m.nrows())).collect();
                Ok(DMatrix::from_fn(n, m.ncols(), |i, j| m[(idx[i], j)]))
            }
            DataSource::Generator(spec) => generate(spec, n, rng.random()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub step: usize,
    pub loss: f64,
    pub wall_ms: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub net: ScoreNetwork,
    pub optimizer: Adam,
    pub log: Vec<LogEntry>,
    /// Number of completed steps.
    pub step: usize,
}

/// Fresh network for `config`, initialised from the config seed.
pub fn init_network(arch: Architecture, schedule: &NoiseSchedule, seed: u64) -> Result<ScoreNetwork> {
    ScoreNetwork::new(arch, schedule.steps(), derive_seed(seed, &[INIT_STREAM]))
}

/// Train from scratch, or continue from `resume`.
pub fn train(
    config: &TrainConfig,
    arch: Architecture,
    data: DataSource<'_>,
    schedule: &NoiseSchedule,
    resume: Option<Checkpoint>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if data.dim() != arch.data_dim {
        return Err(Error::DimensionMismatch {
            expected: arch.data_dim,
            got: data.dim(),
        });
    }
    let (mut net, mut opt, start) = match resume {
        Some(ck) => {
            if ck.net.architecture() != &arch {
                return Err(Error::Checkpoint("checkpoint architecture differs from config".into()));
            }
            if ck.seed != config.seed {
                return Err(Error::Checkpoint("checkpoint seed differs from config".into()));
            }
            let n = ck.net.param_count();
            let opt = ck.optimizer.unwrap_or_else(|| Adam::new(config.adam, n));
            (ck.net, opt, ck.step)
        }
        None => {
            let net = init_network(arch, schedule, config.seed)?;
            let n = net.param_count();
            (net, Adam::new(config.adam, n), 0)
        }
    };
    let clock = Instant::now();
    let mut log = Vec::new();
    for step in start..config.steps {
        let mut rng = seeded(derive_seed(config.seed, &[step as u64]));
        let batch = data.batch(config.batch_size, &mut rng)?;
        let (loss, grad) = net.dsm_loss_and_grad(&batch, schedule, &mut rng)?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::TrainingDivergence { step, loss });
        }
        opt.step(net.params_mut(), &grad, config.lr_at(step));
        if step % config.log_every == 0 || step + 1 == config.steps {
            log.push(LogEntry {
                step,
                loss,
                wall_ms: config
                    .record_wall_time
                    .then(|| clock.elapsed().as_secs_f64() * 1e3),
            });
        }
        let done = step + 1;
        if let Some(path) = &config.checkpoint_path {
            if config.checkpoint_every > 0 && done % config.checkpoint_every == 0 && done < config.steps {
                save_checkpoint(path, &Checkpoint::new(&net, Some(&opt), config.seed, done, schedule))?;
            }
        }
    }
    let step = config.steps.max(start);
    if let Some(path) = &config.checkpoint_path {
        save_checkpoint(path, &Checkpoint::new(&net, Some(&opt), config.seed, step, schedule))?;
    }
    Ok(TrainOutcome {
        net,
        optimizer: opt,
        log,
        step,
    })
}
