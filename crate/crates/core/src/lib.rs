//! Variance-scaled reverse diffusion for traversing the distortion-perception
//! tradeoff, with analytic Gaussian and Gaussian-mixture oracles.

pub mod csv;
pub mod datasets;
pub mod error;
pub mod linalg;
pub mod measurement;
pub mod metrics;
pub mod nn;
pub mod oracles;
pub mod rng;
pub mod sampler;
pub mod schedule;

pub use error::{Error, Result};
pub use datasets::{degrade, generate, DatasetSpec};
pub use measurement::{MeasurementModel, Operator};
pub use metrics::{evaluate_dp, evaluate_dp_against, DPPoint, DivergenceKind, PerceptionOptions, W2Method};
pub use oracles::*;
pub use nn::{Architecture, Checkpoint, ScoreNetwork, TrainConfig};
pub use rng::{derive_seed, seeded, SeededRng};
pub use schedule::{build_schedule, NoiseSchedule, ScheduleParams};
pub use sampler::{
    dps_guidance, reverse_step, sample, sample_batch, sweep_lambda, tweedie_x0, GuidanceMode,
    NoiseScaling, Observations, OracleScore, PriorScore, SamplerConfig, ScoreSource, SigmaTilde,
    SweepEntry, Trajectory, YSource, ZetaScale, ZetaSchedule,
};
