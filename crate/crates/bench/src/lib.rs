//! Shared fixtures for the criterion benches.

use dptraverse::{
    generate, mixture_posterior, DatasetSpec, GaussianPosterior, MeasurementModel, MixtureModel, NoiseSchedule,
    OracleScore, ScheduleParams, ScoreNetwork, Architecture,
};
use nalgebra::{DMatrix, DVector};

pub fn schedule() -> NoiseSchedule {
    ScheduleParams::default().build().expect("default schedule")
}

/// 2D Gaussian posterior with trace 1.
pub fn gaussian() -> GaussianPosterior {
    GaussianPosterior::new(
        DVector::from_vec(vec![0.5, -0.25]),
        DMatrix::from_row_slice(2, 2, &[0.4, 0.1, 0.1, 0.6]),
    )
    .expect("valid posterior")
}

pub fn gaussian_oracle(s: &NoiseSchedule) -> OracleScore {
    OracleScore::new(gaussian(), s).expect("oracle")
}

/// The two-component mixture observed at `y = -0.6`.
pub fn mixture_oracle(s: &NoiseSchedule) -> OracleScore {
    let post = mixture_posterior(&MixtureModel::two_component_example(), -0.6).expect("posterior");
    OracleScore::new(post, s).expect("oracle")
}

/// Untrained pinwheel-sized network; timing does not depend on the weights.
pub fn network(s: &NoiseSchedule) -> ScoreNetwork {
    ScoreNetwork::new(Architecture::reference(2), s.steps(), 7).expect("network")
}

pub fn measurement() -> MeasurementModel {
    MeasurementModel::scaled_identity(1.0, 0.5, 2).expect("measurement")
}

pub fn pinwheel(n: usize, seed: u64) -> DMatrix<f64> {
    generate(&DatasetSpec::pinwheel(), n, seed).expect("pinwheel")
}
