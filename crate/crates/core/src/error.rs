use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid range: {0}")]
    InvalidRange(String),

    #[error("step index {k} out of range 0..={steps}")]
    IndexOutOfRange { k: usize, steps: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("linear algebra failure: {0}")]
    LinearAlgebra(String),

    #[error("score requested at k = 0 (alpha_bar_0 = 1 makes the noise scale vanish)")]
    ZeroStepScore,

    #[error("training diverged at step {step}: loss = {loss}")]
    TrainingDivergence { step: usize, loss: f64 },

    #[error("sampler diverged at step k = {step} (max |x| = {max_abs:e})")]
    SamplerDivergence { step: usize, max_abs: f64 },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
