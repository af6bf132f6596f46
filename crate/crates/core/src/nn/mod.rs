//! The learned score network, its training loop and checkpoints.

mod checkpoint;
mod network;
mod train;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint,
};
pub use network::{Activation, Architecture, Parameterization, ScoreNetwork, Workspace};
pub use train::{
    init_network, train, Adam, AdamParams, DataSource, LogEntry, OptimizerKind, TrainConfig,
    TrainOutcome,
};
