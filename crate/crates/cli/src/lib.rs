//! Command-line front end: training, sampling, sweeps, oracle reports and
//! figures. Every output embeds the resolved config, so any output file can
//! be replayed.

pub mod commands;
pub mod config;
pub mod error;
pub mod plot;

pub use commands::{replay, run, Command, Options};
pub use config::RunConfig;
pub use error::CliError;
