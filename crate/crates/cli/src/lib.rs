//! Pipeline commands behind the `tavg` binary: dataset building, training,
//! generation, evaluation, ablation and synthetic clips.

pub mod commands;
pub mod config;
pub mod error;

pub use config::RunConfig;
pub use error::{CliError, CliResult};
