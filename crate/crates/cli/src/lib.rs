//! Command-line front end: config resolution and subcommands.

pub mod commands;
pub mod config;

use std::path::PathBuf;

pub use commands::{run, Command};
pub use config::{ConfigError, Preset, RunConfig};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] cpsr::Error),
    #[error("checkpoint not found: {}", .0.display())]
    MissingCheckpoint(PathBuf),
    #[error("{0}")]
    Io(String),
}
