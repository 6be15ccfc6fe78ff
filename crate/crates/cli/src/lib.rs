//! Experiment runner for the learned-MPC toolkit: configuration, run
//! manifests, and the command pipelines behind the `mpclearn` binary.

pub mod config;
pub mod manifest;
pub mod pipeline;

pub use config::{stage_seed, ConfigError, ExperimentConfig};
pub use pipeline::CliError;
