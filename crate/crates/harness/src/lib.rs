//! Experiment harness: configuration, seeded multi-trial runs, CSV output,
//! summaries and field dumps.

pub mod cli;
pub mod config;
pub mod dump;
pub mod experiment;
pub mod summary;

pub use config::{parse_config, parse_str, ConfigError, ExperimentConfig};
pub use experiment::{run_experiment, ExperimentError, RunOptions};
