//! Experiment orchestration for `crw-core`: configuration, replicate
//! fan-out, aggregate reports and reproducible output files.

pub mod config;
pub mod run;

pub use config::{parse_config, ConfigError, Experiment, ExperimentConfig, RunSettings};
pub use run::{replay, run_experiment, RunError, RunManifest, RunOutcome};
