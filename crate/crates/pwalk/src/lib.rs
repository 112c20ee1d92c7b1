//! Experiment runner for perturbed random walks: TOML configs, seeded
//! parallel Monte Carlo, statistical checks and report files.

pub mod config;
pub mod report;
pub mod runner;

pub use config::{ConfigError, Experiment, ExperimentConfig, LimitSampler, Plan};
pub use report::{Check, Report};
pub use runner::{execute, RunError, RunOutcome};
