//! Experiment runner for the `asgd` solvers: JSON configs, seed sweeps,
//! CSV and plot output, and the `asgd-lab` subcommands.

pub mod commands;
pub mod config;
pub mod experiment;
pub mod output;

pub use config::{ConfigError, ExperimentConfig};
pub use experiment::{run_experiment, CurvePoint, CurveTable};
