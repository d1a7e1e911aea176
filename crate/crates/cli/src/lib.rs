//! Reproducible experiment runner for the `tvstab` workbench.
//!
//! One invocation runs one named experiment. Every run writes `manifest.txt`
//! (the fully resolved config, re-runnable with `--config`), `results.csv`,
//! `summary.txt` and zero or more two-column `plot_*.csv` files.
//! Randomness comes from the single run seed, split per experiment with
//! `tvstab::rng::stream(seed, label)`.

pub mod config;
pub mod experiments;
pub mod runner;

pub use config::{ExperimentConfig, Resolved};
pub use experiments::{list_experiments, registry, Experiment};
pub use runner::{run, RunReport};

use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    /// malformed config, unknown experiment or parameter
    Parse(String),
    /// an experiment check failed
    Assertion { check: String, detail: String },
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Assertion { .. } | CliError::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Parse(m) => write!(f, "error: {m}"),
            CliError::Assertion { check, detail } => write!(f, "check failed: {check}: {detail}"),
            CliError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
