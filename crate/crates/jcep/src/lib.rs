//! Experiment harness for `jcep-core`: TOML configuration, seeded parallel sweeps,
//! result and diagnostics CSVs, run manifests, summaries and single-row replay.

pub mod config;
pub mod experiment;
pub mod io;
pub mod replay;
pub mod summary;

pub use config::{ExperimentConfig, Profile};
pub use experiment::{run_experiment, ResultRow};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error(transparent)]
    Core(#[from] jcep_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
