//! Experiment runner: TOML configs, seeded runs on the drifting four-rooms
//! task, CSV and manifest output, and the summary metrics.

pub mod config;
pub mod metrics;
pub mod runner;
pub mod summary;

pub use config::ExperimentConfig;
pub use metrics::{auc, steps_to_threshold};
pub use runner::{run_experiment, run_experiment_in, run_seed, Manifest, RunRecord, SeedRun};
pub use summary::{summarize, RunSummary, SeedSummary};
