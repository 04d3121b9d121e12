//! Experiment orchestration: configs and presets, run execution, metrics,
//! checkpoints and exports.

pub mod checkpoint;
pub mod config;
pub mod export;
pub mod metrics;
pub mod run;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use config::{load_config, load_config_with, preset, ConfigError, ExperimentConfig, Method};
pub use export::{dump_schedule, histogram, histogram_to_csv};
pub use metrics::{
    compare_runs, comparison_to_csv, export_threshold_trajectory, read_metrics, trajectory_to_csv, Record,
};
pub use run::{run_experiment, RunError, RunSummary};

use std::path::Path;

/// Histogram of the nonzero prunable weights stored in a checkpoint.
pub fn export_histogram(checkpoint: &Path, bins: usize) -> Result<Vec<(f64, usize)>, CheckpointError> {
    Ok(histogram(&load_checkpoint(checkpoint)?, bins))
}
