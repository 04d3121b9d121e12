//! Executes one experiment and writes its run directory.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{generate_dataset, DataError, Dataset};
use crate::harness::checkpoint::{save_checkpoint, CheckpointError};
use crate::harness::config::{ConfigError, ExperimentConfig, Method};
use crate::harness::metrics::{EvalRecord, FinalRecord, HeaderRecord, MetricsError, MetricsWriter, Record, StepLine};
use crate::params::ParamStore;
use crate::prune::{run_iterative, run_prior_annealing, PruneError, Regularizer, RunObserver, StepRecord};
use crate::transformer::{accuracy, ModelError, TransformerConfig};

pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const CHECKPOINT_FILE: &str = "final.ckpt";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Prune(#[from] PruneError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl RunError {
    /// Whether the failure is a rejected configuration rather than a
    /// failure while running.
    pub fn is_validation(&self) -> bool {
        matches!(self, RunError::Config(_))
    }
}

/// Contents of `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: Method,
    pub seed: u64,
    pub preset: Option<String>,
    pub out_dir: PathBuf,
    pub steps: usize,
    pub dev_accuracy: f64,
    pub test_accuracy: f64,
    pub sparsity: f64,
    pub masked: usize,
    pub prunable_count: usize,
    pub final_threshold: Option<f64>,
    /// Magnitude cut-off of the one-shot sparsification (prior annealing).
    pub pa_cutoff: Option<f64>,
    pub wall_clock_secs: f64,
}

fn pairs(d: &Dataset) -> impl Iterator<Item = (&[usize], usize)> {
    d.examples.iter().map(|e| (e.tokens.as_slice(), e.label))
}

struct Logger<'a> {
    writer: MetricsWriter,
    dev: &'a Dataset,
    model: TransformerConfig,
}

fn to_prune_err(e: impl std::error::Error + Send + Sync + 'static) -> PruneError {
    PruneError::Io(std::io::Error::other(e))
}

impl RunObserver for Logger<'_> {
    fn on_step(&mut self, record: &StepRecord, _params: &ParamStore) -> Result<(), PruneError> {
        self.writer
            .write(&Record::Step(StepLine::from(record)))
            .map_err(to_prune_err)
    }

    fn on_epoch_end(&mut self, epoch: usize, step: usize, params: &ParamStore) -> Result<(), PruneError> {
        let dev_accuracy = accuracy(pairs(self.dev), params, &self.model)?;
        self.writer
            .write(&Record::Eval(EvalRecord {
                step,
                epoch,
                dev_accuracy,
                sparsity: params.sparsity(),
            }))
            .map_err(to_prune_err)
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Runs `cfg` and writes `config.txt`, `metrics.jsonl`, `final.ckpt` and
/// `summary.json` into `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary, RunError> {
    cfg.validate()?;
    let started = Instant::now();
    let splits = generate_dataset(&cfg.task)?;
    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let config_path = dir.join(CONFIG_FILE);
    std::fs::write(&config_path, cfg.to_text()).map_err(io_err(&config_path))?;

    let model = cfg.model();
    let mut writer = MetricsWriter::create(&dir.join(METRICS_FILE))?;
    writer.write(&Record::Header(HeaderRecord {
        method: cfg.method,
        seed: cfg.seed,
        preset: cfg.preset.clone(),
        task: cfg.task.clone(),
        prunable_count: model.prunable_count(),
        total_steps: cfg.total_steps(),
    }))?;
    let mut logger = Logger {
        writer,
        dev: &splits.dev,
        model,
    };
    let train_cfg = cfg.train_config();
    let (output, pa_cutoff) = match cfg.method {
        Method::Pa => {
            let out = run_prior_annealing(&train_cfg, &cfg.pa_config()?, &splits.train, &mut logger)?;
            (out.run, Some(out.cutoff))
        }
        iterative => {
            // the L2 variant's decay is already part of `train_cfg`
            let regularizer = match iterative {
                Method::Mgpp => Regularizer::Mgp(cfg.mgp()?),
                _ => Regularizer::None,
            };
            let out = run_iterative(
                &train_cfg,
                &cfg.schedule(),
                regularizer,
                cfg.rezero_masked,
                &splits.train,
                &mut logger,
            )?;
            (out, None)
        }
    };
    let params = &output.params;
    let dev_accuracy = accuracy(pairs(&splits.dev), params, &model)?;
    let test_accuracy = accuracy(pairs(&splits.test), params, &model)?;
    let final_threshold = output.metrics.events().last().and_then(|e| e.threshold);
    let steps = output.metrics.steps.last().map_or(0, |s| s.step);

    let ckpt = dir.join(CHECKPOINT_FILE);
    save_checkpoint(params, &ckpt)?;
    let wall_clock_secs = started.elapsed().as_secs_f64();
    logger.writer.write(&Record::Final(FinalRecord {
        step: steps,
        dev_accuracy,
        test_accuracy,
        sparsity: params.sparsity(),
        masked: params.masked_count(),
        prunable_count: params.prunable_count(),
        final_threshold,
        wall_clock_secs,
    }))?;
    let summary = RunSummary {
        method: cfg.method,
        seed: cfg.seed,
        preset: cfg.preset.clone(),
        out_dir: dir.clone(),
        steps,
        dev_accuracy,
        test_accuracy,
        sparsity: params.sparsity(),
        masked: params.masked_count(),
        prunable_count: params.prunable_count(),
        final_threshold,
        pa_cutoff,
        wall_clock_secs,
    };
    let summary_path = dir.join(SUMMARY_FILE);
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    std::fs::write(&summary_path, json + "\n").map_err(io_err(&summary_path))?;
    Ok(summary)
}
