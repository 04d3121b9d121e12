//! Line-delimited JSON run metrics and the tables derived from them.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SyntheticTaskSpec;
use crate::harness::config::Method;
use crate::prune::{Phase, StepRecord};

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{0}: no header record")]
    NoHeader(PathBuf),
    #[error("{0}: no final record")]
    NoFinal(PathBuf),
    #[error("runs use different task specs ({0} differs from {1})")]
    MixedTasks(PathBuf, PathBuf),
    #[error("no metrics files given")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeaderRecord {
    pub method: Method,
    pub seed: u64,
    pub preset: Option<String>,
    pub task: SyntheticTaskSpec,
    pub prunable_count: usize,
    pub total_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLine {
    pub step: usize,
    pub epoch: usize,
    pub phase: Phase,
    pub loss: f64,
    pub penalty: f64,
    pub objective: f64,
    pub sparsity: f64,
    pub zero_fraction: f64,
    pub eta: f64,
    pub lr: f64,
    /// Present on prune events only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_sparsity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeroed: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kept: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// Present on prior-annealing steps only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma0_sq: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
}

impl StepLine {
    pub fn is_prune_event(&self) -> bool {
        self.zeroed.is_some()
    }
}

impl From<&StepRecord> for StepLine {
    fn from(r: &StepRecord) -> Self {
        StepLine {
            step: r.step,
            epoch: r.epoch,
            phase: r.phase,
            loss: r.loss,
            penalty: r.penalty,
            objective: r.loss + r.penalty,
            sparsity: r.sparsity,
            zero_fraction: r.zero_fraction,
            eta: r.eta,
            lr: r.lr,
            target_sparsity: r.prune.map(|e| e.target_sparsity),
            zeroed: r.prune.map(|e| e.zeroed),
            kept: r.prune.map(|e| e.kept),
            threshold: r.prune.and_then(|e| e.threshold),
            sigma0_sq: r.sigma0_sq,
            tau: r.tau,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub epoch: usize,
    pub dev_accuracy: f64,
    pub sparsity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalRecord {
    pub step: usize,
    pub dev_accuracy: f64,
    pub test_accuracy: f64,
    /// Fraction of prunable coordinates that are exactly zero.
    pub sparsity: f64,
    pub masked: usize,
    pub prunable_count: usize,
    /// Smallest surviving magnitude at the last prune event.
    pub final_threshold: Option<f64>,
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Record {
    Header(HeaderRecord),
    Step(StepLine),
    Eval(EvalRecord),
    Final(FinalRecord),
}

/// Appends records, one JSON object per line, flushing after each line so
/// an interrupted run leaves a parseable prefix.
pub struct MetricsWriter {
    out: BufWriter<File>,
    path: PathBuf,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self, MetricsError> {
        let file = File::create(path).map_err(|source| MetricsError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self {
            out: BufWriter::new(file),
            path: path.to_path_buf(),
        })
    }

    pub fn write(&mut self, record: &Record) -> Result<(), MetricsError> {
        let line = serde_json::to_string(record).expect("records serialize");
        let io = |source| MetricsError::Io {
            path: self.path.clone(),
            source,
        };
        writeln!(self.out, "{line}").map_err(io)?;
        self.out.flush().map_err(|source| MetricsError::Io {
            path: self.path.clone(),
            source,
        })
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<Record>, MetricsError> {
    let file = File::open(path).map_err(|source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| MetricsError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| MetricsError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// `(step, threshold)` for every prune event, in file (step) order. A
/// `None` threshold marks an event that pruned every coordinate.
pub fn threshold_trajectory(records: &[Record]) -> Vec<(usize, Option<f64>)> {
    records
        .iter()
        .filter_map(|r| match r {
            Record::Step(s) if s.is_prune_event() => Some((s.step, s.threshold)),
            _ => None,
        })
        .collect()
}

pub fn export_threshold_trajectory(path: &Path) -> Result<Vec<(usize, Option<f64>)>, MetricsError> {
    Ok(threshold_trajectory(&read_metrics(path)?))
}

pub fn trajectory_to_csv(rows: &[(usize, Option<f64>)]) -> String {
    let mut s = String::from("step,threshold\n");
    for (step, th) in rows {
        match th {
            Some(t) => s.push_str(&format!("{step},{t:e}\n")),
            None => s.push_str(&format!("{step},\n")),
        }
    }
    s
}

/// Aggregate of one method across seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub seeds: Vec<u64>,
    pub mean_test_accuracy: f64,
    /// Sample standard deviation; 0 for a single run.
    pub sd_test_accuracy: f64,
    pub mean_sparsity: f64,
    pub mean_final_threshold: Option<f64>,
}

pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups completed runs by method. Runs must share one task spec.
pub fn compare_runs(paths: &[PathBuf]) -> Result<Vec<MethodSummary>, MetricsError> {
    if paths.is_empty() {
        return Err(MetricsError::Empty);
    }
    let mut first: Option<(PathBuf, SyntheticTaskSpec)> = None;
    type Group = (Method, Vec<(u64, FinalRecord)>);
    let mut groups: BTreeMap<&'static str, Group> = BTreeMap::new();
    for path in paths {
        let records = read_metrics(path)?;
        let header = records
            .iter()
            .find_map(|r| match r {
                Record::Header(h) => Some(h.clone()),
                _ => None,
            })
            .ok_or_else(|| MetricsError::NoHeader(path.clone()))?;
        let fin = records
            .iter()
            .rev()
            .find_map(|r| match r {
                Record::Final(f) => Some(f.clone()),
                _ => None,
            })
            .ok_or_else(|| MetricsError::NoFinal(path.clone()))?;
        match &first {
            None => first = Some((path.clone(), header.task.clone())),
            Some((p0, task)) if *task != header.task => {
                return Err(MetricsError::MixedTasks(path.clone(), p0.clone()));
            }
            Some(_) => {}
        }
        groups
            .entry(header.method.as_str())
            .or_insert_with(|| (header.method, Vec::new()))
            .1
            .push((header.seed, fin));
    }
    let order = [Method::Mgpp, Method::Gmp, Method::L2, Method::Pa];
    let mut out = Vec::new();
    for m in order {
        let Some((method, runs)) = groups.remove(m.as_str()) else {
            continue;
        };
        let accs: Vec<f64> = runs.iter().map(|(_, f)| f.test_accuracy).collect();
        let (mean, sd) = mean_sd(&accs);
        let sparsity = runs.iter().map(|(_, f)| f.sparsity).sum::<f64>() / runs.len() as f64;
        let thresholds: Vec<f64> = runs.iter().filter_map(|(_, f)| f.final_threshold).collect();
        out.push(MethodSummary {
            method,
            seeds: runs.iter().map(|(s, _)| *s).collect(),
            mean_test_accuracy: mean,
            sd_test_accuracy: sd,
            mean_sparsity: sparsity,
            mean_final_threshold: (thresholds.len() == runs.len())
                .then(|| thresholds.iter().sum::<f64>() / thresholds.len() as f64),
        });
    }
    Ok(out)
}

pub fn comparison_to_csv(rows: &[MethodSummary]) -> String {
    let mut s =
        String::from("method,runs,mean_test_accuracy,sd_test_accuracy,mean_sparsity,mean_final_threshold,seeds\n");
    for r in rows {
        let seeds: Vec<String> = r.seeds.iter().map(u64::to_string).collect();
        let th = r.mean_final_threshold.map(|t| format!("{t:e}")).unwrap_or_default();
        s.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6},{},{}\n",
            r.method,
            r.seeds.len(),
            r.mean_test_accuracy,
            r.sd_test_accuracy,
            r.mean_sparsity,
            th,
            seeds.join(";")
        ));
    }
    s
}
