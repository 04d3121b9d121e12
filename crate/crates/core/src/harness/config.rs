//! Flat `key = value` experiment configs with dotted sections and named
//! presets.
//!
//! ```text
//! preset = desk-90
//! method = gmp        # mgpp | gmp | l2 | pa
//! mgp.sigma0_sq = 1e-10
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{total_steps, SyntheticTaskSpec, TaskKind};
use crate::optim::AdamWConfig;
use crate::prior::MgpConfig;
use crate::prune::{PaConfig, TrainConfig, L2_WEIGHT_DECAY};
use crate::schedule::{CubicScheduleConfig, PaScheduleConfig};
use crate::transformer::TransformerConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
    #[error("invalid value for {key}: {msg}")]
    Invalid { key: String, msg: String },
}

fn invalid(key: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Mgpp,
    Gmp,
    L2,
    Pa,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Mgpp => "mgpp",
            Method::Gmp => "gmp",
            Method::L2 => "l2",
            Method::Pa => "pa",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "mgpp" => Ok(Method::Mgpp),
            "gmp" => Ok(Method::Gmp),
            "l2" => Ok(Method::L2),
            "pa" => Ok(Method::Pa),
            other => Err(format!("unknown method {other:?} (expected mgpp, gmp, l2 or pa)")),
        }
    }
}

/// A fully resolved experiment. All fields are public so tests and presets
/// can build configs directly; [`ExperimentConfig::validate`] must pass
/// before a run starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub preset: Option<String>,
    pub method: Method,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub task: SyntheticTaskSpec,
    pub d: usize,
    pub k: usize,
    pub m_ff: usize,
    pub heads: usize,
    pub layers: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub optim: AdamWConfig,
    pub v_final: f64,
    pub t_i: usize,
    pub t_f: usize,
    pub delta_t: usize,
    pub lambda: f64,
    pub sigma0_sq: f64,
    pub sigma1_sq: f64,
    pub l2_weight_decay: f64,
    pub rezero_masked: bool,
    pub pa_sigma0_init_sq: f64,
    pub pa_sigma0_end_sq: f64,
    pub pa_tau0: f64,
    pub pa_t_i: Option<usize>,
    pub pa_t_f: Option<usize>,
    pub pa_refine_epochs: usize,
}

/// Names of the shipped presets.
pub const PRESETS: &[&str] = &["desk-90", "desk-90-pa", "mnli-90"];

/// Settings of a named preset.
pub fn preset(name: &str) -> Result<ExperimentConfig, ConfigError> {
    let desk = ExperimentConfig {
        preset: Some("desk-90".into()),
        method: Method::Mgpp,
        seed: 1,
        out_dir: PathBuf::from("runs/desk-90"),
        task: SyntheticTaskSpec {
            kind: TaskKind::SparseMotif,
            vocab: 16,
            seq_len: 16,
            n_classes: 4,
            n_train: 8000,
            n_dev: 1000,
            n_test: 1000,
            seed: 1,
        },
        d: 32,
        k: 8,
        m_ff: 64,
        heads: 4,
        layers: 2,
        epochs: 10,
        batch_size: 32,
        optim: AdamWConfig {
            lr: 1e-3,
            lr_end: 1e-4,
            ..AdamWConfig::default()
        },
        v_final: 0.9,
        t_i: 500,
        t_f: 2000,
        delta_t: 10,
        lambda: 1e-7,
        sigma0_sq: 1e-10,
        sigma1_sq: 0.1,
        l2_weight_decay: L2_WEIGHT_DECAY,
        rezero_masked: false,
        pa_sigma0_init_sq: 1e-4,
        pa_sigma0_end_sq: 1e-5,
        pa_tau0: 1.0,
        pa_t_i: None,
        pa_t_f: None,
        pa_refine_epochs: 1,
    };
    match name {
        "desk-90" => Ok(desk),
        "desk-90-pa" => Ok(ExperimentConfig {
            preset: Some(name.into()),
            method: Method::Pa,
            out_dir: PathBuf::from("runs/desk-90-pa"),
            epochs: 9,
            t_i: 450,
            t_f: 1800,
            ..desk
        }),
        "mnli-90" => Ok(ExperimentConfig {
            preset: Some(name.into()),
            out_dir: PathBuf::from("runs/mnli-90"),
            task: SyntheticTaskSpec {
                kind: TaskKind::MajorityToken,
                vocab: 16,
                seq_len: 16,
                n_classes: 3,
                n_train: 393_000,
                n_dev: 20_000,
                n_test: 20_000,
                seed: 1,
            },
            epochs: 8,
            batch_size: 32,
            optim: AdamWConfig {
                lr: 8e-5,
                lr_end: 8e-5,
                ..AdamWConfig::default()
            },
            t_i: 5500,
            t_f: 75500,
            delta_t: 10,
            sigma0_sq: 1e-10,
            sigma1_sq: 0.05,
            ..desk
        }),
        other => Err(ConfigError::UnknownPreset(other.to_string())),
    }
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        preset("desk-90").expect("built-in preset")
    }
}

/// Every key accepted in a config file.
pub const KEYS: &[&str] = &[
    "preset",
    "method",
    "seed",
    "out_dir",
    "task.kind",
    "task.vocab",
    "task.seq_len",
    "task.n_classes",
    "task.n_train",
    "task.n_dev",
    "task.n_test",
    "task.seed",
    "model.d",
    "model.k",
    "model.m_ff",
    "model.heads",
    "model.layers",
    "train.epochs",
    "train.batch_size",
    "train.lr",
    "train.lr_end",
    "train.beta1",
    "train.beta2",
    "train.eps",
    "train.weight_decay",
    "schedule.v_final",
    "schedule.t_i",
    "schedule.t_f",
    "schedule.delta_t",
    "mgp.lambda",
    "mgp.sigma0_sq",
    "mgp.sigma1_sq",
    "l2.weight_decay",
    "prune.rezero_masked",
    "pa.sigma0_init_sq",
    "pa.sigma0_end_sq",
    "pa.tau0",
    "pa.t_i",
    "pa.t_f",
    "pa.refine_epochs",
];

/// One `key = value` line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Splits config text into entries, rejecting malformed lines, unknown
/// keys and repeated keys.
pub fn parse_entries(text: &str) -> Result<Vec<Entry>, ConfigError> {
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or_else(|| ConfigError::Parse {
            line,
            msg: format!("expected `key = value`, found {body:?}"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(ConfigError::Parse {
                line,
                msg: "empty key or value".into(),
            });
        }
        if !KEYS.contains(&key) {
            return Err(ConfigError::UnknownKey {
                line,
                key: key.to_string(),
            });
        }
        if let Some(prev) = out.iter().find(|e| e.key == key) {
            return Err(ConfigError::Parse {
                line,
                msg: format!("{key} already set on line {}", prev.line),
            });
        }
        out.push(Entry {
            line,
            key: key.to_string(),
            value: value.to_string(),
        });
    }
    Ok(out)
}

fn parse_value<T: FromStr>(e: &Entry) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    e.value.parse().map_err(|err: T::Err| ConfigError::Parse {
        line: e.line,
        msg: format!("{}: cannot parse {:?}: {err}", e.key, e.value),
    })
}

impl ExperimentConfig {
    /// Applies one entry on top of the current settings.
    pub fn set(&mut self, e: &Entry) -> Result<(), ConfigError> {
        match e.key.as_str() {
            "preset" => self.preset = Some(e.value.clone()),
            "method" => self.method = parse_value(e)?,
            "seed" => self.seed = parse_value(e)?,
            "out_dir" => self.out_dir = PathBuf::from(&e.value),
            "task.kind" => {
                self.task.kind = e.value.parse().map_err(|err| ConfigError::Parse {
                    line: e.line,
                    msg: format!("task.kind: {err}"),
                })?
            }
            "task.vocab" => self.task.vocab = parse_value(e)?,
            "task.seq_len" => self.task.seq_len = parse_value(e)?,
            "task.n_classes" => self.task.n_classes = parse_value(e)?,
            "task.n_train" => self.task.n_train = parse_value(e)?,
            "task.n_dev" => self.task.n_dev = parse_value(e)?,
            "task.n_test" => self.task.n_test = parse_value(e)?,
            "task.seed" => self.task.seed = parse_value(e)?,
            "model.d" => self.d = parse_value(e)?,
            "model.k" => self.k = parse_value(e)?,
            "model.m_ff" => self.m_ff = parse_value(e)?,
            "model.heads" => self.heads = parse_value(e)?,
            "model.layers" => self.layers = parse_value(e)?,
            "train.epochs" => self.epochs = parse_value(e)?,
            "train.batch_size" => self.batch_size = parse_value(e)?,
            "train.lr" => self.optim.lr = parse_value(e)?,
            "train.lr_end" => self.optim.lr_end = parse_value(e)?,
            "train.beta1" => self.optim.beta1 = parse_value(e)?,
            "train.beta2" => self.optim.beta2 = parse_value(e)?,
            "train.eps" => self.optim.eps = parse_value(e)?,
            "train.weight_decay" => self.optim.weight_decay = parse_value(e)?,
            "schedule.v_final" => self.v_final = parse_value(e)?,
            "schedule.t_i" => self.t_i = parse_value(e)?,
            "schedule.t_f" => self.t_f = parse_value(e)?,
            "schedule.delta_t" => self.delta_t = parse_value(e)?,
            "mgp.lambda" => self.lambda = parse_value(e)?,
            "mgp.sigma0_sq" => self.sigma0_sq = parse_value(e)?,
            "mgp.sigma1_sq" => self.sigma1_sq = parse_value(e)?,
            "l2.weight_decay" => self.l2_weight_decay = parse_value(e)?,
            "prune.rezero_masked" => self.rezero_masked = parse_value(e)?,
            "pa.sigma0_init_sq" => self.pa_sigma0_init_sq = parse_value(e)?,
            "pa.sigma0_end_sq" => self.pa_sigma0_end_sq = parse_value(e)?,
            "pa.tau0" => self.pa_tau0 = parse_value(e)?,
            "pa.t_i" => self.pa_t_i = Some(parse_value(e)?),
            "pa.t_f" => self.pa_t_f = Some(parse_value(e)?),
            "pa.refine_epochs" => self.pa_refine_epochs = parse_value(e)?,
            other => {
                return Err(ConfigError::UnknownKey {
                    line: e.line,
                    key: other.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Builds a config from text. The preset (from `preset_override`, else
    /// the file's `preset` key, else `desk-90`) is expanded first and every
    /// other key is applied on top of it.
    pub fn from_text(text: &str, preset_override: Option<&str>) -> Result<Self, ConfigError> {
        let entries = parse_entries(text)?;
        let named = preset_override
            .map(str::to_string)
            .or_else(|| entries.iter().find(|e| e.key == "preset").map(|e| e.value.clone()));
        let mut cfg = match &named {
            Some(name) => preset(name)?,
            None => ExperimentConfig::default(),
        };
        for e in entries.iter().filter(|e| e.key != "preset") {
            cfg.set(e)?;
        }
        cfg.preset = named.or(cfg.preset);
        cfg.validate()?;
        Ok(cfg)
    }

    /// The key-value form of every setting, parseable by [`Self::from_text`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        if let Some(p) = &self.preset {
            put("preset", p.clone());
        }
        put("method", self.method.to_string());
        put("seed", self.seed.to_string());
        put("out_dir", self.out_dir.display().to_string());
        put("task.kind", self.task.kind.to_string());
        put("task.vocab", self.task.vocab.to_string());
        put("task.seq_len", self.task.seq_len.to_string());
        put("task.n_classes", self.task.n_classes.to_string());
        put("task.n_train", self.task.n_train.to_string());
        put("task.n_dev", self.task.n_dev.to_string());
        put("task.n_test", self.task.n_test.to_string());
        put("task.seed", self.task.seed.to_string());
        put("model.d", self.d.to_string());
        put("model.k", self.k.to_string());
        put("model.m_ff", self.m_ff.to_string());
        put("model.heads", self.heads.to_string());
        put("model.layers", self.layers.to_string());
        put("train.epochs", self.epochs.to_string());
        put("train.batch_size", self.batch_size.to_string());
        put("train.lr", format!("{:e}", self.optim.lr));
        put("train.lr_end", format!("{:e}", self.optim.lr_end));
        put("train.beta1", self.optim.beta1.to_string());
        put("train.beta2", self.optim.beta2.to_string());
        put("train.eps", format!("{:e}", self.optim.eps));
        put("train.weight_decay", format!("{:e}", self.optim.weight_decay));
        put("schedule.v_final", self.v_final.to_string());
        put("schedule.t_i", self.t_i.to_string());
        put("schedule.t_f", self.t_f.to_string());
        put("schedule.delta_t", self.delta_t.to_string());
        put("mgp.lambda", format!("{:e}", self.lambda));
        put("mgp.sigma0_sq", format!("{:e}", self.sigma0_sq));
        put("mgp.sigma1_sq", format!("{:e}", self.sigma1_sq));
        put("l2.weight_decay", format!("{:e}", self.l2_weight_decay));
        put("prune.rezero_masked", self.rezero_masked.to_string());
        put("pa.sigma0_init_sq", format!("{:e}", self.pa_sigma0_init_sq));
        put("pa.sigma0_end_sq", format!("{:e}", self.pa_sigma0_end_sq));
        put("pa.tau0", self.pa_tau0.to_string());
        if let Some(t) = self.pa_t_i {
            put("pa.t_i", t.to_string());
        }
        if let Some(t) = self.pa_t_f {
            put("pa.t_f", t.to_string());
        }
        put("pa.refine_epochs", self.pa_refine_epochs.to_string());
        s
    }

    pub fn model(&self) -> TransformerConfig {
        TransformerConfig {
            d: self.d,
            k: self.k,
            m_ff: self.m_ff,
            heads: self.heads,
            layers: self.layers,
            n_max: self.task.seq_len,
            vocab: self.task.vocab,
            n_classes: self.task.n_classes,
        }
    }

    /// Optimizer steps of the main training phase, `E·⌈n/m⌉`.
    pub fn total_steps(&self) -> usize {
        total_steps(self.task.n_train, self.batch_size, self.epochs)
    }

    pub fn schedule(&self) -> CubicScheduleConfig {
        CubicScheduleConfig {
            v_final: self.v_final,
            t_i: self.t_i,
            t_f: self.t_f,
            total_steps: self.total_steps(),
            delta_t: self.delta_t,
        }
    }

    pub fn mgp(&self) -> Result<MgpConfig, ConfigError> {
        MgpConfig::new(self.lambda, self.sigma0_sq, self.sigma1_sq).map_err(|e| invalid("mgp", e.to_string()))
    }

    pub fn train_config(&self) -> TrainConfig {
        let mut optim = self.optim;
        if self.method == Method::L2 {
            optim.weight_decay = self.l2_weight_decay;
        }
        TrainConfig {
            model: self.model(),
            optim,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
        }
    }

    pub fn pa_config(&self) -> Result<PaConfig, ConfigError> {
        let prior = MgpConfig::new(
            self.lambda,
            self.pa_sigma0_init_sq.max(self.pa_sigma0_end_sq),
            self.sigma1_sq,
        )
        .map_err(|e| invalid("pa", e.to_string()))?;
        Ok(PaConfig {
            prior,
            schedule: PaScheduleConfig {
                sigma0_init_sq: self.pa_sigma0_init_sq,
                sigma0_end_sq: self.pa_sigma0_end_sq,
                tau0: self.pa_tau0,
                t_i: self.pa_t_i.unwrap_or(self.t_i),
                t_f: self.pa_t_f.unwrap_or(self.t_f),
                total_steps: self.total_steps(),
            },
            refine_epochs: self.pa_refine_epochs,
        })
    }

    /// Checks every setting, naming the first offending key.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.task.validate().map_err(|e| invalid("task", e.to_string()))?;
        self.model().validate().map_err(|e| invalid("model", e.to_string()))?;
        if self.epochs == 0 {
            return Err(invalid("train.epochs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(invalid("train.batch_size", "must be >= 1"));
        }
        self.optim.validate().map_err(|e| invalid("train", e.to_string()))?;
        if !(0.0..=1.0).contains(&self.v_final) {
            return Err(invalid("schedule.v_final", format!("{} outside [0, 1]", self.v_final)));
        }
        if self.delta_t == 0 {
            return Err(invalid("schedule.delta_t", "must be >= 1"));
        }
        let t = self.total_steps();
        if self.t_i >= self.t_f {
            return Err(invalid(
                "schedule.t_i",
                format!("t_i = {} must be below t_f = {}", self.t_i, self.t_f),
            ));
        }
        if self.t_f > t {
            return Err(invalid(
                "schedule.t_f",
                format!("t_f = {} exceeds the {t} training steps", self.t_f),
            ));
        }
        self.schedule()
            .validate()
            .map_err(|e| invalid("schedule", e.to_string()))?;
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(invalid("mgp.lambda", format!("{} outside (0, 1)", self.lambda)));
        }
        for (key, v) in [("mgp.sigma0_sq", self.sigma0_sq), ("mgp.sigma1_sq", self.sigma1_sq)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(key, format!("{v} must be positive")));
            }
        }
        self.mgp()?;
        if !(self.l2_weight_decay >= 0.0 && self.l2_weight_decay.is_finite()) {
            return Err(invalid("l2.weight_decay", "must be non-negative"));
        }
        if self.method == Method::Pa {
            for (key, v) in [
                ("pa.sigma0_init_sq", self.pa_sigma0_init_sq),
                ("pa.sigma0_end_sq", self.pa_sigma0_end_sq),
                ("pa.tau0", self.pa_tau0),
            ] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(invalid(key, format!("{v} must be positive")));
                }
            }
            if self.pa_sigma0_init_sq < self.pa_sigma0_end_sq {
                return Err(invalid("pa.sigma0_end_sq", "must not exceed pa.sigma0_init_sq"));
            }
            if self.pa_sigma0_init_sq >= self.sigma1_sq {
                return Err(invalid("pa.sigma0_init_sq", "must be below mgp.sigma1_sq"));
            }
            let pa = self.pa_config()?;
            pa.schedule.validate().map_err(|e| invalid("pa", e.to_string()))?;
            pa.prior
                .with_sigma0_sq(self.pa_sigma0_end_sq)
                .and_then(|p| p.pa_threshold())
                .map_err(|e| invalid("pa.sigma0_end_sq", e.to_string()))?;
        }
        Ok(())
    }
}

/// Reads and validates a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    load_config_with(path, None)
}

pub fn load_config_with(path: &Path, preset_override: Option<&str>) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    ExperimentConfig::from_text(&text, preset_override)
}
