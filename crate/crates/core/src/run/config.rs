use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::optim::OptimConfig;
use crate::param::{InitScheme, InitSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Copy,
    /// Sequential MNIST, pixel by pixel.
    Smnist,
    /// Sequential MNIST under one fixed pixel permutation.
    Pmnist,
    Charlm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Asrnn,
    Rnn,
    Lstm,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "asrnn" => Ok(Self::Asrnn),
            "rnn" => Ok(Self::Rnn),
            "lstm" => Ok(Self::Lstm),
            _ => Err(Error::Config {
                location: "model".into(),
                message: format!("unknown model {s:?}"),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F64,
    F32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub task: TaskKind,
    pub model: ModelKind,
    #[serde(default)]
    pub seed: u64,
    /// Optimizer steps. Takes precedence over `epochs`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<u64>,
    #[serde(default = "default_log_interval")]
    pub log_interval: u64,
    #[serde(default = "default_precision")]
    pub precision: Precision,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Write a checkpoint every this many iterations (always at the end).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_interval: Option<u64>,
    /// Halt after this iteration as if interrupted; resume continues the run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_after: Option<u64>,
    /// Halt once a logged evaluation loss drops below this value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_below_eval_loss: Option<f64>,
    /// Time steps whose hidden-state gradient norm is traced every iteration.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace_steps: Vec<usize>,
}

fn default_log_interval() -> u64 {
    50
}

fn default_precision() -> Precision {
    Precision::F64
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub d_h: usize,
}

/// RMSProp settings under the usual hyperparameter names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimSection {
    pub lr: f64,
    /// Learning rate of the orthogonal generators.
    pub lr_whh: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_norm: Option<f64>,
    #[serde(default = "default_eps_den")]
    pub eps_den: f64,
}

fn default_alpha() -> f64 {
    0.9
}

fn default_eps_den() -> f64 {
    1e-8
}

impl OptimSection {
    pub fn to_optim(&self) -> OptimConfig {
        OptimConfig {
            lr_main: self.lr,
            lr_recurrent: self.lr_whh,
            alpha: self.alpha,
            clip_norm: self.clip_norm,
            eps_den: self.eps_den,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    #[serde(default = "default_scheme")]
    pub scheme: InitScheme,
    #[serde(default)]
    pub a: f64,
    #[serde(default)]
    pub b: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_scheme() -> InitScheme {
    InitScheme::Henaff
}

fn default_epsilon() -> f64 {
    2e-5
}

impl Default for InitSection {
    fn default() -> Self {
        Self {
            scheme: default_scheme(),
            a: 0.0,
            b: 0.0,
            epsilon: default_epsilon(),
        }
    }
}

impl InitSection {
    pub fn to_spec(&self, rng_seed: u64) -> InitSpec {
        InitSpec {
            scheme: self.scheme,
            a: self.a,
            b: self.b,
            epsilon: self.epsilon,
            rng_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSection {
    #[serde(default = "default_batch")]
    pub batch: usize,
    /// Copy task: recall length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Copy task: delay length.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    /// Character task: truncated-BPTT window.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tbptt_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    #[serde(default = "default_train_frac")]
    pub train_frac: f64,
    #[serde(default = "default_valid_frac")]
    pub valid_frac: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_labels: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_labels: Option<PathBuf>,
    /// Evaluation size in batches (windows for the character task).
    #[serde(default = "default_eval_batches")]
    pub eval_batches: usize,
}

fn default_batch() -> usize {
    128
}

fn default_train_frac() -> f64 {
    0.9
}

fn default_valid_frac() -> f64 {
    0.05
}

fn default_eval_batches() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub model: ModelSection,
    pub optim: OptimSection,
    #[serde(default)]
    pub init: InitSection,
    pub task: TaskSection,
}

fn config_error(location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Config {
        location: location.into(),
        message: message.into(),
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Sets `key` (dotted path, e.g. `optim.lr`) in a TOML table. The value is
/// read as a TOML literal, falling back to a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_error("--set", format!("expected key=value, got {assignment:?}")))?;
    let (key, raw) = (key.trim(), raw.trim());
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key just parsed"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts
        .pop()
        .filter(|s| !s.is_empty())
        .ok_or_else(|| config_error("--set", "empty key"))?;
    let mut node = table;
    for p in parts {
        node = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| config_error(format!("--set {key}"), format!("{p} is not a section")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Parses TOML text with optional `key=value` overrides applied on top.
    pub fn parse(text: &str, origin: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            let loc = match e.span() {
                Some(span) => format!("{origin}:{}", line_of(text, span.start)),
                None => origin.to_string(),
            };
            config_error(loc, e.message().to_string())
        })?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig =
            toml::Value::Table(table)
                .try_into()
                .map_err(|e: toml::de::Error| {
                    // the table has no spans; the raw text usually fails at the same key
                    let line = toml::from_str::<RunConfig>(text)
                        .err()
                        .and_then(|raw| raw.span())
                        .map(|span| line_of(text, span.start));
                    let loc = match line {
                        Some(l) => format!("{origin}:{l}"),
                        None => origin.to_string(),
                    };
                    config_error(loc, e.message().to_string())
                })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string(), overrides)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable in TOML")
    }

    /// Checks counts and task parameters. Paths are checked when the run starts.
    pub fn validate(&self) -> Result<()> {
        let positive = |v: u64, loc: &str| {
            if v == 0 {
                Err(config_error(loc, "must be positive"))
            } else {
                Ok(())
            }
        };
        if self.run.iterations.is_none() && self.run.epochs.is_none() {
            return Err(config_error("run", "set iterations or epochs"));
        }
        if let Some(n) = self.run.iterations {
            positive(n, "run.iterations")?;
        }
        if let Some(n) = self.run.epochs {
            positive(n, "run.epochs")?;
        }
        positive(self.run.log_interval, "run.log_interval")?;
        if let Some(n) = self.run.checkpoint_interval {
            positive(n, "run.checkpoint_interval")?;
        }
        positive(self.model.d_h as u64, "model.d_h")?;
        positive(self.task.batch as u64, "task.batch")?;
        positive(self.task.eval_batches as u64, "task.eval_batches")?;
        self.optim.to_optim().validate()?;
        self.init
            .to_spec(0)
            .validate()
            .map_err(|e| config_error("init", e.to_string()))?;
        match self.run.task {
            TaskKind::Copy => {
                if self.task.k.unwrap_or(0) == 0 {
                    return Err(config_error("task.k", "copy task needs k >= 1"));
                }
                if self.task.l.is_none() {
                    return Err(config_error("task.l", "copy task needs a delay length"));
                }
                if self.run.iterations.is_none() {
                    return Err(config_error(
                        "run.iterations",
                        "copy task is sized in iterations",
                    ));
                }
            }
            TaskKind::Smnist | TaskKind::Pmnist => {
                for (name, p) in [
                    ("task.train_images", &self.task.train_images),
                    ("task.train_labels", &self.task.train_labels),
                    ("task.test_images", &self.task.test_images),
                    ("task.test_labels", &self.task.test_labels),
                ] {
                    if p.is_none() {
                        return Err(config_error(name, "required for MNIST tasks"));
                    }
                }
            }
            TaskKind::Charlm => {
                if self.task.corpus.is_none() {
                    return Err(config_error(
                        "task.corpus",
                        "required for the character task",
                    ));
                }
                if self.task.tbptt_len.unwrap_or(0) == 0 {
                    return Err(config_error("task.tbptt_len", "must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Fails if a data path named by the config does not exist.
    pub fn check_paths(&self) -> Result<()> {
        let t = &self.task;
        for (name, p) in [
            ("task.corpus", &t.corpus),
            ("task.train_images", &t.train_images),
            ("task.train_labels", &t.train_labels),
            ("task.test_images", &t.test_images),
            ("task.test_labels", &t.test_labels),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(config_error(
                        name,
                        format!("{} does not exist", p.display()),
                    ));
                }
            }
        }
        Ok(())
    }
}
