//! The run configuration file and its command-line overrides.
//!
//! ```toml
//! seed = 0
//!
//! [data]
//! noaa = "noaa.csv"            # relative paths resolve against this file
//! epa = "epa.csv"
//! out_dir = "run"
//! train_fraction = 0.8
//! window = 730                 # days per sample
//! stride = 30                  # days between sample starts
//! targets = ["o3_ppm", "co_ppm"]
//!
//! [model]
//! hidden = 512
//! attention_dim = 64
//! dropout = 0.2
//! bn_eps = 1e-5
//! bn_momentum = 0.1
//!
//! [train]
//! epochs = 200
//! learning_rate = 0.001
//! batch_size = 8
//! beta1 = 0.9
//! beta2 = 0.999
//! epsilon = 1e-8
//!
//! [report]
//! repeats = 10                 # shuffles per feature for importance
//! ```
//!
//! Everything except `data.noaa`, `data.epa` and `data.targets` has the
//! default shown.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use aqf::ingest::{INPUT_COLUMNS, TARGET_COLUMNS};
use aqf::model::ModelConfig;
use aqf::preprocess::PrepConfig;
use aqf::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub report: ReportSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub noaa: PathBuf,
    pub epa: PathBuf,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_stride")]
    pub stride: usize,
    pub targets: Vec<String>,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("run")
}

fn default_train_fraction() -> f64 {
    0.8
}

fn default_window() -> usize {
    730
}

fn default_stride() -> usize {
    30
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden: usize,
    pub attention_dim: usize,
    pub dropout: f64,
    pub bn_eps: f64,
    pub bn_momentum: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            hidden: m.hidden,
            attention_dim: m.attention_dim,
            dropout: m.dropout,
            bn_eps: m.bn_eps,
            bn_momentum: m.bn_momentum,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    pub repeats: usize,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection {
            repeats: aqf::analysis::DEFAULT_REPEATS,
        }
    }
}

/// Command-line adjustments applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    /// Used as given, relative to the working directory.
    pub out: Option<PathBuf>,
    /// `section.key=value` pairs; values use TOML syntax, bare words are strings.
    pub set: Vec<String>,
}

fn set_key(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{assignment}` is not key=value")))?;
    let (key, raw) = (key.trim(), raw.trim());
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let leaf = parts.pop().filter(|k| !k.is_empty());
    let Some(leaf) = leaf else {
        return Err(CliError::Config(format!("override `{assignment}` has an empty key")));
    };
    let mut cur = table;
    for p in parts {
        cur = cur
            .entry(p)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("override key `{key}`: `{p}` is not a section")))?;
    }
    cur.insert(leaf.to_string(), value);
    Ok(())
}

impl RunConfig {
    /// Reads, overrides, resolves and validates a configuration file.
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        Self::from_toml(&text, base, overrides)
            .map_err(|e| match e {
                CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
                other => other,
            })
    }

    /// Parses `text`, resolving relative paths against `base`.
    pub fn from_toml(text: &str, base: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| CliError::Config(e.message().to_string()))?;
        for s in &overrides.set {
            set_key(&mut table, s)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
        for p in [&mut cfg.data.noaa, &mut cfg.data.epa, &mut cfg.data.out_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if let Some(seed) = overrides.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &overrides.out {
            cfg.data.out_dir = out.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        let d = &self.data;
        if d.targets.is_empty() {
            return bad("data.targets must list at least one pollutant".into());
        }
        let mut seen = BTreeSet::new();
        for t in &d.targets {
            if !TARGET_COLUMNS.contains(&t.as_str()) {
                return bad(format!(
                    "data.targets: `{t}` is not one of {}",
                    TARGET_COLUMNS.join(", ")
                ));
            }
            if !seen.insert(t) {
                return bad(format!("data.targets lists `{t}` twice"));
            }
        }
        if !(d.train_fraction > 0.0 && d.train_fraction < 1.0) {
            return bad(format!("data.train_fraction {} must lie in (0, 1)", d.train_fraction));
        }
        if d.window < 2 {
            return bad("data.window must be at least 2".into());
        }
        if d.stride == 0 {
            return bad("data.stride must be at least 1".into());
        }
        let t = &self.train;
        if !(t.learning_rate > 0.0 && t.learning_rate.is_finite()) {
            return bad(format!("train.learning_rate {} must be positive", t.learning_rate));
        }
        if self.report.repeats == 0 {
            return bad("report.repeats must be at least 1".into());
        }
        self.model_config()
            .validate()
            .map_err(|e| CliError::Config(format!("model: {e}")))?;
        self.train_config()
            .validate()
            .map_err(|e| CliError::Config(format!("train: {e}")))?;
        Ok(())
    }

    pub fn input_columns(&self) -> Vec<String> {
        INPUT_COLUMNS.iter().map(|c| c.to_string()).collect()
    }

    /// Inputs followed by targets: the columns the pipeline keeps.
    pub fn frame_columns(&self) -> Vec<&str> {
        INPUT_COLUMNS
            .iter()
            .copied()
            .chain(self.data.targets.iter().map(String::as_str))
            .collect()
    }

    pub fn prep_config(&self) -> PrepConfig {
        PrepConfig {
            train_fraction: self.data.train_fraction,
            window: self.data.window,
            stride: self.data.stride,
            input_columns: self.input_columns(),
            target_columns: self.data.targets.clone(),
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            inputs: INPUT_COLUMNS.len(),
            window: self.data.window,
            hidden: m.hidden,
            targets: self.data.targets.len(),
            attention_dim: m.attention_dim,
            dropout: m.dropout,
            bn_eps: m.bn_eps,
            bn_momentum: m.bn_momentum,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            epochs: t.epochs,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            seed: self.seed,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
        }
    }

    /// TOML text for a config that points at `noaa` and `epa`.
    pub fn template(noaa: &str, epa: &str, targets: &[&str]) -> String {
        let cfg = RunConfig {
            seed: 0,
            data: DataSection {
                noaa: noaa.into(),
                epa: epa.into(),
                out_dir: default_out_dir(),
                train_fraction: default_train_fraction(),
                window: default_window(),
                stride: default_stride(),
                targets: targets.iter().map(|t| t.to_string()).collect(),
            },
            model: ModelSection::default(),
            train: TrainSection::default(),
            report: ReportSection::default(),
        };
        toml::to_string(&cfg).expect("config serializes")
    }
}
