//! Experiment configuration file.

use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use uavlab::augment::InflationConfig;
use uavlab::dsp::{derive_seed, DEFAULT_SNR_DB};
use uavlab::models::{CnnConfig, ModelConfig};
use uavlab::peft::AdapterConfig;
use uavlab::trainkit::{SplitSpec, TrainConfig};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

/// Independent seed streams derived from the top-level seed.
#[derive(Clone, Copy, Debug)]
pub enum Stream {
    Model = 1,
    Split = 2,
    Training = 3,
    Adapter = 4,
    Augmentation = 5,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default = "default_model")]
    pub model: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adapter: Option<AdapterConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augmentation: Option<InflationConfig>,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub kfold: KfoldConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

fn default_name() -> String {
    "run".into()
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_model() -> ModelConfig {
    ModelConfig::Cnn(CnnConfig::default())
}

/// A directory in the `<class>_<name>/<id>.wav` layout, or synthetic data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub n_per_class: usize,
    pub synth_seed: u64,
    pub snr_db: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            path: None,
            n_per_class: 100,
            synth_seed: 0,
            snr_db: DEFAULT_SNR_DB,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KfoldConfig {
    pub k: usize,
}

impl Default for KfoldConfig {
    fn default() -> Self {
        Self { k: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Strategy {
    Grid,
    Random { n: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    /// Dotted config path to the values it takes, e.g. `"training.lr" = [1e-3, 1e-4]`.
    pub axes: IndexMap<String, Vec<toml::Value>>,
}

fn default_strategy() -> Strategy {
    Strategy::Grid
}

impl SweepConfig {
    pub fn grid_size(&self) -> usize {
        self.axes.values().map(Vec::len).product()
    }
}

fn schema_error(e: impl std::fmt::Display) -> CliError {
    CliError::Config(e.to_string())
}

impl ExperimentConfig {
    /// Parses and validates; unknown keys are reported with their full path.
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let de = toml::Deserializer::new(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Config(format!("at `{path}`: {}", e.into_inner().message()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(&self.to_value()?).map_err(schema_error)
    }

    pub fn to_value(&self) -> CliResult<toml::Value> {
        toml::Value::try_from(self).map_err(schema_error)
    }

    fn from_value(v: toml::Value) -> CliResult<Self> {
        let text = toml::to_string(&v).map_err(schema_error)?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if i64::try_from(self.seed).is_err() || i64::try_from(self.dataset.synth_seed).is_err() {
            return Err(CliError::Config("seeds must be below 2^63".into()));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(CliError::Config(format!("name {:?} must be a plain directory name", self.name)));
        }
        if self.dataset.n_per_class == 0 || !self.dataset.snr_db.is_finite() {
            return Err(CliError::Config(
                "dataset.n_per_class must be at least 1 and dataset.snr_db finite".into(),
            ));
        }
        if self.training.augmentation.is_some() {
            return Err(CliError::Config(
                "set augmentation in the top-level [augmentation] table, not under [training]".into(),
            ));
        }
        if self.kfold.k < 2 {
            return Err(CliError::Config(format!("kfold.k must be at least 2, got {}", self.kfold.k)));
        }
        self.split.validate()?;
        self.model.validate()?;
        self.training.validate()?;
        if let Some(a) = &self.augmentation {
            a.validate()?;
        }
        if let Some(a) = &self.adapter {
            a.validate()?;
            if a.method.is_adapter() && matches!(self.model, ModelConfig::Cnn(_)) {
                return Err(CliError::Config(format!(
                    "adapter method {} needs model.kind = \"ast\"",
                    a.method.name()
                )));
            }
        }
        if let Some(s) = &self.sweep {
            self.validate_sweep(s)?;
        }
        Ok(())
    }

    fn validate_sweep(&self, s: &SweepConfig) -> CliResult<()> {
        if s.axes.is_empty() || s.axes.values().any(Vec::is_empty) {
            return Err(CliError::Config("sweep needs at least one axis, each with values".into()));
        }
        if let Strategy::Random { n, .. } = s.strategy {
            if n == 0 || n > s.grid_size() {
                return Err(CliError::Config(format!(
                    "random sweep of {n} runs over a grid of {}",
                    s.grid_size()
                )));
            }
        }
        let base = self.to_value()?;
        for path in s.axes.keys() {
            if path.starts_with("sweep") {
                return Err(CliError::Config(format!("sweep axis `{path}` cannot target the sweep itself")));
            }
            lookup(&base, path).ok_or_else(|| CliError::Config(format!("sweep axis `{path}` is not a config key")))?;
        }
        Ok(())
    }

    /// This config with the given `(path, value)` overrides, re-validated.
    pub fn with_overrides(&self, overrides: &[(String, toml::Value)]) -> CliResult<Self> {
        let mut v = self.to_value()?;
        if let Some(t) = v.as_table_mut() {
            t.remove("sweep");
        }
        for (path, value) in overrides {
            let slot = lookup_mut(&mut v, path)
                .ok_or_else(|| CliError::Config(format!("sweep axis `{path}` is not a config key")))?;
            *slot = value.clone();
        }
        Self::from_value(v)
    }

    pub fn stream_seed(&self, stream: Stream, section_seed: u64) -> u64 {
        derive_seed(derive_seed(self.seed, stream as u64), section_seed)
    }

    /// Training settings with the derived seed and the augmentation section folded in.
    pub fn resolved_training(&self) -> TrainConfig {
        TrainConfig {
            seed: self.stream_seed(Stream::Training, self.training.seed),
            augmentation: self.augmentation.clone(),
            ..self.training.clone()
        }
    }

    pub fn resolved_split(&self) -> SplitSpec {
        SplitSpec {
            seed: self.stream_seed(Stream::Split, self.split.seed),
            ..self.split.clone()
        }
    }
}

fn lookup<'a>(v: &'a toml::Value, path: &str) -> Option<&'a toml::Value> {
    path.split('.').try_fold(v, |cur, key| cur.as_table()?.get(key))
}

fn lookup_mut<'a>(v: &'a mut toml::Value, path: &str) -> Option<&'a mut toml::Value> {
    path.split('.').try_fold(v, |cur, key| cur.as_table_mut()?.get_mut(key))
}

/// Compact rendering of a swept value for tables and file names.
pub fn render_value(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}
