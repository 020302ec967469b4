//! Run configuration file: JSON, unknown keys rejected, errors carry the key path.

use fastmatch::dataio::{load_cifar10_binary, make_ssl_split, Dataset, SslSplit, SynthSpec};
use fastmatch::engine::TrainConfig;
use fastmatch::scenarios::{FederatedConfig, StreamPlan};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    Cifar10,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub noise: f32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let s = SynthSpec::default();
        Self {
            seed: 0,
            n_train: 4000,
            n_test: 2000,
            classes: s.classes,
            height: s.height,
            width: s.width,
            noise: s.noise,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Directory of the CIFAR-10 binary batches.
    pub cifar_dir: Option<PathBuf>,
    pub synthetic: SynthConfig,
    pub n_labeled: usize,
    pub labeled_also_unlabeled: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            cifar_dir: None,
            synthetic: SynthConfig::default(),
            n_labeled: 40,
            labeled_also_unlabeled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Root seed of every random stream of the run.
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub federated: FederatedConfig,
    pub stream: StreamPlan,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("runs"),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            federated: FederatedConfig::default(),
            stream: StreamPlan::default(),
        }
    }
}

fn config_error(key: &str, message: impl Into<String>) -> CliError {
    CliError::Config {
        key: key.into(),
        message: message.into(),
    }
}

impl RunConfig {
    /// Parses JSON text; empty input gives the defaults.
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let text = if text.trim().is_empty() { "{}" } else { text };
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            config_error(&key, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Train settings with the root seed applied.
    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.train.clone();
        t.seed = self.seed;
        t
    }

    pub fn federated_config(&self) -> FederatedConfig {
        let mut f = self.federated.clone();
        f.seed = self.seed;
        f
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let prefixed = |prefix: &str, e: fastmatch::Error| match e {
            fastmatch::Error::Config { key, message } => config_error(&format!("{prefix}.{key}"), message),
            other => config_error(prefix, other.to_string()),
        };
        self.train.validate().map_err(|e| prefixed("train", e))?;
        self.federated.validate().map_err(|e| match e {
            fastmatch::Error::Config { key, message } => config_error(&key, message),
            other => config_error("federated", other.to_string()),
        })?;
        self.stream.validate().map_err(|e| match e {
            fastmatch::Error::Config { key, message } => config_error(&key, message),
            other => config_error("stream", other.to_string()),
        })?;
        let d = &self.data;
        if d.n_labeled == 0 {
            return Err(config_error("data.n_labeled", "must be at least 1"));
        }
        match d.source {
            DataSource::Cifar10 => {
                let Some(dir) = &d.cifar_dir else {
                    return Err(config_error("data.cifar_dir", "required for cifar10 data"));
                };
                if !dir.is_dir() {
                    return Err(config_error("data.cifar_dir", format!("{} is not a directory", dir.display())));
                }
            }
            DataSource::Synthetic => {
                let s = &d.synthetic;
                if s.classes == 0 || s.n_train < s.classes || s.n_test == 0 {
                    return Err(config_error("data.synthetic", "need n_train ≥ classes ≥ 1 and n_test ≥ 1"));
                }
                if s.height == 0 || s.width == 0 {
                    return Err(config_error("data.synthetic", "image sides must be positive"));
                }
            }
        }
        Ok(())
    }

    /// Loads (or generates) train and test sets and builds the split.
    pub fn load_data(&self) -> Result<(Dataset, Dataset, SslSplit), CliError> {
        let d = &self.data;
        let (train, test) = match d.source {
            DataSource::Synthetic => {
                let s = &d.synthetic;
                let spec = SynthSpec {
                    seed: s.seed,
                    classes: s.classes,
                    height: s.height,
                    width: s.width,
                    noise: s.noise,
                    max_shift: (s.height / 8).max(1),
                    ..SynthSpec::default()
                };
                spec.train_test(s.n_train, s.n_test)?
            }
            DataSource::Cifar10 => {
                let dir = d.cifar_dir.as_deref().unwrap_or(Path::new("."));
                (load_cifar10_binary(dir, true)?, load_cifar10_binary(dir, false)?)
            }
        };
        let split = make_ssl_split(&train, d.n_labeled, self.seed, d.labeled_also_unlabeled)?;
        Ok((train, test, split))
    }
}

pub fn parse_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| config_error("", format!("{}: {e}", path.display())))?;
    RunConfig::from_json(&text)
}
