use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bfloss::losses::TrainLoss;
use bfloss::synthgen::{self, SynthConfig};
use bfloss::trainer::{Example, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Environment variable that overrides every output directory.
pub const OUT_DIR_ENV: &str = "BFLOSS_OUT_DIR";

/// Where training data comes from: a directory written by `gen`, or a
/// generator config evaluated in memory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub dir: Option<PathBuf>,
    pub synth: SynthConfig,
    pub train_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: None,
            synth: SynthConfig::default(),
            train_fraction: 0.75,
        }
    }
}

impl DataConfig {
    pub fn load(&self) -> Result<(Vec<Example>, Vec<Example>)> {
        let samples = match &self.dir {
            Some(dir) => synthgen::import(dir)
                .with_context(|| format!("reading dataset from {}", dir.display()))?,
            None => synthgen::generate(&self.synth)?,
        };
        let (train, val) = synthgen::split(&samples, self.train_fraction)?;
        if train.is_empty() || val.is_empty() {
            bail!(bfloss::Error::InvalidParam {
                name: "train_fraction",
                reason: format!(
                    "{} samples split at {} leave an empty side",
                    samples.len(),
                    self.train_fraction
                ),
            });
        }
        Ok((
            train.into_iter().map(Example::from).collect(),
            val.into_iter().map(Example::from).collect(),
        ))
    }
}

/// Config of `train` and `compare`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Not echoed, so runs in different directories echo identical configs.
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub data: DataConfig,
    pub train: TrainConfig,
    /// Losses trained by `compare`.
    pub losses: Vec<TrainLoss>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            out: None,
            data: DataConfig::default(),
            train: TrainConfig::default(),
            losses: TrainLoss::ALL.to_vec(),
        }
    }
}

/// `gen` config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub synth: SynthConfig,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            out: None,
            synth: SynthConfig::default(),
        }
    }
}

pub fn read_json<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).map_err(|e| ConfigError(format!("config {}: {e}", path.display())).into())
}

/// Invalid configuration that is not a library error.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

/// The output directory: the environment override, else the resolved value.
pub fn resolve_out(resolved: Option<PathBuf>) -> Result<PathBuf> {
    if let Some(dir) = std::env::var_os(OUT_DIR_ENV).filter(|v| !v.is_empty()) {
        return Ok(PathBuf::from(dir));
    }
    resolved.ok_or_else(|| ConfigError("no output directory: pass --out or set it in the config".into()).into())
}

/// Create `dir` and write `config.json` into it.
pub fn echo_config<T: Serialize>(dir: &Path, config: &T) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join("config.json");
    let mut text = serde_json::to_string_pretty(config)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}
