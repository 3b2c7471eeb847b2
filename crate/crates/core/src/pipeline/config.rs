use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bayes::BbbConfig;
use crate::data::{LoadOptions, SplitConfig, SynthConfig};
use crate::embeddings::MceConfig;
use crate::error::{Error, Result};
use crate::models::{ArchitectureSpec, ModelOptions};
use crate::training::TrainConfig;

/// Prefix of environment variables that override configuration keys.
/// Nested keys are joined with a double underscore, so
/// `READMIT_TRAIN__EPOCHS=40` sets `train.epochs`.
pub const ENV_PREFIX: &str = "READMIT_";

/// Cohort files on disk; without them the synthetic generator is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CohortPaths {
    pub stays: PathBuf,
    pub events: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_architectures() -> Vec<ArchitectureSpec> {
    ArchitectureSpec::ALL.to_vec()
}

fn default_top_k() -> usize {
    10
}

fn default_jobs() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_architectures")]
    pub architectures: Vec<ArchitectureSpec>,
    #[serde(default)]
    pub cohort: Option<CohortPaths>,
    #[serde(default)]
    pub synth: SynthConfig,
    #[serde(default)]
    pub load: LoadOptions,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub model: ModelOptions,
    #[serde(default)]
    pub mce: MceConfig,
    #[serde(default)]
    pub bayes: BbbConfig,
    /// Rows per stream in the code-score markdown tables.
    #[serde(default = "default_top_k")]
    pub top_k: usize,
    /// Concurrent benchmark trainings.
    #[serde(default = "default_jobs")]
    pub jobs: usize,
}

impl RunConfig {
    /// Parses TOML text, then applies `READMIT_*` overrides from `env`.
    pub fn from_toml_str<I>(text: &str, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        apply_env_overrides(&mut table, env)?;
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, applying overrides from the process environment.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, std::env::vars())
    }

    pub fn validate(&self) -> Result<()> {
        if self.architectures.is_empty() {
            return Err(Error::Config("at least one architecture is required".into()));
        }
        if self.jobs == 0 || self.top_k == 0 {
            return Err(Error::Config("jobs and top_k must be at least 1".into()));
        }
        self.synth.validate()?;
        self.train.validate()?;
        self.model.validate()?;
        self.bayes.validate()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Writes every `READMIT_A__B=value` pair into `table` at key path `a.b`.
/// Values are read as TOML literals and fall back to plain strings.
pub fn apply_env_overrides<I>(table: &mut toml::Table, env: I) -> Result<()>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut vars: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
    vars.sort();
    for (key, raw) in vars {
        let path: Vec<String> = key[ENV_PREFIX.len()..]
            .split("__")
            .map(|s| s.to_ascii_lowercase())
            .collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(Error::Config(format!("malformed override variable {key}")));
        }
        let (leaf, parents) = path.split_last().expect("non-empty path");
        let mut node = &mut *table;
        for p in parents {
            let entry = node
                .entry(p.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            node = entry
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("{key}: {p} is not a table")))?;
        }
        node.insert(leaf.clone(), parse_value(&raw));
    }
    Ok(())
}
