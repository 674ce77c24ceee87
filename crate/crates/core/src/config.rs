//! Declarative run configuration (TOML) with dotted-key overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::SyntheticConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::evaluation::MatchMode;
use crate::model::Thresholds;
use crate::training::TrainConfig;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub schema: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub out_dir: PathBuf,
    /// Train/dev/test fractions.
    pub split: [f64; 3],
    pub corpus: SyntheticConfig,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            out_dir: PathBuf::from("data"),
            split: [0.8, 0.1, 0.1],
            corpus: SyntheticConfig::default(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub mode: MatchMode,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalyzeConfig {
    /// Corpus to analyze; defaults to `data.train`.
    pub corpus: Option<PathBuf>,
    /// Training log whose gating statistics are summarized.
    pub training_log: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub root: PathBuf,
    /// Fixed run directory; when absent a `{timestamp}-seed{seed}`
    /// directory is created under `root`.
    pub run_dir: Option<PathBuf>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            root: PathBuf::from("runs"),
            run_dir: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub precision: Precision,
    pub deterministic: bool,
    pub data: DataPaths,
    pub generate: GenerateConfig,
    pub model: EncoderConfig,
    pub train: TrainConfig,
    pub decode: Thresholds,
    pub eval: EvalConfig,
    pub analyze: AnalyzeConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            precision: Precision::default(),
            deterministic: false,
            data: DataPaths::default(),
            generate: GenerateConfig::default(),
            model: EncoderConfig::default(),
            train: TrainConfig::default(),
            decode: Thresholds::default(),
            eval: EvalConfig::default(),
            analyze: AnalyzeConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

fn parse_override(raw: &str) -> Result<(Vec<String>, toml::Value)> {
    let (key, value) = raw
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{raw}` is not key=value")))?;
    let key: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if key.iter().any(String::is_empty) {
        return Err(Error::Config(format!("override `{raw}` has an empty key segment")));
    }
    let value = value.trim();
    // Anything that does not parse as a TOML value is taken as a bare string.
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((key, parsed))
}

fn apply_override(root: &mut toml::Table, key: &[String], value: toml::Value) -> Result<()> {
    let (last, parents) = key.split_last().expect("non-empty key");
    let mut table = root;
    for k in parents {
        let entry = table
            .entry(k.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{k}` is not a table")))?;
    }
    table.insert(last.clone(), value);
    Ok(())
}

impl RunConfig {
    /// Parses TOML text and applies `key=value` overrides on top.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for raw in overrides {
            let (key, value) = parse_override(raw)?;
            apply_override(&mut table, &key, value)?;
        }
        let mut cfg: RunConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.train.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` (or defaults when `None`) and applies overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let text = match path {
            Some(p) => fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        Self::from_toml(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.decode.validate()?;
        let sum: f64 = self.generate.split.iter().sum();
        if self.generate.split.iter().any(|&f| f < 0.0) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config("generate.split must be non-negative and sum to 1".into()));
        }
        Ok(())
    }

    /// Configuration echo written into every artifact. Output locations are
    /// left out so that reruns into different directories stay identical.
    pub fn echo(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("output");
        }
        v
    }

    pub fn require<'a>(&self, path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
        path.as_deref()
            .ok_or_else(|| Error::Config(format!("`{key}` is not set")))
    }
}
