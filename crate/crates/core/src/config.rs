//! Run configuration shared by every CLI stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::ConsistencyConfig;
use crate::data::{DatasetSplit, SchemaConfig, SyntheticSpec};
use crate::dlrm::ModelConfig;
use crate::error::{Error, Result};
use crate::sampling::SamplerConfig;
use crate::search::{Mode, SearchConfig};
use crate::supernet::{CandidateSet, Scheme, TrainConfig};

/// Bumped whenever a field is added, removed or changes meaning.
pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic { spec: SyntheticSpec },
    Csv { path: PathBuf, schema: SchemaConfig },
    /// A split written by `synth` or `prep`.
    Prepared { path: PathBuf },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic { spec: SyntheticSpec::oracle(100_000, 0) }
    }
}

impl DatasetSource {
    pub fn load(&self) -> Result<DatasetSplit> {
        match self {
            DatasetSource::Synthetic { spec } => crate::data::generate_synthetic(spec),
            DatasetSource::Csv { path, schema } => crate::data::load_csv(path, schema),
            DatasetSource::Prepared { path } => DatasetSplit::load(path),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    #[serde(default)]
    pub dataset: DatasetSource,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub candidates: CandidateSet,
    #[serde(default = "d_scheme")]
    pub scheme: Scheme,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default = "d_train")]
    pub supernet_train: TrainConfig,
    #[serde(default = "d_train")]
    pub retrain: TrainConfig,
    /// When set, overrides `search.lambda_r` / `search.lambda_c` with the preset.
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub search: SearchConfig,
    #[serde(default)]
    pub consistency: ConsistencyConfig,
    #[serde(default = "d_runs")]
    pub stability_runs: usize,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; `None` uses every core.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default = "d_out")]
    pub out: PathBuf,
}

fn d_scheme() -> Scheme {
    Scheme::Independent
}
fn d_train() -> TrainConfig {
    TrainConfig { epochs: 5, ..TrainConfig::default() }
}
fn d_runs() -> usize {
    10
}
fn d_out() -> PathBuf {
    PathBuf::from("runs/default")
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            version: CONFIG_VERSION,
            dataset: DatasetSource::default(),
            model: ModelConfig::default(),
            candidates: CandidateSet::default(),
            scheme: d_scheme(),
            sampler: SamplerConfig::default(),
            supernet_train: d_train(),
            retrain: d_train(),
            mode: None,
            search: SearchConfig::default(),
            consistency: ConsistencyConfig::default(),
            stability_runs: d_runs(),
            seed: 0,
            workers: None,
            out: d_out(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("version").and_then(|v| v.as_u64()) {
            Some(v) if v == CONFIG_VERSION as u64 => {}
            Some(v) => return Err(Error::config(format!("config version {v} is not supported (expected {CONFIG_VERSION})"))),
            None => return Err(Error::config("config lacks a \"version\" field")),
        }
        let cfg: Self = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    /// Applies `mode` to the search penalty weights.
    pub fn resolve(mut self) -> Result<Self> {
        if let Some(mode) = self.mode {
            let p = mode.penalty();
            self.search.lambda_r = p.lambda_r;
            self.search.lambda_c = p.lambda_c;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::config(format!("config version {} is not supported", self.version)));
        }
        if let DatasetSource::Synthetic { spec } = &self.dataset {
            spec.validate(false)?;
        }
        self.model.validate()?;
        self.sampler.validate(self.candidates.len())?;
        self.search.validate()?;
        if self.consistency.k < 2 {
            return Err(Error::config("consistency.k must be at least 2"));
        }
        if self.stability_runs == 0 {
            return Err(Error::config("stability_runs must be positive"));
        }
        if self.workers == Some(0) {
            return Err(Error::config("workers must be positive"));
        }
        Ok(())
    }
}
