use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::TrainConfig;
use crate::model::ModelConfig;
use crate::solver::SolveConfig;

/// Everything a training run needs. Relative paths are resolved against the
/// directory of the config file.
///
/// ```toml
/// seed = 0
/// out_dir = "runs/desk"
/// checkpoint_every = 500
///
/// [data]
/// dir = "data"
///
/// [train]
/// lr = 1e-4
/// iterations = 2000
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds model initialization; `[train] seed` seeds batch sampling.
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Write a checkpoint every K steps (0: only at the end).
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: u64,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub solve: SolveConfig,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Directory holding `manifest.tsv` as written by `gen-phantom`.
    pub dir: PathBuf,
}

fn default_checkpoint_every() -> u64 {
    500
}

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.out_dir = base.join(&cfg.out_dir);
        cfg.data.dir = base.join(&cfg.data.dir);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.solve.validate()
    }

    /// Fully resolved form, every default spelled out.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}
