//! The run configuration file: one TOML document with `[model]`, `[train]`
//! and `[data]` sections. Unknown keys are rejected; every field has a
//! default, so an empty document is the reference small-molecule recipe.

use std::path::Path;

use serde::{Deserialize, Serialize};

use spectok::model::ModelConfig;
use spectok::training::TrainConfig;
use spectok::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Train/valid/test ratios; the split is seeded by `train.seed`.
    pub split: [f64; 3],
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            split: [0.8, 0.1, 0.1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)?;
        let config: RunConfig = toml::from_str(&raw)
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let total: f64 = self.data.split.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "data.split: ratios {:?} sum to {}, expected 1",
                self.data.split, total
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn from_json(value: serde_json::Value) -> Result<Self> {
        serde_json::from_value(value)
            .map_err(|e| Error::Checkpoint(format!("embedded config: {e}")))
    }
}
