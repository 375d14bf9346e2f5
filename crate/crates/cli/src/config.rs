use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use procache::pattern::{ConstraintSet, SearchConfig};
use procache::schedule::SelectiveConfig;
use procache::tinydit::{EngineOptions, ModelConfig};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// One reproducible experiment. Serialized as JSON with `"schema": 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    /// Free text, e.g. how a preset was scaled down.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
    pub model: ModelConfig,
    pub constraints: ConstraintSet,
    pub search: SearchConfig,
    pub selective: SelectiveConfig,
    #[serde(default)]
    pub engine: EngineOptions,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub capture_snapshots: bool,
}

const PRESETS: &[(&str, &str)] = &[
    ("dit-xl2-like", include_str!("../../../configs/dit-xl2-like.json")),
    ("pixart-like", include_str!("../../../configs/pixart-like.json")),
    ("golden", include_str!("../../../configs/golden.json")),
];

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn preset(name: &str) -> Result<Self, CliError> {
        let (_, text) = PRESETS.iter().find(|(n, _)| *n == name).ok_or_else(|| {
            let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
            CliError::config(format!("unknown preset {name:?}; known: {}", names.join(", ")))
        })?;
        Self::from_json(text)
    }

    pub fn preset_names() -> impl Iterator<Item = &'static str> {
        PRESETS.iter().map(|(n, _)| *n)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.schema != SCHEMA_VERSION {
            return Err(CliError::config(format!(
                "unsupported schema {} (expected {SCHEMA_VERSION})",
                self.schema
            )));
        }
        self.model.validate()?;
        self.constraints.validate()?;
        self.search.validate()?;
        self.selective.validate()?;
        if self.constraints.steps != self.model.steps {
            return Err(CliError::config(format!(
                "constraints cover {} steps but the model runs {}",
                self.constraints.steps, self.model.steps
            )));
        }
        if self.selective.total_layers != self.model.layers {
            return Err(CliError::config(format!(
                "selective.total_layers is {} but the model has {} layers",
                self.selective.total_layers, self.model.layers
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_load() {
        for name in ExperimentConfig::preset_names() {
            let cfg = ExperimentConfig::preset(name).unwrap();
            assert_eq!(ExperimentConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        }
        assert!(ExperimentConfig::preset("sd3").is_err());
    }

    #[test]
    fn dit_preset_values() {
        let cfg = ExperimentConfig::preset("dit-xl2-like").unwrap();
        assert_eq!(cfg.constraints.budget, 17);
        assert_eq!((cfg.constraints.v_min, cfg.constraints.v_max), (2, 5));
        assert_eq!(cfg.selective.layer_ratio, 0.75);
        assert_eq!(cfg.selective.token_ratio, 0.07);
        assert_eq!(cfg.model.steps, 50);
    }

    #[test]
    fn cross_field_checks() {
        let mut cfg = ExperimentConfig::preset("pixart-like").unwrap();
        cfg.constraints.steps = 21;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::preset("pixart-like").unwrap();
        cfg.selective.total_layers = 4;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::preset("pixart-like").unwrap();
        cfg.schema = 2;
        assert!(cfg.validate().is_err());
        assert!(ExperimentConfig::from_json("{\"schema\": 1}").is_err());
    }
}
