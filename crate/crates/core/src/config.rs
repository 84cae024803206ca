//! Run configuration file: one TOML document with optional `scene`,
//! `train`, `associate` and `evaluate` tables. Unknown keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::association::AssociationParams;
use crate::error::{Error, Result};
use crate::pretext::TrainConfig;
use crate::sim::SceneConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AssociateConfig {
    #[serde(flatten)]
    pub params: AssociationParams,
    /// Use appearance vectors when the dataset carries them.
    pub appearance: bool,
    /// Associate only the held-out tail of this fraction; all frames when 0.
    pub holdout: f64,
}

impl Default for AssociateConfig {
    fn default() -> Self {
        AssociateConfig {
            params: AssociationParams::default(),
            appearance: true,
            holdout: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluateConfig {
    /// Threshold spacing of the precision/recall table.
    pub plot_step: f64,
}

impl Default for EvaluateConfig {
    fn default() -> Self {
        EvaluateConfig { plot_step: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub scene: SceneConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub associate: AssociateConfig,
    #[serde(default)]
    pub evaluate: EvaluateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: SCHEMA_VERSION,
            seed: None,
            scene: SceneConfig::default(),
            train: TrainConfig::default(),
            associate: AssociateConfig::default(),
            evaluate: EvaluateConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                cfg.schema_version
            )));
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Checks every table, whichever subcommand will use it.
    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.train.validate()?;
        self.associate.params.validate()?;
        if !(0.0..1.0).contains(&self.associate.holdout) {
            return Err(Error::Config(format!(
                "associate.holdout must lie in [0,1), got {}",
                self.associate.holdout
            )));
        }
        if !(self.evaluate.plot_step > 0.0 && self.evaluate.plot_step <= 1.0) {
            return Err(Error::Config(format!(
                "evaluate.plot_step must lie in (0,1], got {}",
                self.evaluate.plot_step
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = RunConfig::from_toml("schema_version = 1\n").unwrap();
        assert_eq!(cfg, RunConfig::default());
        cfg.validate().unwrap();
    }

    #[test]
    fn round_trip_through_toml() {
        let mut cfg = RunConfig {
            seed: Some(11),
            ..RunConfig::default()
        };
        cfg.train.epochs = 7;
        cfg.associate.params.threshold = 0.25;
        let back = RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_and_versions_are_rejected() {
        for text in [
            "schema_version = 1\nsede = 3\n",
            "schema_version = 1\n[train]\nmargn = 1.0\n",
            "schema_version = 1\n[associate]\nthreshhold = 0.4\n",
            "schema_version = 2\n",
            "seed = 1\n",
        ] {
            assert!(matches!(RunConfig::from_toml(text), Err(Error::Config(_))), "{text}");
        }
    }

    #[test]
    fn invalid_values_fail_validation() {
        let cfg = RunConfig::from_toml("schema_version = 1\n[associate]\nthreshold = 1.5\n").unwrap();
        assert!(cfg.validate().is_err());
        let cfg = RunConfig::from_toml("schema_version = 1\n[scene]\ncameras = 1\n").unwrap();
        assert!(cfg.validate().is_err());
    }
}
