use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use posetrack_core::eval::EvalConfig;
use posetrack_core::posenet::{NetworkConfig, TrainConfig};
use posetrack_core::synthdata::clip::ClipConfig;
use posetrack_core::synthdata::GenerationConfig;
use posetrack_core::tracker::TrackerConfig;
use serde::{Deserialize, Serialize};

/// Settings shared by every subcommand, read from `--config`. Command-line
/// flags take precedence over these values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub generation: GenerationConfig,
    pub clip: ClipConfig,
    pub tracker: TrackerConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let config: Self = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        config.network.validate()?;
        config.train.validate()?;
        config.tracker.validate()?;
        config.eval.validate()?;
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unknown_keys() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"seed": 3, "colour": 1}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"train": {"epoch": 3}}"#).is_err());
        let c: RunConfig = serde_json::from_str(r#"{"seed": 3, "train": {"epochs": 2}}"#).unwrap();
        assert_eq!(c.seed, Some(3));
        assert_eq!(c.train.epochs, 2);
        assert_eq!(c.network, NetworkConfig::default());
    }
}
