use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Spatial reduction from the input crop to the heatmaps.
pub const HEATMAP_STRIDE: usize = 4;
/// Total reduction of the regression encoder; the input size must be a multiple.
pub const INPUT_MULTIPLE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub heatmap: f64,
    pub offset: f64,
    pub regression: f64,
    pub visibility: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            heatmap: 1.0,
            offset: 1.0,
            regression: 10.0,
            visibility: 0.5,
        }
    }
}

impl LossWeights {
    /// Regression and visibility terms only.
    pub fn regression_only(self) -> Self {
        Self {
            heatmap: 0.0,
            offset: 0.0,
            ..self
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkConfig {
    pub input_size: usize,
    pub num_keypoints: usize,
    pub base_channels: usize,
    pub heatmap_size: usize,
    /// Standard deviation of the target Gaussians, in heatmap cells.
    pub heatmap_sigma: f64,
    pub loss_weights: LossWeights,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::full_toy()
    }
}

impl NetworkConfig {
    pub fn full_toy() -> Self {
        Self {
            input_size: 64,
            num_keypoints: crate::topology::NUM_KEYPOINTS,
            base_channels: 16,
            heatmap_size: 64 / HEATMAP_STRIDE,
            heatmap_sigma: 2.0,
            loss_weights: LossWeights::default(),
        }
    }

    pub fn lite_toy() -> Self {
        Self {
            base_channels: 8,
            ..Self::full_toy()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "full-toy" | "full" => Ok(Self::full_toy()),
            "lite-toy" | "lite" => Ok(Self::lite_toy()),
            other => Err(Error::InvalidConfig(format!(
                "unknown preset {other:?} (expected full-toy or lite-toy)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.input_size == 0 || !self.input_size.is_multiple_of(INPUT_MULTIPLE) {
            return fail(format!(
                "input_size {} must be a positive multiple of {INPUT_MULTIPLE}",
                self.input_size
            ));
        }
        if self.heatmap_size * HEATMAP_STRIDE != self.input_size {
            return fail(format!(
                "heatmap_size {} must equal input_size / {HEATMAP_STRIDE}",
                self.heatmap_size
            ));
        }
        if self.num_keypoints == 0 {
            return fail("num_keypoints must be at least 1".into());
        }
        if self.base_channels == 0 {
            return fail("base_channels must be at least 1".into());
        }
        if !(self.heatmap_sigma > 0.0) {
            return fail(format!("heatmap_sigma must be positive, got {}", self.heatmap_sigma));
        }
        let w = self.loss_weights;
        if [w.heatmap, w.offset, w.regression, w.visibility]
            .iter()
            .any(|v| !(*v >= 0.0) || !v.is_finite())
        {
            return fail(format!("loss weights must be finite and non-negative: {w:?}"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        NetworkConfig::full_toy().validate().unwrap();
        NetworkConfig::lite_toy().validate().unwrap();
        assert!(NetworkConfig::preset("huge").is_err());
    }

    #[test]
    fn rejects_bad_sizes() {
        let bad = NetworkConfig {
            input_size: 48,
            heatmap_size: 12,
            ..NetworkConfig::full_toy()
        };
        assert!(bad.validate().is_err());
        let bad = NetworkConfig {
            heatmap_size: 32,
            ..NetworkConfig::full_toy()
        };
        assert!(bad.validate().is_err());
        let mut bad = NetworkConfig::full_toy();
        bad.loss_weights.offset = -1.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn json_rejects_unknown_keys() {
        let ok: NetworkConfig = serde_json::from_str(r#"{"base_channels": 8}"#).unwrap();
        assert_eq!(ok, NetworkConfig::lite_toy());
        assert!(serde_json::from_str::<NetworkConfig>(r#"{"channels": 8}"#).is_err());
    }
}
