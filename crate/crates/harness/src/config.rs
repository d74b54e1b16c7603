use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vsod_core::encoder::EncoderConfig;
use vsod_core::{FusionMode, ModelConfig};

use crate::error::{HarnessError, Result};

/// Flat training configuration. Every field has a default; unknown keys in a
/// config file are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub input_size: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub fusion_mode: FusionMode,
    pub base_channels: usize,
    pub width_multipliers: [usize; 5],
    pub blocks_per_stage: [usize; 5],
    /// Stop gate-loss gradients at the gate inputs.
    pub detach_aux: bool,
    /// Include the summed gate losses in the objective.
    pub gate_loss: bool,
    /// Random flip and rescale of training samples.
    pub augment: bool,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_interval: usize,
    pub train_data: Option<PathBuf>,
    pub eval_data: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let enc = EncoderConfig::default();
        TrainConfig {
            learning_rate: 1e-5,
            batch_size: 4,
            input_size: 64,
            max_steps: 2000,
            seed: 0,
            fusion_mode: FusionMode::CagDde,
            base_channels: enc.base_channels,
            width_multipliers: enc.width_multipliers,
            blocks_per_stage: enc.blocks_per_stage,
            detach_aux: false,
            gate_loss: true,
            augment: true,
            checkpoint_interval: 0,
            train_data: None,
            eval_data: None,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            base_channels: self.base_channels,
            width_multipliers: self.width_multipliers,
            blocks_per_stage: self.blocks_per_stage,
        }
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            encoder: self.encoder(),
            fusion_mode: self.fusion_mode,
            detach_aux: self.detach_aux,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if self.input_size == 0 || self.input_size % 32 != 0 {
            return bad(format!("input_size {} is not a positive multiple of 32", self.input_size));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        self.encoder().validate()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = TrainConfig::default();
        assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    }

    #[test]
    fn partial_file_fills_defaults() {
        let cfg = TrainConfig::from_toml("learning_rate = 1e-4\nfusion_mode = \"cat\"\n").unwrap();
        assert_eq!(cfg.learning_rate, 1e-4);
        assert_eq!(cfg.fusion_mode, FusionMode::Concat);
        assert_eq!(cfg.batch_size, 4);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(TrainConfig::from_toml("lr = 1").is_err());
        assert!(TrainConfig::from_toml("input_size = 50").is_err());
        assert!(TrainConfig::from_toml("batch_size = 0").is_err());
        assert!(TrainConfig::from_toml("learning_rate = -1.0").is_err());
        assert!(TrainConfig::from_toml("fusion_mode = \"sum\"").is_err());
    }
}
