//! Run configuration: every module's knobs in one JSON file.
//!
//! A config file names a base profile and overrides any subset of fields:
//!
//! ```json
//! { "profile": "desk", "batch_size": 16, "epochs": 5 }
//! ```
//!
//! The `desk` profile is sized so the full pipeline runs in minutes on one
//! CPU. The `paper` profile records the published full-scale hyperparameters
//! for reference; it is far too large to train here.

use std::path::Path;

use mulan_core::dsp::{SpecAugmentConfig, SpectrogramConfig};
use mulan_core::error::{Error, Result};
use mulan_core::loss::LossConfig;
use mulan_core::nn::OptimizerConfig;
use mulan_core::towers::config::{default_input_offset, default_input_scale};
use mulan_core::towers::{AudioTowerConfig, TextTowerConfig, TransformerConfig};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct RunConfig {
    pub profile: String,
    pub seed: u64,
    pub spectrogram: SpectrogramConfig,
    pub spec_augment: SpecAugmentConfig,
    pub audio_tower: AudioTowerConfig,
    pub text_tower: TextTowerConfig,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    /// SF:LF:PL:ASET mixing ratio.
    pub mixing_ratio: [u64; 4],
    pub batch_size: usize,
    pub epochs: usize,
    /// Tokenized sequence length n; must match the text tower.
    pub token_len: usize,
    pub checkpoint_every_epochs: usize,
}

impl RunConfig {
    pub fn desk() -> Self {
        let transformer = TransformerConfig {
            num_layers: 2,
            hidden_dim: 64,
            num_heads: 4,
            mlp_dim: 128,
            embed_dim: 32,
        };
        RunConfig {
            profile: "desk".to_string(),
            seed: 0,
            spectrogram: SpectrogramConfig {
                mel_channels: 32,
                window_ms: 25.0,
                hop_ms: 10.0,
                fft_size: 512,
                log_floor: 1e-6,
                mel_fmin_hz: 60.0,
                mel_fmax_hz: 7800.0,
            },
            spec_augment: SpecAugmentConfig {
                num_freq_masks: 2,
                max_freq_width: 4,
                num_time_masks: 2,
                max_time_width: 10,
                mask_value: (1e-6f64).ln(),
            },
            audio_tower: AudioTowerConfig {
                transformer: transformer.clone(),
                mel_channels: 32,
                window_frames: 100,
                patch_size: 8,
                patch_stride: 8,
                input_offset: default_input_offset(),
                input_scale: default_input_scale(),
            },
            text_tower: TextTowerConfig {
                transformer,
                vocab_size: 2048,
                max_positions: 32,
            },
            loss: LossConfig::default(),
            optimizer: OptimizerConfig {
                base_lr: 1e-3,
                decay_factor: 0.9,
                decay_every_steps: 40_000,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            mixing_ratio: [2, 2, 1, 1],
            batch_size: 64,
            epochs: 60,
            token_len: 32,
            checkpoint_every_epochs: 1,
        }
    }

    /// The published full-scale setup (AST path), recorded for reference.
    pub fn paper() -> Self {
        let transformer = TransformerConfig {
            num_layers: 12,
            hidden_dim: 768,
            num_heads: 12,
            mlp_dim: 3072,
            embed_dim: 128,
        };
        RunConfig {
            profile: "paper".to_string(),
            seed: 0,
            spectrogram: SpectrogramConfig {
                mel_channels: 128,
                window_ms: 25.0,
                hop_ms: 10.0,
                fft_size: 512,
                log_floor: 1e-6,
                mel_fmin_hz: 60.0,
                mel_fmax_hz: 7800.0,
            },
            spec_augment: SpecAugmentConfig::default(),
            audio_tower: AudioTowerConfig {
                transformer: transformer.clone(),
                mel_channels: 128,
                window_frames: 1000,
                patch_size: 16,
                patch_stride: 10,
                input_offset: default_input_offset(),
                input_scale: default_input_scale(),
            },
            text_tower: TextTowerConfig {
                transformer,
                vocab_size: 30_522,
                max_positions: 512,
            },
            loss: LossConfig::default(),
            optimizer: OptimizerConfig {
                base_lr: 4e-5,
                decay_factor: 0.9,
                decay_every_steps: 40_000,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            mixing_ratio: [2, 2, 1, 1],
            batch_size: 5120,
            epochs: 14,
            token_len: 512,
            checkpoint_every_epochs: 1,
        }
    }

    pub fn profile(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(RunConfig::desk()),
            "paper" => Ok(RunConfig::paper()),
            other => Err(Error::Config(format!(
                "unknown profile {other:?} (expected desk or paper)"
            ))),
        }
    }

    /// Load a config file: profile defaults with the file's fields merged in.
    pub fn from_file(path: &Path) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::from_value(raw)
    }

    pub fn from_value(raw: serde_json::Value) -> Result<Self> {
        let profile = raw
            .get("profile")
            .and_then(|v| v.as_str())
            .unwrap_or("desk")
            .to_string();
        let mut base = serde_json::to_value(RunConfig::profile(&profile)?)?;
        merge(&mut base, &raw);
        let config: RunConfig = serde_json::from_value(base)?;
        config.validate()?;
        Ok(config)
    }

    /// Cross-field consistency; every command calls this before touching the
    /// filesystem.
    pub fn validate(&self) -> Result<()> {
        self.audio_tower.validate()?;
        self.text_tower.validate()?;
        self.loss.validate()?;
        self.optimizer.validate()?;
        if self.audio_tower.transformer.embed_dim != self.text_tower.transformer.embed_dim {
            return Err(Error::Config(
                "audio and text towers must share the embedding dimension".to_string(),
            ));
        }
        if self.token_len != self.text_tower.max_positions {
            return Err(Error::Config(format!(
                "token_len {} must equal text_tower.max_positions {}",
                self.token_len, self.text_tower.max_positions
            )));
        }
        if self.spectrogram.mel_channels != self.audio_tower.mel_channels {
            return Err(Error::Config(format!(
                "spectrogram mel_channels {} must match audio tower {}",
                self.spectrogram.mel_channels, self.audio_tower.mel_channels
            )));
        }
        self.spec_augment
            .validate(self.audio_tower.mel_channels, self.audio_tower.window_frames)?;
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be >= 2".to_string()));
        }
        if self.epochs == 0 || self.checkpoint_every_epochs == 0 {
            return Err(Error::Config("epochs and checkpoint cadence must be >= 1".to_string()));
        }
        if self.mixing_ratio.iter().sum::<u64>() == 0 {
            return Err(Error::Config("mixing ratio is all zeros".to_string()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let config: RunConfig = serde_json::from_str(json)?;
        config.validate()?;
        Ok(config)
    }

    /// CRC32 of the canonical serialized config.
    pub fn digest(&self) -> Result<u32> {
        Ok(crc32fast::hash(self.to_json()?.as_bytes()))
    }
}

/// Recursive JSON merge: objects merge key-wise, everything else replaces.
fn merge(base: &mut serde_json::Value, overlay: &serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(base_map), serde_json::Value::Object(overlay_map)) => {
            for (k, v) in overlay_map {
                match base_map.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        base_map.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate() {
        RunConfig::desk().validate().unwrap();
        RunConfig::paper().validate().unwrap();
    }

    #[test]
    fn desk_patch_grid_is_4_by_12() {
        let cfg = RunConfig::desk();
        assert_eq!(cfg.audio_tower.patch_grid(), (4, 12));
        assert_eq!(cfg.audio_tower.seq_len(), 49);
    }

    #[test]
    fn overrides_merge_into_the_profile() {
        let raw = serde_json::json!({
            "profile": "desk",
            "batch_size": 16,
            "optimizer": { "base_lr": 5e-4 }
        });
        let cfg = RunConfig::from_value(raw).unwrap();
        assert_eq!(cfg.batch_size, 16);
        assert_eq!(cfg.optimizer.base_lr, 5e-4);
        assert_eq!(cfg.epochs, RunConfig::desk().epochs); // untouched
    }

    #[test]
    fn inconsistent_override_fails_validation() {
        let raw = serde_json::json!({ "profile": "desk", "token_len": 16 });
        assert!(RunConfig::from_value(raw).is_err());
    }

    #[test]
    fn digest_is_stable_and_sensitive() {
        let a = RunConfig::desk();
        let mut b = RunConfig::desk();
        assert_eq!(a.digest().unwrap(), b.digest().unwrap());
        b.seed = 99;
        assert_ne!(a.digest().unwrap(), b.digest().unwrap());
    }

    #[test]
    fn json_round_trip() {
        let cfg = RunConfig::desk();
        let json = cfg.to_json().unwrap();
        let back = RunConfig::from_json(&json).unwrap();
        assert_eq!(back.digest().unwrap(), cfg.digest().unwrap());
    }
}
