//! Tower configuration and validation.

use crate::error::{Error, Result};

/// Shared transformer-stack dimensions.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TransformerConfig {
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub mlp_dim: usize,
    /// Dimensionality of the shared embedding space.
    pub embed_dim: usize,
}

impl TransformerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0
            || self.hidden_dim == 0
            || self.num_heads == 0
            || self.mlp_dim == 0
            || self.embed_dim == 0
        {
            return Err(Error::Config("tower dimensions must be positive".to_string()));
        }
        if self.hidden_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "hidden_dim {} not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }
}

/// Patch-transformer audio tower over F x T context windows.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AudioTowerConfig {
    pub transformer: TransformerConfig,
    /// Mel channels F of the input window.
    pub mel_channels: usize,
    /// Frames T of the input window.
    pub window_frames: usize,
    pub patch_size: usize,
    pub patch_stride: usize,
    /// Input conditioning applied after per-window mean removal:
    /// `(value - mean - input_offset) * input_scale` before patch extraction.
    #[serde(default = "default_input_offset")]
    pub input_offset: f64,
    #[serde(default = "default_input_scale")]
    pub input_scale: f64,
}

pub fn default_input_offset() -> f64 {
    0.0
}

pub fn default_input_scale() -> f64 {
    0.25
}

impl AudioTowerConfig {
    pub fn validate(&self) -> Result<()> {
        self.transformer.validate()?;
        if self.patch_size == 0 || self.patch_stride == 0 {
            return Err(Error::Config("patch size/stride must be positive".to_string()));
        }
        if self.patch_stride > self.patch_size {
            return Err(Error::Config(format!(
                "patch_stride {} must not exceed patch_size {} (patches must abut or overlap)",
                self.patch_stride, self.patch_size
            )));
        }
        if self.mel_channels < self.patch_size || self.window_frames < self.patch_size {
            return Err(Error::Config(format!(
                "window {}x{} smaller than one {}x{} patch",
                self.mel_channels, self.window_frames, self.patch_size, self.patch_size
            )));
        }
        Ok(())
    }

    /// Patch grid (rows over frequency, cols over time):
    /// `floor((F-P)/S)+1` by `floor((T-P)/S)+1`.
    pub fn patch_grid(&self) -> (usize, usize) {
        let rows = (self.mel_channels - self.patch_size) / self.patch_stride + 1;
        let cols = (self.window_frames - self.patch_size) / self.patch_stride + 1;
        (rows, cols)
    }

    pub fn num_patches(&self) -> usize {
        let (r, c) = self.patch_grid();
        r * c
    }

    /// Sequence length seen by the transformer: patches plus the CLS token.
    pub fn seq_len(&self) -> usize {
        self.num_patches() + 1
    }
}

/// Transformer text tower over fixed-length token sequences.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct TextTowerConfig {
    pub transformer: TransformerConfig,
    pub vocab_size: usize,
    /// Fixed tokenized sequence length n.
    pub max_positions: usize,
}

impl TextTowerConfig {
    pub fn validate(&self) -> Result<()> {
        self.transformer.validate()?;
        if self.vocab_size < 3 {
            return Err(Error::Config(
                "vocab_size must cover the reserved tokens".to_string(),
            ));
        }
        if self.max_positions < 2 {
            return Err(Error::Config("max_positions must be >= 2".to_string()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_scale_patch_count() {
        // 128 x 1000 window, 16x16 patches at stride 10: 12 * 99 patches
        let cfg = AudioTowerConfig {
            transformer: TransformerConfig {
                num_layers: 12,
                hidden_dim: 768,
                num_heads: 12,
                mlp_dim: 3072,
                embed_dim: 128,
            },
            mel_channels: 128,
            window_frames: 1000,
            patch_size: 16,
            patch_stride: 10,
            input_offset: default_input_offset(),
            input_scale: default_input_scale(),
        };
        cfg.validate().unwrap();
        assert_eq!(cfg.patch_grid(), (12, 99));
        assert_eq!(cfg.num_patches(), 1188);
        assert_eq!(cfg.seq_len(), 1189);
    }

    #[test]
    fn single_patch_window() {
        let cfg = AudioTowerConfig {
            transformer: TransformerConfig {
                num_layers: 1,
                hidden_dim: 8,
                num_heads: 2,
                mlp_dim: 16,
                embed_dim: 4,
            },
            mel_channels: 16,
            window_frames: 16,
            patch_size: 16,
            patch_stride: 10,
            input_offset: default_input_offset(),
            input_scale: default_input_scale(),
        };
        assert_eq!(cfg.num_patches(), 1);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = TransformerConfig {
            num_layers: 2,
            hidden_dim: 10,
            num_heads: 4,
            mlp_dim: 16,
            embed_dim: 8,
        };
        assert!(cfg.validate().is_err()); // 10 % 4 != 0
        cfg.hidden_dim = 12;
        cfg.validate().unwrap();

        let audio = AudioTowerConfig {
            transformer: cfg.clone(),
            mel_channels: 8,
            window_frames: 20,
            patch_size: 4,
            patch_stride: 6,
            input_offset: default_input_offset(),
            input_scale: default_input_scale(),
        };
        assert!(audio.validate().is_err()); // stride > patch
    }
}
