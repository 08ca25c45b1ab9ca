//! SpecAugment: seeded frequency- and time-masking of context windows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::spectrogram::ContextWindow;
use crate::error::{Error, Result};

/// Masking parameters. Widths are maxima; each mask draws its width
/// uniformly from `0..=max` and its offset uniformly over valid positions.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpecAugmentConfig {
    pub num_freq_masks: usize,
    pub max_freq_width: usize,
    pub num_time_masks: usize,
    pub max_time_width: usize,
    pub mask_value: f64,
}

impl Default for SpecAugmentConfig {
    fn default() -> Self {
        SpecAugmentConfig {
            num_freq_masks: 2,
            max_freq_width: 8,
            num_time_masks: 2,
            max_time_width: 100,
            mask_value: (1e-6f64).ln(),
        }
    }
}

impl SpecAugmentConfig {
    /// A config that never masks anything.
    pub fn disabled() -> Self {
        SpecAugmentConfig {
            num_freq_masks: 0,
            max_freq_width: 0,
            num_time_masks: 0,
            max_time_width: 0,
            mask_value: (1e-6f64).ln(),
        }
    }

    pub fn validate(&self, mel_channels: usize, frames: usize) -> Result<()> {
        if self.max_freq_width > mel_channels {
            return Err(Error::Config(format!(
                "max_freq_width {} exceeds {} mel channels",
                self.max_freq_width, mel_channels
            )));
        }
        if self.max_time_width > frames {
            return Err(Error::Config(format!(
                "max_time_width {} exceeds {} frames",
                self.max_time_width, frames
            )));
        }
        if !self.mask_value.is_finite() {
            return Err(Error::Config("mask_value must be finite".to_string()));
        }
        Ok(())
    }
}

/// Apply seeded SpecAugment. Two calls with the same seed produce identical
/// outputs; every entry is either `mask_value` or the original value.
pub fn spec_augment(x: &ContextWindow, cfg: &SpecAugmentConfig, rng_seed: u64) -> Result<ContextWindow> {
    let f = x.mel_channels();
    let t = x.frames();
    cfg.validate(f, t)?;
    let mut out = x.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);

    for _ in 0..cfg.num_freq_masks {
        let width = rng.gen_range(0..=cfg.max_freq_width);
        let start = rng.gen_range(0..=f - width);
        for band in start..start + width {
            for v in &mut out.values_mut()[band * t..(band + 1) * t] {
                *v = cfg.mask_value;
            }
        }
    }
    for _ in 0..cfg.num_time_masks {
        let width = rng.gen_range(0..=cfg.max_time_width);
        let start = rng.gen_range(0..=t - width);
        for band in 0..f {
            for v in &mut out.values_mut()[band * t + start..band * t + start + width] {
                *v = cfg.mask_value;
            }
        }
    }
    Ok(out)
}
