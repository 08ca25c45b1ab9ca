//! Audio tower: patch tokens over a context window, transformer stack,
//! CLS projection to the shared space.

use rand::Rng;

use crate::dsp::spectrogram::ContextWindow;
use crate::error::{Error, Result};
use crate::nn::init::truncated_normal;
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;
use crate::nn::ParameterStore;
use crate::towers::config::AudioTowerConfig;
use crate::towers::transformer::{self, INIT_STD};

pub const PREFIX: &str = "audio";

pub fn init_audio_tower<R: Rng>(
    store: &mut ParameterStore,
    cfg: &AudioTowerConfig,
    rng: &mut R,
) -> Result<()> {
    cfg.validate()?;
    let h = cfg.transformer.hidden_dim;
    let patch_dim = cfg.patch_size * cfg.patch_size;
    store.insert(
        &format!("{PREFIX}.patch_proj.w"),
        truncated_normal(rng, &[patch_dim, h], INIT_STD),
    )?;
    store.insert(&format!("{PREFIX}.patch_proj.b"), Tensor::zeros(&[h]))?;
    store.insert(&format!("{PREFIX}.cls"), truncated_normal(rng, &[1, h], INIT_STD))?;
    store.insert(
        &format!("{PREFIX}.pos"),
        truncated_normal(rng, &[cfg.seq_len(), h], INIT_STD),
    )?;
    transformer::init_stack(store, PREFIX, &cfg.transformer, rng)
}

/// Flatten the window into its patch matrix [num_patches, patch*patch].
/// Patches are taken at every (row, col) offset that is a multiple of the
/// stride with the patch fully inside, frequency-major.
pub fn audio_patch_matrix(x: &ContextWindow, cfg: &AudioTowerConfig) -> Result<Tensor> {
    if x.mel_channels() != cfg.mel_channels || x.frames() != cfg.window_frames {
        return Err(Error::Shape(format!(
            "window {}x{} does not match configured {}x{}",
            x.mel_channels(),
            x.frames(),
            cfg.mel_channels,
            cfg.window_frames
        )));
    }
    let p = cfg.patch_size;
    let (rows, cols) = cfg.patch_grid();
    let mut data = Vec::with_capacity(rows * cols * p * p);
    for r in 0..rows {
        for c in 0..cols {
            let (row0, col0) = (r * cfg.patch_stride, c * cfg.patch_stride);
            for band in row0..row0 + p {
                for frame in col0..col0 + p {
                    data.push(x.at(band, frame));
                }
            }
        }
    }
    Tensor::from_vec(&[rows * cols, p * p], data)
}

/// Input conditioning: subtract the per-window mean (raw log-mel entries sit
/// on a large shared offset that would otherwise dominate every patch), then
/// apply the configured affine map.
pub fn conditioned(window: &ContextWindow, cfg: &AudioTowerConfig) -> ContextWindow {
    let mut out = window.clone();
    let mean = out.values().iter().sum::<f64>() / out.values().len() as f64;
    for v in out.values_mut() {
        *v = (*v - mean - cfg.input_offset) * cfg.input_scale;
    }
    out
}

/// Build the audio tower graph; returns the [1,d] unit-norm embedding node.
pub fn audio_tower_forward(
    tape: &mut Tape,
    params: &ParameterStore,
    cfg: &AudioTowerConfig,
    window: &ContextWindow,
) -> Result<Var> {
    let patches = tape.leaf(audio_patch_matrix(&conditioned(window, cfg), cfg)?)?;
    let w = {
        let name = format!("{PREFIX}.patch_proj.w");
        tape.param(&name, params.get(&name)?)?
    };
    let b = {
        let name = format!("{PREFIX}.patch_proj.b");
        tape.param(&name, params.get(&name)?)?
    };
    let projected = tape.matmul(patches, w)?;
    let tokens = tape.add_row_broadcast(projected, b)?;

    let cls = {
        let name = format!("{PREFIX}.cls");
        tape.param(&name, params.get(&name)?)?
    };
    let seq = tape.concat_rows(&[cls, tokens])?;
    let pos = {
        let name = format!("{PREFIX}.pos");
        tape.param(&name, params.get(&name)?)?
    };
    let seq = tape.add(seq, pos)?;

    let key_mask = vec![true; cfg.seq_len()];
    transformer::encode(tape, params, seq, PREFIX, &cfg.transformer, &key_mask)
}
