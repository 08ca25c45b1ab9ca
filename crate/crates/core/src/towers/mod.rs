//! The two embedding networks and clip-level aggregation.
//!
//! Both towers terminate in the same l2-normalized d-dimensional space.
//! Parameters are immutable during inference, so `embed_*` calls are freely
//! concurrent over a shared store; training owns the store per step.

pub mod audio;
pub mod config;
pub mod text;
pub mod transformer;

pub use audio::{audio_patch_matrix, audio_tower_forward, init_audio_tower};
pub use config::{AudioTowerConfig, TextTowerConfig, TransformerConfig};
pub use text::{init_text_tower, text_tower_forward};

use crate::dsp::spectrogram::ContextWindow;
use crate::error::{Error, Result};
use crate::nn::tape::Tape;
use crate::nn::tensor;
use crate::nn::ParameterStore;
use crate::text::tokenizer::TokenSequence;

/// Tolerance on the unit-norm invariant of tower outputs.
pub const NORM_TOLERANCE: f64 = 1e-9;

/// A unit-norm vector in the shared embedding space.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
}

impl Embedding {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        let norm = tensor::dot(&values, &values).sqrt();
        if (norm - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::Numeric(format!(
                "embedding norm {norm} violates the unit-norm invariant"
            )));
        }
        Ok(Embedding { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Cosine similarity; for unit-norm embeddings this is the dot product.
    pub fn cosine(&self, other: &Embedding) -> f64 {
        tensor::dot(&self.values, &other.values)
    }
}

/// Embed one context window (inference path, no augmentation).
pub fn embed_audio(
    params: &ParameterStore,
    cfg: &AudioTowerConfig,
    window: &ContextWindow,
) -> Result<Embedding> {
    let mut tape = Tape::new();
    let out = audio_tower_forward(&mut tape, params, cfg, window)?;
    Embedding::new(tape.value(out).data().to_vec())
}

/// Embed one token sequence.
pub fn embed_text(
    params: &ParameterStore,
    cfg: &TextTowerConfig,
    tokens: &TokenSequence,
) -> Result<Embedding> {
    let mut tape = Tape::new();
    let out = text_tower_forward(&mut tape, params, cfg, tokens)?;
    Embedding::new(tape.value(out).data().to_vec())
}

/// Mean of embeddings, re-normalized onto the unit sphere. Re-normalization
/// leaves every cosine-based ranking unchanged and keeps the output a valid
/// `Embedding`.
pub fn mean_embedding(embeddings: &[Embedding]) -> Result<Embedding> {
    if embeddings.is_empty() {
        return Err(Error::Argument("mean of zero embeddings".to_string()));
    }
    let d = embeddings[0].dim();
    let mut acc = vec![0.0; d];
    for e in embeddings {
        if e.dim() != d {
            return Err(Error::Shape("embedding dimensions differ".to_string()));
        }
        for (a, &v) in acc.iter_mut().zip(e.as_slice()) {
            *a += v;
        }
    }
    let norm = tensor::dot(&acc, &acc).sqrt();
    if norm == 0.0 {
        return Err(Error::Numeric(
            "segment embeddings cancel; clip embedding undefined".to_string(),
        ));
    }
    for a in acc.iter_mut() {
        *a /= norm;
    }
    Embedding::new(acc)
}

/// Clip-level embedding: average the per-segment embeddings, re-normalize.
pub fn embed_clip(
    params: &ParameterStore,
    cfg: &AudioTowerConfig,
    segments: &[ContextWindow],
) -> Result<Embedding> {
    if segments.is_empty() {
        return Err(Error::Argument("embed_clip needs at least one segment".to_string()));
    }
    let per_segment: Vec<Embedding> = segments
        .iter()
        .map(|s| embed_audio(params, cfg, s))
        .collect::<Result<_>>()?;
    mean_embedding(&per_segment)
}
