//! Desk-scale two-tower audio-text contrastive embedding toolkit.
//!
//! The crate links music-style audio to free-form text through two
//! independently-parameterized encoders that share an l2-normalized
//! embedding space:
//!
//! - [`dsp`] turns waveforms into log-mel spectrogram context windows and
//!   applies SpecAugment masking during training;
//! - [`text`] tokenizes strings into fixed-length wordpiece sequences and
//!   hosts the annotation filters;
//! - [`nn`] is a minimal f64 reverse-mode differentiation engine with Adam
//!   and binary checkpoints;
//! - [`towers`] holds the patch-transformer audio encoder and the
//!   transformer text encoder;
//! - [`loss`] implements the batch-wise cross-modal contrastive objective
//!   with its trainable temperature;
//! - [`corpus`] models recordings with multi-source annotations, batch
//!   mixing, and a synthetic corpus generator with planted ground truth;
//! - [`eval`] provides zero-shot tagging, linear probes, text-query
//!   retrieval, and text triplet classification with oracle-verified
//!   metrics;
//! - [`index`] is a flat embedding index for exhaustive cosine search.

pub mod corpus;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod index;
pub mod loss;
pub mod nn;
pub mod text;
pub mod towers;

pub use error::{Error, Result};
