//! Text tower: token + position embeddings, transformer stack with the
//! attention mask excluding pads, CLS projection to the shared space.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::init::truncated_normal;
use crate::nn::tape::{Tape, Var};
use crate::nn::ParameterStore;
use crate::text::tokenizer::TokenSequence;
use crate::text::vocab::CLS_ID;
use crate::towers::config::TextTowerConfig;
use crate::towers::transformer::{self, INIT_STD};

pub const PREFIX: &str = "text";

/// Token embeddings start an order of magnitude wider than the other
/// weights; at desk width the usual 0.02 leaves token content buried under
/// the shared CLS/position directions and the text space collapses.
pub const TOK_EMB_INIT_STD: f64 = 0.5;

pub fn init_text_tower<R: Rng>(
    store: &mut ParameterStore,
    cfg: &TextTowerConfig,
    rng: &mut R,
) -> Result<()> {
    cfg.validate()?;
    let h = cfg.transformer.hidden_dim;
    store.insert(
        &format!("{PREFIX}.tok_emb"),
        truncated_normal(rng, &[cfg.vocab_size, h], TOK_EMB_INIT_STD),
    )?;
    store.insert(
        &format!("{PREFIX}.pos"),
        truncated_normal(rng, &[cfg.max_positions, h], INIT_STD),
    )?;
    transformer::init_stack(store, PREFIX, &cfg.transformer, rng)
}

/// Build the text tower graph; returns the [1,d] unit-norm embedding node.
///
/// Because the attention mask excludes pads everywhere (including every
/// normalization statistic, which is per-token), the stack is evaluated over
/// the real-token prefix only; padded positions cannot influence the output
/// by construction.
pub fn text_tower_forward(
    tape: &mut Tape,
    params: &ParameterStore,
    cfg: &TextTowerConfig,
    tokens: &TokenSequence,
) -> Result<Var> {
    if tokens.len() != cfg.max_positions {
        return Err(Error::Shape(format!(
            "token sequence length {} does not match configured n = {}",
            tokens.len(),
            cfg.max_positions
        )));
    }
    if tokens.ids()[0] != CLS_ID {
        return Err(Error::Argument("position 0 must be [CLS]".to_string()));
    }
    let real_len = tokens.real_len().max(1);
    let ids: Vec<usize> = tokens.ids()[..real_len]
        .iter()
        .map(|&id| id as usize)
        .collect();
    for &id in &ids {
        if id >= cfg.vocab_size {
            return Err(Error::Vocab(format!(
                "token id {id} out of range for vocab_size {}",
                cfg.vocab_size
            )));
        }
    }

    let table = {
        let name = format!("{PREFIX}.tok_emb");
        tape.param(&name, params.get(&name)?)?
    };
    let tok = tape.embedding_lookup(table, &ids)?;
    let pos_table = {
        let name = format!("{PREFIX}.pos");
        tape.param(&name, params.get(&name)?)?
    };
    let pos = tape.slice_rows(pos_table, 0, real_len)?;
    let seq = tape.add(tok, pos)?;

    let key_mask = vec![true; real_len];
    transformer::encode(tape, params, seq, PREFIX, &cfg.transformer, &key_mask)
}
