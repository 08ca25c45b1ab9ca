//! Pre-layer-norm transformer blocks shared by both towers.

use rand::Rng;

use crate::error::Result;
use crate::nn::init::truncated_normal;
use crate::nn::tape::{Tape, Var};
use crate::nn::tensor::Tensor;
use crate::nn::ParameterStore;
use crate::towers::config::TransformerConfig;

pub const LN_EPS: f64 = 1e-6;
pub const INIT_STD: f64 = 0.02;
/// Query/key projections start wider so attention is content-dependent from
/// step zero; with the BERT-style 0.02 everywhere, attention at this width
/// is uniform and the CLS readout barely sees the input.
pub const QK_INIT_STD: f64 = 0.3;

/// Register the parameters of one transformer stack (blocks + final norm +
/// projection head) under `prefix`.
pub fn init_stack<R: Rng>(
    store: &mut ParameterStore,
    prefix: &str,
    cfg: &TransformerConfig,
    rng: &mut R,
) -> Result<()> {
    let h = cfg.hidden_dim;
    for layer in 0..cfg.num_layers {
        let p = format!("{prefix}.l{layer}");
        store.insert(&format!("{p}.ln1.g"), Tensor::filled(&[h], 1.0))?;
        store.insert(&format!("{p}.ln1.b"), Tensor::zeros(&[h]))?;
        for name in ["wq", "wk"] {
            store.insert(
                &format!("{p}.attn.{name}"),
                truncated_normal(rng, &[h, h], QK_INIT_STD),
            )?;
        }
        for name in ["wv", "wo"] {
            store.insert(
                &format!("{p}.attn.{name}"),
                truncated_normal(rng, &[h, h], INIT_STD),
            )?;
        }
        for name in ["bq", "bk", "bv", "bo"] {
            store.insert(&format!("{p}.attn.{name}"), Tensor::zeros(&[h]))?;
        }
        store.insert(&format!("{p}.ln2.g"), Tensor::filled(&[h], 1.0))?;
        store.insert(&format!("{p}.ln2.b"), Tensor::zeros(&[h]))?;
        store.insert(
            &format!("{p}.mlp.w1"),
            truncated_normal(rng, &[h, cfg.mlp_dim], INIT_STD),
        )?;
        store.insert(&format!("{p}.mlp.b1"), Tensor::zeros(&[cfg.mlp_dim]))?;
        store.insert(
            &format!("{p}.mlp.w2"),
            truncated_normal(rng, &[cfg.mlp_dim, h], INIT_STD),
        )?;
        store.insert(&format!("{p}.mlp.b2"), Tensor::zeros(&[h]))?;
    }
    store.insert(&format!("{prefix}.ln_f.g"), Tensor::filled(&[h], 1.0))?;
    store.insert(&format!("{prefix}.ln_f.b"), Tensor::zeros(&[h]))?;
    store.insert(
        &format!("{prefix}.head.w"),
        truncated_normal(rng, &[h, cfg.embed_dim], INIT_STD),
    )?;
    store.insert(&format!("{prefix}.head.b"), Tensor::zeros(&[cfg.embed_dim]))?;
    Ok(())
}

fn linear(
    tape: &mut Tape,
    params: &ParameterStore,
    x: Var,
    w_name: &str,
    b_name: &str,
) -> Result<Var> {
    let w = tape.param(w_name, params.get(w_name)?)?;
    let b = tape.param(b_name, params.get(b_name)?)?;
    let y = tape.matmul(x, w)?;
    tape.add_row_broadcast(y, b)
}

/// Multi-head self-attention with keys restricted by `key_mask`.
fn attention(
    tape: &mut Tape,
    params: &ParameterStore,
    x: Var,
    prefix: &str,
    cfg: &TransformerConfig,
    key_mask: &[bool],
) -> Result<Var> {
    let dk = cfg.head_dim();
    let q = linear(tape, params, x, &format!("{prefix}.wq"), &format!("{prefix}.bq"))?;
    let k = linear(tape, params, x, &format!("{prefix}.wk"), &format!("{prefix}.bk"))?;
    let v = linear(tape, params, x, &format!("{prefix}.wv"), &format!("{prefix}.bv"))?;

    let mut heads = Vec::with_capacity(cfg.num_heads);
    for head in 0..cfg.num_heads {
        let qh = tape.slice_cols(q, head * dk, dk)?;
        let kh = tape.slice_cols(k, head * dk, dk)?;
        let vh = tape.slice_cols(v, head * dk, dk)?;
        let kt = tape.transpose(kh)?;
        let scores = tape.matmul(qh, kt)?;
        let scaled = tape.scale(scores, 1.0 / (dk as f64).sqrt())?;
        let probs = tape.masked_softmax_rows(scaled, key_mask)?;
        heads.push(tape.matmul(probs, vh)?);
    }
    let ctx = tape.concat_cols(&heads)?;
    linear(tape, params, ctx, &format!("{prefix}.wo"), &format!("{prefix}.bo"))
}

fn layer_norm(
    tape: &mut Tape,
    params: &ParameterStore,
    x: Var,
    g_name: &str,
    b_name: &str,
) -> Result<Var> {
    let g = tape.param(g_name, params.get(g_name)?)?;
    let b = tape.param(b_name, params.get(b_name)?)?;
    tape.layer_norm_rows(x, g, b, LN_EPS)
}

/// One pre-LN block: `x + Attn(LN(x))`, then `x + MLP(LN(x))`.
fn block(
    tape: &mut Tape,
    params: &ParameterStore,
    x: Var,
    prefix: &str,
    cfg: &TransformerConfig,
    key_mask: &[bool],
) -> Result<Var> {
    let normed = layer_norm(tape, params, x, &format!("{prefix}.ln1.g"), &format!("{prefix}.ln1.b"))?;
    let attn = attention(tape, params, normed, &format!("{prefix}.attn"), cfg, key_mask)?;
    let x = tape.add(x, attn)?;

    let normed = layer_norm(tape, params, x, &format!("{prefix}.ln2.g"), &format!("{prefix}.ln2.b"))?;
    let hidden = linear(
        tape,
        params,
        normed,
        &format!("{prefix}.mlp.w1"),
        &format!("{prefix}.mlp.b1"),
    )?;
    let act = tape.gelu(hidden)?;
    let mlp = linear(
        tape,
        params,
        act,
        &format!("{prefix}.mlp.w2"),
        &format!("{prefix}.mlp.b2"),
    )?;
    tape.add(x, mlp)
}

/// Run the full stack over token states `x` [S,H]; returns the normalized,
/// projected, l2-normalized CLS embedding as a [1,d] node.
pub fn encode(
    tape: &mut Tape,
    params: &ParameterStore,
    x: Var,
    prefix: &str,
    cfg: &TransformerConfig,
    key_mask: &[bool],
) -> Result<Var> {
    let mut x = x;
    for layer in 0..cfg.num_layers {
        x = block(tape, params, x, &format!("{prefix}.l{layer}"), cfg, key_mask)?;
    }
    let x = layer_norm(
        tape,
        params,
        x,
        &format!("{prefix}.ln_f.g"),
        &format!("{prefix}.ln_f.b"),
    )?;
    let cls = tape.slice_rows(x, 0, 1)?;
    let projected = linear(
        tape,
        params,
        cls,
        &format!("{prefix}.head.w"),
        &format!("{prefix}.head.b"),
    )?;
    tape.l2_normalize_rows(projected)
}
