use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ModelError, SasrecParams, LAYER_NORM_EPS};
use crate::autodiff::{Tape, Tensor, Var};
use crate::data::SeqBatch;
use crate::lbd::expected_gate;

/// Tape handles for every registered parameter, in `named_tensors` order.
pub struct ParamVars {
    pub item_embedding: Var,
    pub position_embedding: Var,
    pub blocks: Vec<BlockVars>,
    pub final_ln_gain: Var,
    pub final_ln_bias: Var,
}

pub struct BlockVars {
    pub attn_ln_gain: Var,
    pub attn_ln_bias: Var,
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_o: Var,
    pub ffn_ln_gain: Var,
    pub ffn_ln_bias: Var,
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl ParamVars {
    pub fn register(tape: &mut Tape, params: &SasrecParams) -> ParamVars {
        ParamVars {
            item_embedding: tape.leaf(&params.item_embedding),
            position_embedding: tape.leaf(&params.position_embedding),
            final_ln_gain: tape.leaf(&params.final_ln_gain),
            final_ln_bias: tape.leaf(&params.final_ln_bias),
            blocks: params
                .blocks
                .iter()
                .map(|b| BlockVars {
                    attn_ln_gain: tape.leaf(&b.attn_ln_gain),
                    attn_ln_bias: tape.leaf(&b.attn_ln_bias),
                    w_q: tape.leaf(&b.w_q),
                    w_k: tape.leaf(&b.w_k),
                    w_v: tape.leaf(&b.w_v),
                    w_o: tape.leaf(&b.w_o),
                    ffn_ln_gain: tape.leaf(&b.ffn_ln_gain),
                    ffn_ln_bias: tape.leaf(&b.ffn_ln_bias),
                    w1: tape.leaf(&b.w1),
                    b1: tape.leaf(&b.b1),
                    w2: tape.leaf(&b.w2),
                    b2: tape.leaf(&b.b2),
                })
                .collect(),
        }
    }

    /// Rebuild the handle set from vars laid out like `named_tensors`
    /// (2 embedding tables then 12 vars per block), for gradient-check
    /// closures that register parameters themselves.
    pub fn from_ordered_vars(vars: &[Var]) -> ParamVars {
        assert!(vars.len() >= 4 && (vars.len() - 4) % 12 == 0, "unexpected var layout");
        ParamVars {
            item_embedding: vars[0],
            position_embedding: vars[1],
            final_ln_gain: vars[vars.len() - 2],
            final_ln_bias: vars[vars.len() - 1],
            blocks: vars[2..vars.len() - 2]
                .chunks(12)
                .map(|c| BlockVars {
                    attn_ln_gain: c[0],
                    attn_ln_bias: c[1],
                    w_q: c[2],
                    w_k: c[3],
                    w_v: c[4],
                    w_o: c[5],
                    ffn_ln_gain: c[6],
                    ffn_ln_bias: c[7],
                    w1: c[8],
                    b1: c[9],
                    w2: c[10],
                    b2: c[11],
                })
                .collect(),
        }
    }

    /// Gradients in the same order as `SasrecParams::tensors_mut`.
    pub fn collect_grads(&self, tape: &Tape) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        let mut push = |v: Var| out.push(tape.grad(v).map(|g| g.to_vec()).unwrap_or_default());
        push(self.item_embedding);
        push(self.position_embedding);
        for b in &self.blocks {
            for v in [
                b.attn_ln_gain,
                b.attn_ln_bias,
                b.w_q,
                b.w_k,
                b.w_v,
                b.w_o,
                b.ffn_ln_gain,
                b.ffn_ln_bias,
                b.w1,
                b.b1,
                b.w2,
                b.b2,
            ] {
                push(v);
            }
        }
        push(self.final_ln_gain);
        push(self.final_ln_bias);
        out
    }
}

/// How the feed-forward gates behave during a forward pass.
pub enum GateMode<'a> {
    /// One sampled 0/1 mask per block (training).
    Masks(&'a [Vec<f64>]),
    /// Multiply by the expected mask `sigmoid(phi)` (evaluation, and the
    /// mode the no-LMA ablation trains in).
    Expected,
    /// No gating at all: the plain ungated encoder.
    Unit,
}

/// Causal self-attention sub-layer in pre-norm arrangement:
/// `a + Attention(LayerNorm(a))`. Queries may attend to their own and
/// earlier positions holding real items; rows with nothing to attend to
/// (left padding) produce zero context.
#[allow(clippy::too_many_arguments)]
pub fn attention_block(
    tape: &mut Tape,
    block: &BlockVars,
    h: Var,
    allow: &[bool],
    num_heads: usize,
    dropout_rate: f64,
    rng: &mut Option<&mut ChaCha8Rng>,
) -> Result<Var, ModelError> {
    let shape = tape.shape(h).to_vec();
    let (b, t, d) = (shape[0], shape[1], shape[2]);
    let dk = d / num_heads;

    let x = tape.layer_norm(h, block.attn_ln_gain, block.attn_ln_bias, LAYER_NORM_EPS)?;
    let split_heads = |tape: &mut Tape, v: Var| -> Result<Var, ModelError> {
        let r = tape.reshape(v, vec![b, t, num_heads, dk])?;
        Ok(tape.swap_axes_1_2(r)?)
    };
    let q = tape.matmul(x, block.w_q)?;
    let k = tape.matmul(x, block.w_k)?;
    let v = tape.matmul(x, block.w_v)?;
    let q4 = split_heads(tape, q)?;
    let k4 = split_heads(tape, k)?;
    let v4 = split_heads(tape, v)?;

    let kt = tape.transpose_last(k4)?;
    let raw = tape.matmul(q4, kt)?;
    let scores = tape.scale(raw, 1.0 / (dk as f64).sqrt());
    let mut attn = tape.masked_softmax_lastdim(scores, allow)?;
    if dropout_rate > 0.0 {
        if let Some(rng) = rng.as_deref_mut() {
            attn = fixed_dropout(tape, attn, dropout_rate, rng)?;
        }
    }
    let ctx = tape.matmul(attn, v4)?;
    let merged = tape.swap_axes_1_2(ctx)?;
    let ctx3 = tape.reshape(merged, vec![b, t, d])?;
    let proj = tape.matmul(ctx3, block.w_o)?;
    Ok(tape.add(h, proj)?)
}

/// Gated feed-forward sub-layer: `a + gate * FFN(LayerNorm(a))`, where the
/// FFN is two linear maps with a ReLU between. `gate` is `None` for the
/// ungated encoder, otherwise a per-neuron multiplier (sampled 0/1 mask in
/// training, expected keep probability in evaluation).
pub fn ffn_block(
    tape: &mut Tape,
    block: &BlockVars,
    h: Var,
    gate: Option<&[f64]>,
) -> Result<Var, ModelError> {
    let x = tape.layer_norm(h, block.ffn_ln_gain, block.ffn_ln_bias, LAYER_NORM_EPS)?;
    let a1 = tape.matmul(x, block.w1)?;
    let a1b = tape.add_bias(a1, block.b1)?;
    let f1 = tape.relu(a1b);
    let a2 = tape.matmul(f1, block.w2)?;
    let f2 = tape.add_bias(a2, block.b2)?;
    let gated = match gate {
        Some(weights) => tape.scale_features(f2, weights)?,
        None => f2,
    };
    Ok(tape.add(h, gated)?)
}

/// Full encoder forward pass over a left-padded batch.
///
/// Position embeddings are indexed by distance from the sequence end, so a
/// sequence keeps identical representations at its real positions no matter
/// how much padding precedes it. Padding slots hold zero embeddings, are
/// never attended to, and never reach a loss.
pub fn encode(
    tape: &mut Tape,
    params: &SasrecParams,
    vars: &ParamVars,
    inputs: &SeqBatch,
    gates: &GateMode,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<Var, ModelError> {
    let cfg = &params.config;
    let (b, t) = (inputs.rows, inputs.width);
    if t > cfg.max_len {
        return Err(ModelError::Config {
            msg: format!("batch width {t} exceeds max_len {}", cfg.max_len),
        });
    }

    let item_ix: Vec<usize> = inputs.items.iter().map(|&i| i as usize).collect();
    let item_lu = tape.lookup(vars.item_embedding, &item_ix, &[b, t])?;

    // position index = distance from the sequence end
    let pos_ix: Vec<usize> = (0..b * t).map(|i| t - 1 - i % t).collect();
    let pos_lu = tape.lookup(vars.position_embedding, &pos_ix, &[b, t])?;
    let row_valid: Vec<f64> =
        inputs.items.iter().map(|&i| if i != 0 { 1.0 } else { 0.0 }).collect();
    let pos_masked = tape.scale_rows(pos_lu, &row_valid)?;
    let mut h = tape.add(item_lu, pos_masked)?;

    if cfg.embed_dropout_rate > 0.0 {
        if let Some(rng) = dropout_rng.as_deref_mut() {
            h = fixed_dropout(tape, h, cfg.embed_dropout_rate, rng)?;
        }
    }

    // allow[b, head, query, key]: causal and the key slot holds a real item
    let valid = inputs.valid_mask();
    let mut allow = vec![false; b * cfg.num_heads * t * t];
    for row in 0..b {
        for query in 0..t {
            for key in 0..=query {
                if valid[row * t + key] {
                    for head in 0..cfg.num_heads {
                        allow[((row * cfg.num_heads + head) * t + query) * t + key] = true;
                    }
                }
            }
        }
    }

    let expected: Vec<Vec<f64>> = match gates {
        GateMode::Expected => params.gates.iter().map(expected_gate).collect(),
        _ => Vec::new(),
    };
    for (c, block) in vars.blocks.iter().enumerate() {
        h = attention_block(
            tape,
            block,
            h,
            &allow,
            cfg.num_heads,
            cfg.attention_dropout_rate,
            &mut dropout_rng,
        )?;
        let gate: Option<&[f64]> = match gates {
            GateMode::Masks(masks) => Some(&masks[c]),
            GateMode::Expected => Some(&expected[c]),
            GateMode::Unit => None,
        };
        h = ffn_block(tape, block, h, gate)?;
    }
    Ok(tape.layer_norm(h, vars.final_ln_gain, vars.final_ln_bias, LAYER_NORM_EPS)?)
}

/// Inverted dropout with a fixed rate: keep with probability `1 - rate` and
/// scale kept activations by `1 / (1 - rate)`.
fn fixed_dropout(tape: &mut Tape, x: Var, rate: f64, rng: &mut ChaCha8Rng) -> Result<Var, ModelError> {
    let n = tape.value(x).len();
    let scale = 1.0 / (1.0 - rate);
    let mask: Vec<f64> =
        (0..n).map(|_| if rng.random::<f64>() < rate { 0.0 } else { scale }).collect();
    Ok(tape.mul_const(x, &mask)?)
}

/// Dot-product scores of one sequence representation against every real item
/// (index 1 through `num_items`); `scores[i - 1]` belongs to item `i`.
pub fn score_items(h: &[f64], item_embedding: &Tensor, num_items: usize) -> Vec<f64> {
    let d = h.len();
    let table = item_embedding.data();
    (1..=num_items)
        .map(|i| {
            let row = &table[i * d..(i + 1) * d];
            h.iter().zip(row).map(|(a, b)| a * b).sum()
        })
        .collect()
}
