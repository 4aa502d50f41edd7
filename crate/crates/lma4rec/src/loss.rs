//! The three training objectives: per-position next-item prediction, the
//! contrastive view loss over pooled sequence representations, and their
//! weighted combination.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, TapeError, Var};
use crate::data::Batch;
use crate::model::ParamVars;

/// Weight of the contrastive term and its similarity temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub lambda: f64,
    pub temperature: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda: 0.1, temperature: 1.0 }
    }
}

/// Pooled representations of the two stochastic views of one batch, in the
/// same row order.
pub struct ViewPair {
    pub z_a: Var,
    pub z_b: Var,
}

/// Mean over valid positions of `-log( e^{s+} / (e^{s+} + e^{s-}) )`, where
/// `s+`/`s-` are dot-product scores of the encoder output at each position
/// against the positive (actual next item) and one sampled negative. The
/// shared item-embedding table receives gradients through both lookups.
pub fn next_item_loss(
    tape: &mut Tape,
    h: Var,
    vars: &ParamVars,
    batch: &Batch,
) -> Result<Var, TapeError> {
    let (rows, width) = (batch.inputs.rows, batch.inputs.width);
    let pos_ix: Vec<usize> = batch.positives.iter().map(|&i| i as usize).collect();
    let neg_ix: Vec<usize> = batch.negatives.iter().map(|&i| i as usize).collect();
    let pos_emb = tape.lookup(vars.item_embedding, &pos_ix, &[rows, width])?;
    let neg_emb = tape.lookup(vars.item_embedding, &neg_ix, &[rows, width])?;

    let pos_prod = tape.mul(h, pos_emb)?;
    let s_pos = tape.sum_lastdim(pos_prod)?;
    let neg_prod = tape.mul(h, neg_emb)?;
    let s_neg = tape.sum_lastdim(neg_prod)?;

    // -log sigmoid(s_pos - s_neg) = softplus(s_neg - s_pos)
    let margin = tape.sub(s_neg, s_pos)?;
    let per_position = tape.softplus(margin);
    tape.masked_mean(per_position, &batch.valid)
}

/// Representation of each sequence: the encoder output at its last valid
/// (non-padding) position.
pub fn pool_last_valid(tape: &mut Tape, h: Var, last_valid: &[usize]) -> Result<Var, TapeError> {
    tape.select_positions(h, last_valid)
}

/// Normalized-temperature cross entropy over `2N` pooled views. Rows `i` and
/// `i + N` are the two views of the same sequence; every other row is a
/// negative. Similarity is dot product over `temperature`.
pub fn info_nce(tape: &mut Tape, views: &ViewPair, temperature: f64) -> Result<Var, TapeError> {
    let n = tape.shape(views.z_a)[0];
    if n < 2 {
        return Err(TapeError::Contract {
            msg: format!("the contrastive loss needs a batch of at least 2 sequences, got {n}"),
        });
    }
    if temperature <= 0.0 {
        return Err(TapeError::Contract { msg: format!("temperature must be positive, got {temperature}") });
    }
    let z = tape.concat_rows(views.z_a, views.z_b)?;
    let zt = tape.transpose_last(z)?;
    let gram = tape.matmul(z, zt)?;
    let sims = tape.scale(gram, 1.0 / temperature);

    let total = 2 * n;
    // every non-self candidate stays in the denominator
    let mut allow = vec![true; total * total];
    for i in 0..total {
        allow[i * total + i] = false;
    }
    let denominator = tape.masked_logsumexp_lastdim(sims, &allow)?;
    let partner: Vec<usize> = (0..total).map(|i| (i + n) % total).collect();
    let positive = tape.select_lastdim(sims, &partner)?;
    let per_anchor = tape.sub(denominator, positive)?;
    Ok(tape.mean_all(per_anchor))
}

/// `l_rs + lambda * l_ssl`.
pub fn joint_loss(tape: &mut Tape, l_rs: Var, l_ssl: Var, lambda: f64) -> Result<Var, TapeError> {
    let weighted = tape.scale(l_ssl, lambda);
    tape.add(l_rs, weighted)
}

/// Brute-force reference: the same contrastive loss by a double loop over
/// anchors and candidates. Oracle for the batched path.
pub fn info_nce_reference(z_a: &[Vec<f64>], z_b: &[Vec<f64>], temperature: f64) -> f64 {
    let n = z_a.len();
    let all: Vec<&Vec<f64>> = z_a.iter().chain(z_b.iter()).collect();
    let total = 2 * n;
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    let mut loss = 0.0;
    for i in 0..total {
        let partner = (i + n) % total;
        let pos = dot(all[i], all[partner]) / temperature;
        let mut max = f64::NEG_INFINITY;
        for m in 0..total {
            if m != i {
                max = max.max(dot(all[i], all[m]) / temperature);
            }
        }
        let mut denom = 0.0;
        for m in 0..total {
            if m != i {
                denom += ((dot(all[i], all[m]) / temperature) - max).exp();
            }
        }
        loss += max + denom.ln() - pos;
    }
    loss / total as f64
}
