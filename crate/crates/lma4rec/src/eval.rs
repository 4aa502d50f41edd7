//! Whole-item ranking evaluation: for every user, encode the history, score
//! every real item, rank the held-out target, and aggregate hit ratio and
//! NDCG at the requested cutoffs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::Tape;
use crate::data::{SeqBatch, SplitDataset};
use crate::model::{encode, score_items, GateMode, ModelError, ParamVars, SasrecParams};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("target item {target} outside the catalog of {num_items} items")]
    TargetOutOfRange { target: u32, num_items: usize },
    #[error("evaluation needs at least one user")]
    NoUsers,
}

/// Which held-out item to rank. Validation encodes the training prefix;
/// test encodes the prefix plus the validation item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalTarget {
    Valid,
    Test,
}

impl std::fmt::Display for EvalTarget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EvalTarget::Valid => "valid",
            EvalTarget::Test => "test",
        })
    }
}

/// HR@K and NDCG@K over one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub split: String,
    pub ks: Vec<usize>,
    pub hr: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub users: usize,
}

impl MetricsReport {
    pub fn metric(&self, name: &str, k: usize) -> Option<f64> {
        let i = self.ks.iter().position(|&c| c == k)?;
        match name {
            "hr" => Some(self.hr[i]),
            "ndcg" => Some(self.ndcg[i]),
            _ => None,
        }
    }

    /// Aligned-column text table, one row per metric family.
    pub fn to_text(&self) -> String {
        let mut header = format!("{:>8}", "metric");
        for k in &self.ks {
            header.push_str(&format!(" {:>9}", format!("@{k}")));
        }
        let mut hr_row = format!("{:>8}", "HR");
        let mut ndcg_row = format!("{:>8}", "NDCG");
        for i in 0..self.ks.len() {
            hr_row.push_str(&format!(" {:>9.4}", self.hr[i]));
            ndcg_row.push_str(&format!(" {:>9.4}", self.ndcg[i]));
        }
        format!("split: {} (users: {})\n{header}\n{hr_row}\n{ndcg_row}\n", self.split, self.users)
    }
}

/// 1-based rank of the target among `scores[i - 1]` for items `1..=N`. Ties
/// break by ascending item index, so equal-scored items with a smaller index
/// rank ahead of the target.
pub fn rank_target(scores: &[f64], target: u32) -> Result<usize, EvalError> {
    if target == 0 || target as usize > scores.len() {
        return Err(EvalError::TargetOutOfRange { target, num_items: scores.len() });
    }
    let target_ix = target as usize - 1;
    let target_score = scores[target_ix];
    let mut rank = 1;
    for (i, &s) in scores.iter().enumerate() {
        if s > target_score || (s == target_score && i < target_ix) {
            rank += 1;
        }
    }
    Ok(rank)
}

/// Fraction of users whose target ranked within the top `k`.
pub fn hr_at_k(ranks: &[usize], k: usize) -> f64 {
    assert!(!ranks.is_empty(), "hr_at_k needs at least one rank");
    ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64
}

/// Mean of `1 / log2(rank + 1)` over users whose rank is within `k` (single
/// relevant item per user, so the ideal DCG is 1).
pub fn ndcg_at_k(ranks: &[usize], k: usize) -> f64 {
    assert!(!ranks.is_empty(), "ndcg_at_k needs at least one rank");
    let total: f64 = ranks
        .iter()
        .map(|&r| if r <= k { 1.0 / ((r + 1) as f64).log2() } else { 0.0 })
        .sum();
    total / ranks.len() as f64
}

/// Rank every user's held-out target. Histories are encoded in evaluation
/// mode (expected gates), so the pass is deterministic. With `mask_history`
/// the items already in the encoded history are removed from the candidates.
pub fn evaluate_ranks(
    params: &SasrecParams,
    split: &SplitDataset,
    target: EvalTarget,
    mask_history: bool,
) -> Result<Vec<usize>, EvalError> {
    if split.entries.is_empty() {
        return Err(EvalError::NoUsers);
    }
    let max_len = params.config.max_len;
    let d = params.config.embed_dim;
    let mut ranks = Vec::with_capacity(split.entries.len());

    let chunk_size = 128;
    for chunk in split.entries.chunks(chunk_size) {
        let histories: Vec<Vec<u32>> = chunk
            .iter()
            .map(|e| {
                let mut h = e.train.clone();
                if target == EvalTarget::Test {
                    h.push(e.valid);
                }
                h
            })
            .collect();
        let refs: Vec<&[u32]> = histories.iter().map(|h| h.as_slice()).collect();
        let batch = SeqBatch::from_sequences(&refs, max_len);

        let mut tape = Tape::new();
        let vars = ParamVars::register(&mut tape, params);
        let h = encode(&mut tape, params, &vars, &batch, &GateMode::Expected, None)?;
        let values = tape.value(h);

        for (row, entry) in chunk.iter().enumerate() {
            let last = batch.width - 1; // left padding puts the newest item at the right edge
            let rep = &values[(row * batch.width + last) * d..(row * batch.width + last + 1) * d];
            let mut scores = score_items(rep, &params.item_embedding, params.num_items);
            if mask_history {
                for &it in &histories[row] {
                    if it >= 1 && it as usize <= scores.len() {
                        scores[it as usize - 1] = f64::NEG_INFINITY;
                    }
                }
            }
            let held_out = match target {
                EvalTarget::Valid => entry.valid,
                EvalTarget::Test => entry.test,
            };
            ranks.push(rank_target(&scores, held_out)?);
        }
    }
    Ok(ranks)
}

/// Full report over a split at the given cutoffs.
pub fn evaluate(
    params: &SasrecParams,
    split: &SplitDataset,
    target: EvalTarget,
    ks: &[usize],
    mask_history: bool,
) -> Result<MetricsReport, EvalError> {
    let ranks = evaluate_ranks(params, split, target, mask_history)?;
    Ok(MetricsReport {
        split: target.to_string(),
        ks: ks.to_vec(),
        hr: ks.iter().map(|&k| hr_at_k(&ranks, k)).collect(),
        ndcg: ks.iter().map(|&k| ndcg_at_k(&ranks, k)).collect(),
        users: ranks.len(),
    })
}

pub const DEFAULT_KS: [usize; 3] = [5, 10, 20];
