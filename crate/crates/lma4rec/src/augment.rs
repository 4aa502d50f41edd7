//! Stochastic sequence augmentation: three random operators (crop, mask,
//! reorder) and two correlation-informed ones (substitute, insert), plus the
//! windowed co-occurrence table that powers the informative pair and the
//! length-sensitive operator selection rule.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub crop_ratio: f64,
    pub mask_ratio: f64,
    pub reorder_ratio: f64,
    pub substitute_ratio: f64,
    pub insert_ratio: f64,
    /// Sequences at or below this length only see the informative operators,
    /// which never destroy what little signal a short sequence carries.
    pub short_sequence_threshold: usize,
    /// Co-occurrence window for the correlation table.
    pub correlation_window: usize,
    /// Correlates retained per item.
    pub correlation_top_k: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            crop_ratio: 0.6,
            mask_ratio: 0.3,
            reorder_ratio: 0.3,
            substitute_ratio: 0.3,
            insert_ratio: 0.3,
            short_sequence_threshold: 4,
            correlation_window: 5,
            correlation_top_k: 10,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, r) in [
            ("crop_ratio", self.crop_ratio),
            ("mask_ratio", self.mask_ratio),
            ("reorder_ratio", self.reorder_ratio),
            ("substitute_ratio", self.substitute_ratio),
            ("insert_ratio", self.insert_ratio),
        ] {
            if !(r > 0.0 && r <= 1.0) {
                return Err(format!("{name} must lie in (0, 1], got {r}"));
            }
        }
        if self.short_sequence_threshold == 0 {
            return Err("short_sequence_threshold must be at least 1".into());
        }
        if self.correlation_window < 2 || self.correlation_top_k == 0 {
            return Err("correlation_window must be >= 2 and correlation_top_k >= 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AugmentOp {
    Crop,
    Mask,
    Reorder,
    Substitute,
    Insert,
    Identity,
}

impl std::fmt::Display for AugmentOp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            AugmentOp::Crop => "crop",
            AugmentOp::Mask => "mask",
            AugmentOp::Reorder => "reorder",
            AugmentOp::Substitute => "substitute",
            AugmentOp::Insert => "insert",
            AugmentOp::Identity => "identity",
        };
        f.write_str(name)
    }
}

/// An operator application: the produced sequence, which operator ran, and
/// whether a precondition forced the identity instead.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentOutcome {
    pub seq: Vec<u32>,
    pub op: AugmentOp,
    pub skipped: bool,
}

/// Ranked item-to-item correlations built from the training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    /// `top[i]` holds the ranked `(correlate, score)` list of item `i + 1`.
    top: Vec<Vec<(u32, f64)>>,
}

impl CorrelationTable {
    pub fn empty(num_items: usize) -> Self {
        CorrelationTable { top: vec![Vec::new(); num_items] }
    }

    pub fn correlates(&self, item: u32) -> &[(u32, f64)] {
        &self.top[item as usize - 1]
    }

    pub fn top_correlate(&self, item: u32) -> Option<u32> {
        self.top[item as usize - 1].first().map(|&(i, _)| i)
    }

    /// Tab-separated `(item, correlate, score)` rows.
    pub fn write_tsv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        for (i, list) in self.top.iter().enumerate() {
            for (correlate, score) in list {
                writeln!(w, "{}\t{}\t{}", i + 1, correlate, score)?;
            }
        }
        Ok(())
    }
}

/// Windowed co-occurrence counts normalized to cosine similarity. Two items
/// co-occur when they appear within `window` positions of each other in one
/// sequence; the similarity of a co-occurring pair is the cosine between
/// their co-occurrence count vectors. Items that never co-occur score zero
/// and never appear in each other's lists; an item never lists itself.
pub fn build_correlation(
    train_sequences: &[&[u32]],
    num_items: usize,
    window: usize,
    top_k: usize,
) -> CorrelationTable {
    // ordered maps keep float accumulation order, and therefore the table,
    // identical across processes
    let mut counts: Vec<BTreeMap<u32, f64>> = vec![BTreeMap::new(); num_items + 1];
    for seq in train_sequences {
        for i in 0..seq.len() {
            for j in i + 1..seq.len().min(i + window) {
                let (a, b) = (seq[i], seq[j]);
                *counts[a as usize].entry(b).or_default() += 1.0;
                if a != b {
                    *counts[b as usize].entry(a).or_default() += 1.0;
                }
            }
        }
    }
    let norms: Vec<f64> = (0..=num_items)
        .map(|i| counts[i].values().map(|c| c * c).sum::<f64>().sqrt())
        .collect();

    let mut top = Vec::with_capacity(num_items);
    for item in 1..=num_items as u32 {
        let mine = &counts[item as usize];
        let mut scored: Vec<(u32, f64)> = mine
            .keys()
            .filter(|&&other| other != item)
            .map(|&other| {
                let theirs = &counts[other as usize];
                let (small, large) = if mine.len() <= theirs.len() { (mine, theirs) } else { (theirs, mine) };
                let dot: f64 =
                    small.iter().filter_map(|(k, v)| large.get(k).map(|w| v * w)).sum();
                let denom = norms[item as usize] * norms[other as usize];
                (other, if denom > 0.0 { dot / denom } else { 0.0 })
            })
            .filter(|&(_, s)| s > 0.0)
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        scored.truncate(top_k);
        top.push(scored);
    }
    CorrelationTable { top }
}

/// Contiguous subsequence of length `max(1, floor(ratio * len))` at a
/// uniformly chosen start. Sequences shorter than 2 come back unchanged with
/// the skip flag set.
pub fn crop(seq: &[u32], ratio: f64, rng: &mut ChaCha8Rng) -> AugmentOutcome {
    if seq.len() < 2 {
        return AugmentOutcome { seq: seq.to_vec(), op: AugmentOp::Crop, skipped: true };
    }
    let take = ((ratio * seq.len() as f64).floor() as usize).max(1).min(seq.len());
    let start = rng.random_range(0..=seq.len() - take);
    AugmentOutcome { seq: seq[start..start + take].to_vec(), op: AugmentOp::Crop, skipped: false }
}

/// Replace `floor(ratio * len)` distinct positions with the mask token.
pub fn mask_items(seq: &[u32], ratio: f64, mask_token: u32, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let count = (ratio * seq.len() as f64).floor() as usize;
    let mut out = seq.to_vec();
    for &p in choose_positions(seq.len(), count, rng).iter() {
        out[p] = mask_token;
    }
    out
}

/// Shuffle one contiguous window of length `floor(ratio * len)` at a uniform
/// start; everything outside the window is untouched.
pub fn reorder(seq: &[u32], ratio: f64, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let mut out = seq.to_vec();
    let len = (ratio * seq.len() as f64).floor() as usize;
    if len < 2 {
        return out;
    }
    let start = rng.random_range(0..=seq.len() - len);
    out[start..start + len].shuffle(rng);
    out
}

/// Replace `floor(ratio * len)` distinct positions with the top correlate of
/// the item they hold; positions whose item has no correlate stay unchanged.
pub fn substitute(
    seq: &[u32],
    ratio: f64,
    table: &CorrelationTable,
    rng: &mut ChaCha8Rng,
) -> Vec<u32> {
    let count = (ratio * seq.len() as f64).floor() as usize;
    let mut out = seq.to_vec();
    for &p in choose_positions(seq.len(), count, rng).iter() {
        if let Some(correlate) = table.top_correlate(seq[p]) {
            out[p] = correlate;
        }
    }
    out
}

/// After each of `floor(ratio * len)` chosen positions, insert the top
/// correlate of the item at that position; the result keeps the original
/// items in order and is truncated to the most recent `max_len`.
pub fn insert(
    seq: &[u32],
    ratio: f64,
    table: &CorrelationTable,
    max_len: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<u32> {
    let count = (ratio * seq.len() as f64).floor() as usize;
    let chosen = choose_positions(seq.len(), count, rng);
    let mut out = Vec::with_capacity(seq.len() + count);
    for (p, &item) in seq.iter().enumerate() {
        out.push(item);
        if chosen.binary_search(&p).is_ok() {
            if let Some(correlate) = table.top_correlate(item) {
                out.push(correlate);
            }
        }
    }
    if out.len() > max_len {
        out.drain(..out.len() - max_len);
    }
    out
}

/// Draw one operator according to the length rule: short sequences only get
/// the informative operators, longer ones draw uniformly among all five.
pub fn select_augmentation(
    seq: &[u32],
    cfg: &AugmentConfig,
    table: &CorrelationTable,
    mask_token: u32,
    max_len: usize,
    rng: &mut ChaCha8Rng,
) -> AugmentOutcome {
    let ops: &[AugmentOp] = if seq.len() <= cfg.short_sequence_threshold {
        &[AugmentOp::Substitute, AugmentOp::Insert]
    } else {
        &[AugmentOp::Crop, AugmentOp::Mask, AugmentOp::Reorder, AugmentOp::Substitute, AugmentOp::Insert]
    };
    let op = ops[rng.random_range(0..ops.len())];
    apply_operator(op, seq, cfg, table, mask_token, max_len, rng)
}

pub fn apply_operator(
    op: AugmentOp,
    seq: &[u32],
    cfg: &AugmentConfig,
    table: &CorrelationTable,
    mask_token: u32,
    max_len: usize,
    rng: &mut ChaCha8Rng,
) -> AugmentOutcome {
    let done = |seq: Vec<u32>| AugmentOutcome { seq, op, skipped: false };
    match op {
        AugmentOp::Crop => crop(seq, cfg.crop_ratio, rng),
        AugmentOp::Mask => done(mask_items(seq, cfg.mask_ratio, mask_token, rng)),
        AugmentOp::Reorder => done(reorder(seq, cfg.reorder_ratio, rng)),
        AugmentOp::Substitute => done(substitute(seq, cfg.substitute_ratio, table, rng)),
        AugmentOp::Insert => done(insert(seq, cfg.insert_ratio, table, max_len, rng)),
        AugmentOp::Identity => AugmentOutcome { seq: seq.to_vec(), op, skipped: false },
    }
}

/// `count` distinct positions in `0..len`, sorted ascending (partial
/// Fisher-Yates).
fn choose_positions(len: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let count = count.min(len);
    let mut positions: Vec<usize> = (0..len).collect();
    for i in 0..count {
        let j = rng.random_range(i..len);
        positions.swap(i, j);
    }
    positions.truncate(count);
    positions.sort_unstable();
    positions
}
