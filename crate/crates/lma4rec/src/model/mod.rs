//! The gated self-attention encoder: item+position embeddings, causal
//! multi-head attention blocks, and position-wise feed-forward layers whose
//! outputs pass through the learnable Bernoulli gates of [`crate::lbd`].

mod encoder;
mod params;

pub use encoder::{attention_block, encode, ffn_block, score_items, BlockVars, GateMode, ParamVars};
pub use params::{
    load_checkpoint, save_checkpoint, BlockParams, SasrecParams, CHECKPOINT_FORMAT,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::TapeError;

/// Epsilon for every layer normalization in the encoder.
pub const LAYER_NORM_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error("invalid model config: {msg}")]
    Config { msg: String },
    #[error("checkpoint format mismatch: found {found:?}, expected {expected:?}")]
    CheckpointFormat { found: String, expected: String },
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("checkpoint parse error: {msg}")]
    Parse { msg: String },
}

/// Encoder hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub num_heads: usize,
    pub num_blocks: usize,
    pub max_len: usize,
    /// Fixed (non-learnable) dropout on attention weights; the learnable
    /// gates are the only stochastic regularizer unless this is raised.
    pub attention_dropout_rate: f64,
    /// Fixed dropout on the summed input embeddings.
    pub embed_dropout_rate: f64,
    /// Initial keep probability of every Bernoulli gate.
    pub lbd_init_keep: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 64,
            num_heads: 2,
            num_blocks: 2,
            max_len: 50,
            attention_dropout_rate: 0.0,
            embed_dropout_rate: 0.0,
            lbd_init_keep: 0.9,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.embed_dim == 0 || self.embed_dim % self.num_heads != 0 {
            return Err(ModelError::Config {
                msg: format!(
                    "embed_dim {} must be a positive multiple of num_heads {}",
                    self.embed_dim, self.num_heads
                ),
            });
        }
        if self.num_blocks == 0 || self.max_len == 0 {
            return Err(ModelError::Config { msg: "num_blocks and max_len must be positive".into() });
        }
        if !(self.lbd_init_keep > 0.0 && self.lbd_init_keep < 1.0) {
            return Err(ModelError::Config {
                msg: format!("lbd_init_keep must lie in (0, 1), got {}", self.lbd_init_keep),
            });
        }
        for (name, rate) in [
            ("attention_dropout_rate", self.attention_dropout_rate),
            ("embed_dropout_rate", self.embed_dropout_rate),
        ] {
            if !(0.0..1.0).contains(&rate) {
                return Err(ModelError::Config { msg: format!("{name} must lie in [0, 1), got {rate}") });
            }
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }
}
