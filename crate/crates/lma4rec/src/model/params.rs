use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError};
use crate::autodiff::Tensor;
use crate::lbd::BernoulliGate;

pub const CHECKPOINT_FORMAT: &str = "lma4rec.checkpoint.v1";

/// Weights of one encoder block.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlockParams {
    pub attn_ln_gain: Tensor,
    pub attn_ln_bias: Tensor,
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
    pub ffn_ln_gain: Tensor,
    pub ffn_ln_bias: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

/// All trainable state: embedding tables, block weights, and the per-block
/// gate logits. Item row 0 is the padding token and stays pinned at zero;
/// row `num_items + 1` is the mask token used by sequence augmentation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SasrecParams {
    pub config: ModelConfig,
    pub num_items: usize,
    pub item_embedding: Tensor,
    pub position_embedding: Tensor,
    pub blocks: Vec<BlockParams>,
    /// Normalization of the final block output before scoring; without it
    /// the residual stream keeps the raw input embedding and the last input
    /// item outranks its own successor.
    pub final_ln_gain: Tensor,
    pub final_ln_bias: Tensor,
    pub gates: Vec<BernoulliGate>,
}

impl SasrecParams {
    pub fn init(config: ModelConfig, num_items: usize, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let d = config.embed_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("valid std");
        let mut randn = |shape: Vec<usize>| {
            let n: usize = shape.iter().product();
            let data: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
            Tensor::param(shape, data).expect("shape matches data")
        };

        let mut item_embedding = randn(vec![num_items + 2, d]);
        item_embedding.data_mut()[..d].fill(0.0); // padding row stays zero
        let position_embedding = randn(vec![config.max_len, d]);

        let blocks = (0..config.num_blocks)
            .map(|_| BlockParams {
                attn_ln_gain: Tensor::param(vec![d], vec![1.0; d]).unwrap(),
                attn_ln_bias: Tensor::param(vec![d], vec![0.0; d]).unwrap(),
                w_q: randn(vec![d, d]),
                w_k: randn(vec![d, d]),
                w_v: randn(vec![d, d]),
                w_o: randn(vec![d, d]),
                ffn_ln_gain: Tensor::param(vec![d], vec![1.0; d]).unwrap(),
                ffn_ln_bias: Tensor::param(vec![d], vec![0.0; d]).unwrap(),
                w1: randn(vec![d, d]),
                b1: Tensor::param(vec![d], vec![0.0; d]).unwrap(),
                w2: randn(vec![d, d]),
                b2: Tensor::param(vec![d], vec![0.0; d]).unwrap(),
            })
            .collect();

        let gates = (0..config.num_blocks)
            .map(|c| BernoulliGate::new(d, c, config.lbd_init_keep))
            .collect();

        Ok(SasrecParams {
            config,
            num_items,
            item_embedding,
            position_embedding,
            blocks,
            final_ln_gain: Tensor::param(vec![d], vec![1.0; d]).unwrap(),
            final_ln_bias: Tensor::param(vec![d], vec![0.0; d]).unwrap(),
            gates,
        })
    }

    pub fn mask_token(&self) -> u32 {
        self.num_items as u32 + 1
    }

    /// All continuous parameter tensors with stable names, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("item_embedding".into(), &self.item_embedding),
            ("position_embedding".into(), &self.position_embedding),
        ];
        for (c, b) in self.blocks.iter().enumerate() {
            for (field, t) in [
                ("attn_ln_gain", &b.attn_ln_gain),
                ("attn_ln_bias", &b.attn_ln_bias),
                ("w_q", &b.w_q),
                ("w_k", &b.w_k),
                ("w_v", &b.w_v),
                ("w_o", &b.w_o),
                ("ffn_ln_gain", &b.ffn_ln_gain),
                ("ffn_ln_bias", &b.ffn_ln_bias),
                ("w1", &b.w1),
                ("b1", &b.b1),
                ("w2", &b.w2),
                ("b2", &b.b2),
            ] {
                out.push((format!("block{c}.{field}"), t));
            }
        }
        out.push(("final_ln_gain".into(), &self.final_ln_gain));
        out.push(("final_ln_bias".into(), &self.final_ln_bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let (tensors, _) = self.trainables_mut();
        tensors
    }

    /// Continuous tensors and gate-logit buffers in one borrow, for the
    /// optimizer step.
    pub fn trainables_mut(&mut self) -> (Vec<&mut Tensor>, Vec<&mut [f64]>) {
        let SasrecParams {
            item_embedding,
            position_embedding,
            blocks,
            final_ln_gain,
            final_ln_bias,
            gates,
            ..
        } = self;
        let mut tensors: Vec<&mut Tensor> = vec![item_embedding, position_embedding];
        for b in blocks {
            tensors.extend([
                &mut b.attn_ln_gain,
                &mut b.attn_ln_bias,
                &mut b.w_q,
                &mut b.w_k,
                &mut b.w_v,
                &mut b.w_o,
                &mut b.ffn_ln_gain,
                &mut b.ffn_ln_bias,
                &mut b.w1,
                &mut b.b1,
                &mut b.w2,
                &mut b.b2,
            ]);
        }
        tensors.push(final_ln_gain);
        tensors.push(final_ln_bias);
        let logits: Vec<&mut [f64]> = gates.iter_mut().map(|g| g.logits.as_mut_slice()).collect();
        (tensors, logits)
    }

    /// Re-pin the padding row after an optimizer update.
    pub fn zero_padding_row(&mut self) {
        let d = self.config.embed_dim;
        self.item_embedding.data_mut()[..d].fill(0.0);
    }

    /// Mean keep probability per gated layer, for training logs.
    pub fn keep_probability_summary(&self) -> Vec<f64> {
        self.gates.iter().map(|g| g.mean_keep_probability()).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    params: SasrecParams,
}

pub fn save_checkpoint(params: &SasrecParams, path: &Path) -> Result<(), ModelError> {
    let file = CheckpointFile { format: CHECKPOINT_FORMAT.to_string(), params: params.clone() };
    let body = serde_json::to_string(&file).expect("checkpoint serializes");
    std::fs::write(path, body).map_err(|e| ModelError::Io { path: path.display().to_string(), source: e })
}

pub fn load_checkpoint(path: &Path) -> Result<SasrecParams, ModelError> {
    let body = std::fs::read_to_string(path)
        .map_err(|e| ModelError::Io { path: path.display().to_string(), source: e })?;
    let file: CheckpointFile =
        serde_json::from_str(&body).map_err(|e| ModelError::Parse { msg: e.to_string() })?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(ModelError::CheckpointFormat {
            found: file.format,
            expected: CHECKPOINT_FORMAT.to_string(),
        });
    }
    file.params.config.validate()?;
    Ok(file.params)
}
