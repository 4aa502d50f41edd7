//! Joint training loop: per batch, one recommendation pass and two augmented
//! view passes share an optimizer step. Gate logits get their gradients from
//! the antithetic two-evaluation estimator in [`crate::lbd`]; everything else
//! backpropagates through the tape with the sampled masks frozen.

mod adam;

pub use adam::{Adam, AdamUpdate};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::{build_correlation, select_augmentation, AugmentConfig, AugmentOp, CorrelationTable};
use crate::autodiff::{Tape, TapeError};
use crate::data::{make_batches, Batch, SeqBatch, SplitDataset};
use crate::eval::{evaluate, EvalError, EvalTarget, MetricsReport, DEFAULT_KS};
use crate::lbd::{arm_gradient, sample_gate, ArmSample};
use crate::loss::{info_nce, joint_loss, next_item_loss, pool_last_valid, LossWeights, ViewPair};
use crate::model::{encode, GateMode, ModelConfig, ModelError, ParamVars, SasrecParams};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tape(#[from] TapeError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("non-finite {component} loss; step aborted")]
    NonFinite { component: &'static str },
    #[error("invalid train config: {msg}")]
    Config { msg: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a new best validation NDCG@10 before stopping.
    pub patience: usize,
    pub weights: LossWeights,
    /// Step-size multiplier for the gate logits relative to the base rate.
    pub gate_lr_multiplier: f64,
    /// Global-norm gradient clip; `None` disables it.
    pub clip_norm: Option<f64>,
    /// Drop the contrastive term and skip view construction entirely.
    pub no_ssl: bool,
    /// Freeze the gates at their expected value; no logit gradients.
    pub no_lma: bool,
    /// Replace both augmentation draws with the identity.
    pub no_da: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 256,
            max_epochs: 200,
            patience: 40,
            weights: LossWeights::default(),
            gate_lr_multiplier: 1.0,
            clip_norm: Some(5.0),
            no_ssl: false,
            no_lma: false,
            no_da: false,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.learning_rate <= 0.0 {
            return Err(TrainError::Config { msg: format!("learning_rate must be positive, got {}", self.learning_rate) });
        }
        if self.patience == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(TrainError::Config { msg: "patience, batch_size, and max_epochs must be at least 1".into() });
        }
        if self.weights.lambda < 0.0 {
            return Err(TrainError::Config { msg: format!("lambda must be non-negative, got {}", self.weights.lambda) });
        }
        if self.weights.temperature <= 0.0 {
            return Err(TrainError::Config { msg: format!("temperature must be positive, got {}", self.weights.temperature) });
        }
        Ok(())
    }
}

/// Loss and pass accounting for one optimizer step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub l_rs: f64,
    pub l_ssl: Option<f64>,
    pub l_total: f64,
    /// Encoder passes in the true-mask loss evaluation (1 without the
    /// contrastive term, 3 with it).
    pub stochastic_forward_passes: u32,
    /// Full-loss evaluations under the anti masks (0 when gates are frozen).
    pub antithetic_evals: u32,
    pub backward_passes: u32,
    /// Operator tags drawn for the two views of each sequence, when views ran.
    pub view_ops: Vec<(AugmentOp, AugmentOp)>,
}

pub struct Trainer {
    pub params: SasrecParams,
    pub cfg: TrainConfig,
    pub augment_cfg: AugmentConfig,
    pub table: CorrelationTable,
    adam: Adam,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(
        params: SasrecParams,
        cfg: TrainConfig,
        augment_cfg: AugmentConfig,
        table: CorrelationTable,
    ) -> Result<Self, TrainError> {
        cfg.validate()?;
        let adam = Adam::new(cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Trainer { params, cfg, augment_cfg, table, adam, rng })
    }

    /// One optimizer step over a batch: encode the inputs and (unless
    /// disabled) two augmented views under independently sampled gate masks,
    /// backpropagate the joint loss with all masks frozen, re-evaluate it
    /// once under the anti masks for the gate-logit gradients, and apply one
    /// Adam update to everything.
    pub fn train_step(&mut self, batch: &Batch) -> Result<StepStats, TrainError> {
        let use_lma = !self.cfg.no_lma;
        // the contrastive loss needs in-batch negatives, so a trailing
        // single-row batch trains on the recommendation term alone
        let use_ssl = !self.cfg.no_ssl && batch.rows() >= 2;
        let lambda = self.cfg.weights.lambda;
        let max_len = self.params.config.max_len;

        let mut view_ops = Vec::new();
        let views = if use_ssl {
            let mask_token = self.params.mask_token();
            let mut rows_a = Vec::with_capacity(batch.rows());
            let mut rows_b = Vec::with_capacity(batch.rows());
            for prefix in &batch.prefixes {
                if self.cfg.no_da {
                    view_ops.push((AugmentOp::Identity, AugmentOp::Identity));
                    rows_a.push(prefix.clone());
                    rows_b.push(prefix.clone());
                } else {
                    let a = select_augmentation(prefix, &self.augment_cfg, &self.table, mask_token, max_len, &mut self.rng);
                    let b = select_augmentation(prefix, &self.augment_cfg, &self.table, mask_token, max_len, &mut self.rng);
                    view_ops.push((a.op, b.op));
                    rows_a.push(a.seq);
                    rows_b.push(b.seq);
                }
            }
            let refs_a: Vec<&[u32]> = rows_a.iter().map(|s| s.as_slice()).collect();
            let refs_b: Vec<&[u32]> = rows_b.iter().map(|s| s.as_slice()).collect();
            Some((SeqBatch::from_sequences(&refs_a, max_len), SeqBatch::from_sequences(&refs_b, max_len)))
        } else {
            None
        };

        // one gate draw per (pass, layer); pass 0 is the recommendation pass
        let num_passes = if use_lma { if use_ssl { 3 } else { 1 } } else { 0 };
        let samples: Vec<Vec<ArmSample>> = (0..num_passes)
            .map(|_| self.params.gates.iter().map(|g| sample_gate(g, &mut self.rng)).collect())
            .collect();
        let masks_of = |which: fn(&ArmSample) -> &Vec<f64>| -> Vec<Vec<Vec<f64>>> {
            samples.iter().map(|pass| pass.iter().map(|s| which(s).clone()).collect()).collect()
        };
        let true_masks = masks_of(|s| &s.mask_true);
        let anti_masks = masks_of(|s| &s.mask_anti);

        // fixed-dropout draws must coincide between the two evaluations, so
        // both run from clones of the same rng state
        let dropout_snapshot = self.rng.clone();

        let evaluate_losses = |params: &SasrecParams,
                               masks: &[Vec<Vec<f64>>],
                               with_tape: bool|
         -> Result<(f64, Option<f64>, f64, Option<(Tape, ParamVars)>), TrainError> {
            let mut tape = Tape::new();
            let vars = ParamVars::register(&mut tape, params);
            let mut dropout_rng = dropout_snapshot.clone();
            let gate_mode = |p: usize| -> GateMode<'_> {
                if use_lma { GateMode::Masks(&masks[p]) } else { GateMode::Expected }
            };
            let h = encode(&mut tape, params, &vars, &batch.inputs, &gate_mode(0), Some(&mut dropout_rng))?;
            let l_rs = next_item_loss(&mut tape, h, &vars, batch)?;
            let (l_ssl, l_total) = match &views {
                Some((view_a, view_b)) => {
                    let ha = encode(&mut tape, params, &vars, view_a, &gate_mode(1), Some(&mut dropout_rng))?;
                    let za = pool_last_valid(&mut tape, ha, &view_a.last_valid_positions())?;
                    let hb = encode(&mut tape, params, &vars, view_b, &gate_mode(2), Some(&mut dropout_rng))?;
                    let zb = pool_last_valid(&mut tape, hb, &view_b.last_valid_positions())?;
                    let l_ssl = info_nce(&mut tape, &ViewPair { z_a: za, z_b: zb }, self.cfg.weights.temperature)?;
                    let l_total = joint_loss(&mut tape, l_rs, l_ssl, lambda)?;
                    (Some(l_ssl), l_total)
                }
                None => (None, l_rs),
            };
            let rs_value = tape.scalar_value(l_rs);
            let ssl_value = l_ssl.map(|v| tape.scalar_value(v));
            let total_value = tape.scalar_value(l_total);
            if !rs_value.is_finite() {
                return Err(TrainError::NonFinite { component: "recommendation" });
            }
            if let Some(v) = ssl_value {
                if !v.is_finite() {
                    return Err(TrainError::NonFinite { component: "contrastive" });
                }
            }
            if !total_value.is_finite() {
                return Err(TrainError::NonFinite { component: "total" });
            }
            if with_tape {
                tape.backward(l_total)?;
                Ok((rs_value, ssl_value, total_value, Some((tape, vars))))
            } else {
                Ok((rs_value, ssl_value, total_value, None))
            }
        };

        let (rs_value, ssl_value, total_value, taped) =
            evaluate_losses(&self.params, &true_masks, true)?;
        let (tape, vars) = taped.expect("true pass keeps its tape");
        let mut grads = vars.collect_grads(&tape);

        // logit gradients from the antithetic evaluation; samples of the same
        // layer across passes share the logits, so their estimates add up
        let mut gate_grads: Vec<Vec<f64>> =
            self.params.gates.iter().map(|g| vec![0.0; g.width()]).collect();
        let mut antithetic_evals = 0;
        if use_lma {
            let (_, _, anti_total, _) = evaluate_losses(&self.params, &anti_masks, false)?;
            antithetic_evals = 1;
            for pass in &samples {
                let per_sample = arm_gradient(total_value, anti_total, pass);
                for (sample, grad) in pass.iter().zip(per_sample) {
                    let acc = &mut gate_grads[sample.layer_index];
                    for (a, g) in acc.iter_mut().zip(grad) {
                        *a += g;
                    }
                }
            }
        }

        if let Some(limit) = self.cfg.clip_norm {
            clip_global_norm(&mut grads, &mut gate_grads, limit);
        }

        let gate_scale = self.cfg.gate_lr_multiplier;
        {
            let (tensors, logits) = self.params.trainables_mut();
            let mut updates: Vec<AdamUpdate> = Vec::new();
            for (tensor, grad) in tensors.into_iter().zip(grads.iter()) {
                updates.push(AdamUpdate { values: tensor.data_mut(), grad, lr_scale: 1.0 });
            }
            for (buf, grad) in logits.into_iter().zip(gate_grads.iter()) {
                updates.push(AdamUpdate { values: buf, grad, lr_scale: gate_scale });
            }
            self.adam.step(&mut updates);
        }
        self.params.zero_padding_row();

        Ok(StepStats {
            l_rs: rs_value,
            l_ssl: ssl_value,
            l_total: total_value,
            stochastic_forward_passes: if use_ssl { 3 } else { 1 },
            antithetic_evals,
            backward_passes: 1,
            view_ops,
        })
    }
}

/// Scale every gradient buffer so the joint global norm stays within `limit`.
fn clip_global_norm(grads: &mut [Vec<f64>], gate_grads: &mut [Vec<f64>], limit: f64) {
    let sq: f64 = grads
        .iter()
        .chain(gate_grads.iter())
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum();
    let norm = sq.sqrt();
    if norm > limit {
        let scale = limit / norm;
        for g in grads.iter_mut().chain(gate_grads.iter_mut()) {
            for v in g.iter_mut() {
                *v *= scale;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassCounts {
    pub stochastic_forward: u64,
    pub antithetic: u64,
    pub backward: u64,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_rs: f64,
    pub l_ssl: Option<f64>,
    pub l_total: f64,
    pub val_ks: Vec<usize>,
    pub val_hr: Vec<f64>,
    pub val_ndcg: Vec<f64>,
    /// Mean keep probability per gated layer after the epoch's updates.
    pub keep_probabilities: Vec<f64>,
    pub passes: PassCounts,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    /// JSON-lines rendering, one epoch per line.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).expect("epoch record serializes"));
            out.push('\n');
        }
        out
    }
}

pub struct FitOutcome {
    /// Parameters of the best validation epoch.
    pub params: SasrecParams,
    pub log: TrainLog,
    pub best_epoch: usize,
    pub best_val_ndcg10: f64,
    pub test_report: MetricsReport,
}

/// Train until `max_epochs` or until validation NDCG@10 stops improving for
/// `patience` epochs; return the checkpoint of the best epoch together with
/// its test-split report.
pub fn fit(
    split: &SplitDataset,
    num_items: usize,
    model_cfg: ModelConfig,
    augment_cfg: AugmentConfig,
    train_cfg: TrainConfig,
) -> Result<FitOutcome, TrainError> {
    train_cfg.validate()?;
    augment_cfg.validate().map_err(|msg| TrainError::Config { msg })?;
    let prefixes: Vec<&[u32]> = split.entries.iter().map(|e| e.train.as_slice()).collect();
    let table = build_correlation(
        &prefixes,
        num_items,
        augment_cfg.correlation_window,
        augment_cfg.correlation_top_k,
    );
    let params = SasrecParams::init(model_cfg, num_items, train_cfg.seed)?;
    let mut trainer = Trainer::new(params, train_cfg, augment_cfg, table)?;

    let mut log = TrainLog::default();
    let mut best: Option<(usize, f64, SasrecParams)> = None;
    for epoch in 1..=trainer.cfg.max_epochs {
        let started = std::time::Instant::now();
        let batches = make_batches(
            split,
            trainer.cfg.batch_size,
            trainer.params.config.max_len,
            num_items,
            trainer.cfg.seed,
            epoch,
        );
        let mut sums = (0.0, 0.0, 0.0);
        let mut ssl_steps = 0usize;
        let mut passes = PassCounts { stochastic_forward: 0, antithetic: 0, backward: 0 };
        let steps = batches.len();
        for batch in &batches {
            let stats = trainer.train_step(batch)?;
            sums.0 += stats.l_rs;
            if let Some(s) = stats.l_ssl {
                sums.1 += s;
                ssl_steps += 1;
            }
            sums.2 += stats.l_total;
            passes.stochastic_forward += stats.stochastic_forward_passes as u64;
            passes.antithetic += stats.antithetic_evals as u64;
            passes.backward += stats.backward_passes as u64;
        }

        let val = evaluate(&trainer.params, split, EvalTarget::Valid, &DEFAULT_KS, false)?;
        let ndcg10 = val.metric("ndcg", 10).expect("default cutoffs include 10");
        log.epochs.push(EpochRecord {
            epoch,
            l_rs: sums.0 / steps as f64,
            l_ssl: if ssl_steps > 0 { Some(sums.1 / ssl_steps as f64) } else { None },
            l_total: sums.2 / steps as f64,
            val_ks: val.ks.clone(),
            val_hr: val.hr.clone(),
            val_ndcg: val.ndcg.clone(),
            keep_probabilities: trainer.params.keep_probability_summary(),
            passes,
            wall_time_s: started.elapsed().as_secs_f64(),
        });

        let improved = best.as_ref().map_or(true, |(_, b, _)| ndcg10 > *b);
        if improved {
            best = Some((epoch, ndcg10, trainer.params.clone()));
        }
        let (best_epoch, ..) = best.as_ref().expect("set on first epoch");
        if epoch - best_epoch >= trainer.cfg.patience {
            break;
        }
    }

    let (best_epoch, best_val_ndcg10, params) = best.expect("at least one epoch ran");
    let test_report = evaluate(&params, split, EvalTarget::Test, &DEFAULT_KS, false)?;
    Ok(FitOutcome { params, log, best_epoch, best_val_ndcg10, test_report })
}

/// One grid point of the hyperparameter sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub hidden_size: usize,
    pub hr: Vec<f64>,
    pub ndcg: Vec<f64>,
}

/// A sweep result: the metric row plus the full training log of its run.
pub struct SweepPoint {
    pub row: SweepRow,
    pub log: TrainLog,
}

/// Run `fit` for every (lambda, hidden size) grid point. Each point gets a
/// seed derived from its values, so results do not depend on grid order.
pub fn sweep(
    split: &SplitDataset,
    num_items: usize,
    base_model: &ModelConfig,
    augment_cfg: &AugmentConfig,
    base_train: &TrainConfig,
    lambdas: &[f64],
    hidden_sizes: &[usize],
) -> Result<Vec<SweepPoint>, TrainError> {
    let mut points = Vec::new();
    for &lambda in lambdas {
        for &hidden in hidden_sizes {
            let mut model_cfg = base_model.clone();
            model_cfg.embed_dim = hidden;
            let mut train_cfg = base_train.clone();
            train_cfg.weights.lambda = lambda;
            train_cfg.seed = base_train
                .seed
                .wrapping_add((hidden as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
                .wrapping_add(lambda.to_bits().rotate_left(17));
            let outcome = fit(split, num_items, model_cfg, augment_cfg.clone(), train_cfg)?;
            points.push(SweepPoint {
                row: SweepRow {
                    lambda,
                    hidden_size: hidden,
                    hr: outcome.test_report.hr.clone(),
                    ndcg: outcome.test_report.ndcg.clone(),
                },
                log: outcome.log,
            });
        }
    }
    Ok(points)
}

/// CSV rendering of sweep results in the documented column layout.
pub fn sweep_to_csv(points: &[SweepPoint]) -> String {
    let mut out = String::from("lambda,hidden_size,HR@5,HR@10,HR@20,NDCG@5,NDCG@10,NDCG@20\n");
    for SweepPoint { row: r, .. } in points {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.lambda, r.hidden_size, r.hr[0], r.hr[1], r.hr[2], r.ndcg[0], r.ndcg[1], r.ndcg[2]
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{leave_one_out_split, UserSequence};

    fn toy_split(users: u32, items: usize, len: usize) -> SplitDataset {
        let seqs: Vec<UserSequence> = (0..users)
            .map(|u| UserSequence {
                user: u,
                items: (0..len).map(|t| ((u as usize * 3 + t) % items + 1) as u32).collect(),
            })
            .collect();
        leave_one_out_split(seqs).unwrap()
    }

    fn tiny_model() -> ModelConfig {
        ModelConfig { embed_dim: 8, num_heads: 2, num_blocks: 2, max_len: 10, ..Default::default() }
    }

    fn quick_train(cfg: TrainConfig) -> (Trainer, Batch) {
        let split = toy_split(6, 12, 7);
        let params = SasrecParams::init(tiny_model(), 12, cfg.seed).unwrap();
        let prefixes: Vec<&[u32]> = split.entries.iter().map(|e| e.train.as_slice()).collect();
        let table = build_correlation(&prefixes, 12, 5, 10);
        let batch = make_batches(&split, 6, 10, 12, cfg.seed, 1).remove(0);
        (Trainer::new(params, cfg, AugmentConfig::default(), table).unwrap(), batch)
    }

    #[test]
    fn full_step_counts_three_forward_one_antithetic_one_backward() {
        let (mut trainer, batch) = quick_train(TrainConfig::default());
        let stats = trainer.train_step(&batch).unwrap();
        assert_eq!(stats.stochastic_forward_passes, 3);
        assert_eq!(stats.antithetic_evals, 1);
        assert_eq!(stats.backward_passes, 1);
        assert!(stats.l_ssl.is_some());
        assert_eq!(stats.view_ops.len(), batch.rows());
    }

    #[test]
    fn joint_loss_identity_holds_at_every_step() {
        let (mut trainer, batch) = quick_train(TrainConfig::default());
        for _ in 0..5 {
            let stats = trainer.train_step(&batch).unwrap();
            let expect = stats.l_rs + trainer.cfg.weights.lambda * stats.l_ssl.unwrap();
            assert!((stats.l_total - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn no_ssl_skips_views_entirely() {
        let cfg = TrainConfig { no_ssl: true, ..Default::default() };
        let (mut trainer, batch) = quick_train(cfg);
        let stats = trainer.train_step(&batch).unwrap();
        assert_eq!(stats.stochastic_forward_passes, 1);
        assert_eq!(stats.antithetic_evals, 1); // gates still train on l_rs
        assert!(stats.l_ssl.is_none());
        assert!(stats.view_ops.is_empty());
        assert_eq!(stats.l_total, stats.l_rs);
    }

    #[test]
    fn no_lma_freezes_the_gate_logits() {
        let cfg = TrainConfig { no_lma: true, ..Default::default() };
        let (mut trainer, batch) = quick_train(cfg);
        let before: Vec<Vec<f64>> = trainer.params.gates.iter().map(|g| g.logits.clone()).collect();
        let stats = trainer.train_step(&batch).unwrap();
        let after: Vec<Vec<f64>> = trainer.params.gates.iter().map(|g| g.logits.clone()).collect();
        assert_eq!(before, after, "frozen gates must not move");
        assert_eq!(stats.antithetic_evals, 0);
        assert_eq!(stats.stochastic_forward_passes, 3);
    }

    #[test]
    fn no_da_views_are_identity_tagged() {
        let cfg = TrainConfig { no_da: true, ..Default::default() };
        let (mut trainer, batch) = quick_train(cfg);
        let stats = trainer.train_step(&batch).unwrap();
        assert!(stats
            .view_ops
            .iter()
            .all(|&(a, b)| a == AugmentOp::Identity && b == AugmentOp::Identity));
        assert!(stats.l_ssl.is_some());
    }

    #[test]
    fn gate_logits_move_under_the_full_objective() {
        let (mut trainer, batch) = quick_train(TrainConfig::default());
        let before: Vec<f64> = trainer.params.gates[0].logits.clone();
        let mut moved = false;
        for _ in 0..10 {
            trainer.train_step(&batch).unwrap();
            if trainer.params.gates[0].logits != before {
                moved = true;
                break;
            }
        }
        assert!(moved, "gate logits never received a gradient");
    }

    #[test]
    fn steps_are_deterministic_for_a_seed() {
        let run = || {
            let (mut trainer, batch) = quick_train(TrainConfig::default());
            for _ in 0..3 {
                trainer.train_step(&batch).unwrap();
            }
            (
                trainer.params.item_embedding.data().to_vec(),
                trainer.params.gates[0].logits.clone(),
            )
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn padding_row_stays_zero_through_updates() {
        let (mut trainer, batch) = quick_train(TrainConfig::default());
        for _ in 0..5 {
            trainer.train_step(&batch).unwrap();
        }
        let d = trainer.params.config.embed_dim;
        assert!(trainer.params.item_embedding.data()[..d].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fit_stops_after_patience_without_improvement() {
        // a vanishing learning rate freezes validation, so the first epoch
        // stays the best and patience 1 stops after the second evaluation
        let split = toy_split(5, 10, 6);
        let cfg = TrainConfig {
            max_epochs: 50,
            patience: 1,
            learning_rate: 1e-12,
            batch_size: 8,
            ..Default::default()
        };
        let outcome = fit(&split, 10, tiny_model(), AugmentConfig::default(), cfg).unwrap();
        assert_eq!(outcome.log.epochs.len(), 2);
        assert_eq!(outcome.best_epoch, 1);
    }

    #[test]
    fn fit_returns_the_argmax_checkpoint() {
        let split = toy_split(8, 10, 7);
        let cfg = TrainConfig { max_epochs: 4, batch_size: 8, ..Default::default() };
        let outcome = fit(&split, 10, tiny_model(), AugmentConfig::default(), cfg).unwrap();
        for e in &outcome.log.epochs {
            let ndcg10 = e.val_ndcg[e.val_ks.iter().position(|&k| k == 10).unwrap()];
            assert!(outcome.best_val_ndcg10 >= ndcg10);
        }
        // the stored checkpoint re-evaluates to exactly the recorded best
        let re = evaluate(&outcome.params, &split, EvalTarget::Valid, &DEFAULT_KS, false).unwrap();
        assert_eq!(re.metric("ndcg", 10).unwrap(), outcome.best_val_ndcg10);
        // the log carries keep probabilities and pass counts per epoch
        assert!(outcome.log.epochs.iter().all(|e| e.keep_probabilities.len() == 2));
        let jl = outcome.log.to_json_lines();
        assert_eq!(jl.lines().count(), outcome.log.epochs.len());
        assert!(jl.contains("keep_probabilities"));
    }

    #[test]
    fn sweep_emits_one_row_per_grid_point() {
        let split = toy_split(5, 10, 6);
        let base_train = TrainConfig { max_epochs: 1, batch_size: 8, ..Default::default() };
        let points = sweep(
            &split,
            10,
            &tiny_model(),
            &AugmentConfig::default(),
            &base_train,
            &[0.0, 0.1],
            &[8],
        )
        .unwrap();
        assert_eq!(points.len(), 2);
        assert!(points.iter().all(|p| !p.log.epochs.is_empty()));
        let csv = sweep_to_csv(&points);
        assert!(csv.starts_with("lambda,hidden_size,HR@5,HR@10,HR@20,NDCG@5,NDCG@10,NDCG@20\n"));
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn sweep_rows_do_not_depend_on_grid_order() {
        let split = toy_split(5, 10, 6);
        let base_train = TrainConfig { max_epochs: 1, batch_size: 8, ..Default::default() };
        let forward = sweep(&split, 10, &tiny_model(), &AugmentConfig::default(), &base_train, &[0.0, 0.1], &[8]).unwrap();
        let backward = sweep(&split, 10, &tiny_model(), &AugmentConfig::default(), &base_train, &[0.1, 0.0], &[8]).unwrap();
        let find = |points: &[SweepPoint], l: f64| points.iter().find(|p| p.row.lambda == l).unwrap().row.clone();
        assert_eq!(find(&forward, 0.1), find(&backward, 0.1));
        assert_eq!(find(&forward, 0.0), find(&backward, 0.0));
    }
}
