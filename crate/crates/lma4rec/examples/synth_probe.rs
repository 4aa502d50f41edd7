//! Scratch probe: does the contrastive term help when the supervised budget
//! is small? Compare lambda 0.1 vs 0 across budgets and seeds.

use lma4rec::augment::AugmentConfig;
use lma4rec::data::{preprocess, synthetic};
use lma4rec::model::ModelConfig;
use lma4rec::train::{fit, TrainConfig};

fn main() {
    let interactions = synthetic::generate(&synthetic::SyntheticConfig::default());
    let (cache, _) = preprocess(interactions).unwrap();

    for (label, batch, lr, epochs) in [
        ("b256 lr1e-3 e100", 256usize, 1e-3, 100usize),
        ("b256 lr1e-3 e200", 256, 1e-3, 200),
        ("b64  lr1e-3 e60 ", 64, 1e-3, 60),
        ("b64  lr3e-3 e60 ", 64, 3e-3, 60),
    ] {
        for (tag, lambda, no_ssl) in [("l=0.1", 0.1, false), ("l=0  ", 0.0, true)] {
            let mut vals = Vec::new();
            let mut secs = 0.0;
            for seed in [7u64, 8, 9, 10, 11] {
                let model_cfg = ModelConfig {
                    embed_dim: 32,
                    num_heads: 2,
                    num_blocks: 2,
                    max_len: 20,
                    ..Default::default()
                };
                let mut cfg = TrainConfig {
                    max_epochs: epochs,
                    patience: epochs,
                    seed,
                    batch_size: batch,
                    learning_rate: lr,
                    no_ssl,
                    ..Default::default()
                };
                cfg.weights.lambda = lambda;
                let started = std::time::Instant::now();
                let outcome =
                    fit(&cache.split, cache.num_items(), model_cfg, AugmentConfig::default(), cfg)
                        .unwrap();
                secs += started.elapsed().as_secs_f64();
                vals.push(outcome.test_report.metric("ndcg", 10).unwrap());
            }
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            println!(
                "{label} {tag}: NDCG@10 seeds {:?} mean {:.4} ({:.0}s)",
                vals.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
                mean,
                secs
            );
        }
    }
}
