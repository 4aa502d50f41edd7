mod commands;
mod config;

use std::path::PathBuf;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use lma4rec::data::{synthetic::SyntheticConfig, InputFormat};
use lma4rec::eval::EvalTarget;

use commands::{cmd_augment_demo, cmd_evaluate, cmd_preprocess, cmd_sweep, cmd_train, EvaluateArgs, PreprocessArgs};
use config::RunConfig;

#[derive(Parser)]
#[command(name = "lma4rec", version, about = "Sequential recommendation with learnable model augmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest raw interactions (or generate the bundled synthetic dataset),
    /// apply 5-core filtering, split, and cache the result.
    Preprocess(PreprocessCli),
    /// Train on a preprocessed cache and write checkpoint, logs, and test metrics.
    Train(TrainCli),
    /// Evaluate a checkpoint on the validation or test split.
    Evaluate(EvaluateCli),
    /// Show one seeded output per augmentation operator.
    AugmentDemo(AugmentDemoCli),
    /// Train over the (lambda, hidden size) grid and emit a CSV of metrics.
    Sweep(SweepCli),
}

#[derive(Args)]
struct PreprocessCli {
    /// Raw interaction file with user/item/timestamp records.
    #[arg(long, conflicts_with = "synthetic")]
    input: Option<PathBuf>,
    /// Input encoding: csv, tsv, or jsonl.
    #[arg(long, default_value = "tsv")]
    format: String,
    #[arg(long, default_value = "data/processed")]
    out: PathBuf,
    /// Generate the bundled synthetic cyclic-transition dataset instead of
    /// reading a file.
    #[arg(long)]
    synthetic: bool,
    #[arg(long, default_value_t = 200)]
    users: usize,
    #[arg(long, default_value_t = 20)]
    items: usize,
    /// Probability that a transition follows the cyclic rule.
    #[arg(long, default_value_t = 0.9)]
    rule_prob: f64,
    #[arg(long, default_value_t = 16)]
    min_len: usize,
    #[arg(long, default_value_t = 24)]
    max_len: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    correlation_window: usize,
    #[arg(long, default_value_t = 10)]
    correlation_top_k: usize,
}

#[derive(Args, Default)]
struct ConfigOverrides {
    /// TOML config file; command-line flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preprocessed cache produced by `preprocess`.
    #[arg(long)]
    cache: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Weight of the contrastive loss term.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    /// Embedding size (hidden size) of the encoder.
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    /// Drop the contrastive objective (trains the gated encoder alone).
    #[arg(long)]
    no_ssl: bool,
    /// Freeze the dropout gates at their expected value.
    #[arg(long)]
    no_lma: bool,
    /// Replace data augmentation with the identity.
    #[arg(long)]
    no_da: bool,
}

#[derive(Args)]
struct TrainCli {
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Args)]
struct EvaluateCli {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    cache: PathBuf,
    /// Which held-out item to rank: valid or test.
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value = "runs/eval")]
    out: PathBuf,
    /// Comma-separated ranking cutoffs.
    #[arg(long, default_value = "5,10,20", value_delimiter = ',')]
    ks: Vec<usize>,
    /// Remove history items from the candidate set.
    #[arg(long)]
    mask_history: bool,
}

#[derive(Args)]
struct AugmentDemoCli {
    /// Comma-separated item indices, e.g. "1,2,3,4".
    #[arg(long, value_delimiter = ',')]
    sequence: Vec<u32>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    crop_ratio: Option<f64>,
    #[arg(long)]
    mask_ratio: Option<f64>,
    #[arg(long)]
    reorder_ratio: Option<f64>,
    #[arg(long)]
    substitute_ratio: Option<f64>,
    #[arg(long)]
    insert_ratio: Option<f64>,
}

#[derive(Args)]
struct SweepCli {
    #[command(flatten)]
    overrides: ConfigOverrides,
    /// Comma-separated lambda grid, e.g. "0,0.1,0.2".
    #[arg(long, value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
    /// Comma-separated hidden-size grid, e.g. "64,128".
    #[arg(long, value_delimiter = ',')]
    hidden_grid: Option<Vec<usize>>,
}

fn resolve_config(o: &ConfigOverrides) -> anyhow::Result<RunConfig> {
    let mut cfg = match &o.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &o.cache {
        cfg.cache = v.clone();
    }
    if let Some(v) = &o.out {
        cfg.out_dir = v.clone();
    }
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = o.lambda {
        cfg.train.weights.lambda = v;
    }
    if let Some(v) = o.temperature {
        cfg.train.weights.temperature = v;
    }
    if let Some(v) = o.hidden {
        cfg.model.embed_dim = v;
    }
    if let Some(v) = o.max_len {
        cfg.model.max_len = v;
    }
    if let Some(v) = o.epochs {
        cfg.train.max_epochs = v;
    }
    if let Some(v) = o.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = o.lr {
        cfg.train.learning_rate = v;
    }
    if let Some(v) = o.patience {
        cfg.train.patience = v;
    }
    cfg.train.no_ssl |= o.no_ssl;
    cfg.train.no_lma |= o.no_lma;
    cfg.train.no_da |= o.no_da;
    cfg.resolve();
    Ok(cfg)
}

fn main() -> anyhow::Result<()> {
    match Cli::parse().command {
        Command::Preprocess(p) => {
            let format: InputFormat = p.format.parse().map_err(anyhow::Error::msg)?;
            cmd_preprocess(&PreprocessArgs {
                input: p.input,
                format,
                out_dir: p.out,
                synthetic: p.synthetic,
                synthetic_cfg: SyntheticConfig {
                    users: p.users,
                    items: p.items,
                    rule_prob: p.rule_prob,
                    min_len: p.min_len,
                    max_len: p.max_len,
                    seed: p.seed,
                },
                correlation_window: p.correlation_window,
                correlation_top_k: p.correlation_top_k,
            })
        }
        Command::Train(t) => {
            let cfg = resolve_config(&t.overrides)?;
            cmd_train(&cfg).map(|_| ())
        }
        Command::Evaluate(e) => {
            let split = match e.split.as_str() {
                "valid" => EvalTarget::Valid,
                "test" => EvalTarget::Test,
                other => anyhow::bail!("unknown split {other:?} (expected valid or test)"),
            };
            cmd_evaluate(&EvaluateArgs {
                checkpoint: e.checkpoint,
                cache: e.cache,
                split,
                out_dir: e.out,
                ks: e.ks,
                mask_history: e.mask_history,
            })
            .map(|_| ())
        }
        Command::AugmentDemo(a) => {
            let mut cfg = RunConfig::default();
            cfg.seed = a.seed;
            if let Some(v) = a.crop_ratio {
                cfg.augment.crop_ratio = v;
            }
            if let Some(v) = a.mask_ratio {
                cfg.augment.mask_ratio = v;
            }
            if let Some(v) = a.reorder_ratio {
                cfg.augment.reorder_ratio = v;
            }
            if let Some(v) = a.substitute_ratio {
                cfg.augment.substitute_ratio = v;
            }
            if let Some(v) = a.insert_ratio {
                cfg.augment.insert_ratio = v;
            }
            cfg.augment.validate().map_err(anyhow::Error::msg)?;
            cfg.resolve();
            cmd_augment_demo(&a.sequence, &cfg).map(|_| ())
        }
        Command::Sweep(s) => {
            let mut cfg = resolve_config(&s.overrides)?;
            if let Some(grid) = s.lambda_grid {
                cfg.lambda_grid = grid;
            }
            if let Some(grid) = s.hidden_grid {
                cfg.hidden_grid = grid;
            }
            anyhow::ensure!(!cfg.lambda_grid.is_empty() && !cfg.hidden_grid.is_empty(), "grids must be non-empty");
            cmd_sweep(&cfg)
        }
    }
    .context("command failed")
}
