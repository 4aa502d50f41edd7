use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lma4rec::augment::{apply_operator, build_correlation, AugmentOp};
use lma4rec::data::{ingest, preprocess, synthetic, DatasetCache, InputFormat};
use lma4rec::eval::{evaluate, EvalTarget, MetricsReport};
use lma4rec::model::{load_checkpoint, save_checkpoint};
use lma4rec::train::{fit, sweep, sweep_to_csv, FitOutcome};

use crate::config::RunConfig;

pub struct PreprocessArgs {
    pub input: Option<PathBuf>,
    pub format: InputFormat,
    pub out_dir: PathBuf,
    pub synthetic: bool,
    pub synthetic_cfg: synthetic::SyntheticConfig,
    pub correlation_window: usize,
    pub correlation_top_k: usize,
}

/// ingest -> 5-core filter -> sequences -> leave-one-out split; writes the
/// versioned cache, the stats pair, and the correlation table.
pub fn cmd_preprocess(args: &PreprocessArgs) -> anyhow::Result<()> {
    let interactions = if args.synthetic {
        synthetic::generate(&args.synthetic_cfg)
    } else {
        let input = args.input.as_ref().context("either --input or --synthetic is required")?;
        if !input.exists() {
            bail!("no such input: {}", input.display());
        }
        ingest(input, args.format)?
    };
    let (cache, _) = preprocess(interactions)?;
    std::fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("cannot create {}", args.out_dir.display()))?;

    cache.save(&args.out_dir.join("cache.json"))?;
    std::fs::write(
        args.out_dir.join("stats.json"),
        serde_json::to_string_pretty(&cache.stats).expect("stats serialize"),
    )?;
    std::fs::write(args.out_dir.join("stats.txt"), cache.stats.to_text())?;

    let prefixes: Vec<&[u32]> = cache.split.entries.iter().map(|e| e.train.as_slice()).collect();
    let table = build_correlation(&prefixes, cache.num_items(), args.correlation_window, args.correlation_top_k);
    let mut tsv = Vec::new();
    table.write_tsv(&mut tsv)?;
    std::fs::write(args.out_dir.join("correlation.tsv"), tsv)?;

    if cache.split.excluded_users > 0 {
        eprintln!("excluded {} users with fewer than 3 items", cache.split.excluded_users);
    }
    println!(
        "wrote {} (users: {}, items: {}, interactions: {})",
        args.out_dir.join("cache.json").display(),
        cache.stats.users,
        cache.stats.items,
        cache.stats.interactions
    );
    Ok(())
}

fn write_report(report: &MetricsReport, out_dir: &Path, stem: &str) -> anyhow::Result<()> {
    std::fs::write(
        out_dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(report).expect("report serializes"),
    )?;
    std::fs::write(out_dir.join(format!("{stem}.txt")), report.to_text())?;
    Ok(())
}

/// Train with the resolved config, archive it, and write the best
/// checkpoint, the JSON-lines training log, and the test report.
pub fn cmd_train(cfg: &RunConfig) -> anyhow::Result<FitOutcome> {
    let cache = DatasetCache::load(&cfg.cache)
        .with_context(|| format!("cannot load cache {} (run preprocess first)", cfg.cache.display()))?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    cfg.archive(&cfg.out_dir)?;

    let outcome = fit(
        &cache.split,
        cache.num_items(),
        cfg.model.clone(),
        cfg.augment.clone(),
        cfg.train.clone(),
    )?;

    save_checkpoint(&outcome.params, &cfg.out_dir.join("checkpoint.json"))?;
    std::fs::write(cfg.out_dir.join("train_log.jsonl"), outcome.log.to_json_lines())?;
    let test = evaluate(&outcome.params, &cache.split, EvalTarget::Test, &cfg.eval_ks, cfg.mask_history)?;
    write_report(&test, &cfg.out_dir, "metrics_test")?;
    println!(
        "best epoch {} (val NDCG@10 {:.4}); test: {}",
        outcome.best_epoch,
        outcome.best_val_ndcg10,
        cfg.eval_ks
            .iter()
            .zip(&test.hr)
            .map(|(k, v)| format!("HR@{k} {v:.4}"))
            .collect::<Vec<_>>()
            .join(" ")
    );
    Ok(outcome)
}

pub struct EvaluateArgs {
    pub checkpoint: PathBuf,
    pub cache: PathBuf,
    pub split: EvalTarget,
    pub out_dir: PathBuf,
    pub ks: Vec<usize>,
    pub mask_history: bool,
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> anyhow::Result<MetricsReport> {
    let params = load_checkpoint(&args.checkpoint)?;
    let cache = DatasetCache::load(&args.cache)?;
    let report = evaluate(&params, &cache.split, args.split, &args.ks, args.mask_history)?;
    std::fs::create_dir_all(&args.out_dir)?;
    write_report(&report, &args.out_dir, &format!("metrics_{}", args.split))?;
    print!("{}", report.to_text());
    Ok(report)
}

/// Print the input sequence and one seeded output per operator. The
/// correlation table is built from the demo sequence itself, so the
/// informative operators have something to work with.
pub fn cmd_augment_demo(sequence: &[u32], cfg: &RunConfig) -> anyhow::Result<String> {
    if sequence.is_empty() {
        bail!("the demo needs a non-empty sequence");
    }
    let max_item = *sequence.iter().max().expect("non-empty");
    if sequence.iter().any(|&i| i == 0) {
        bail!("item indices must be positive (0 is the padding token)");
    }
    let mask_token = max_item + 1;
    let refs: [&[u32]; 1] = [sequence];
    let table = build_correlation(
        &refs,
        max_item as usize,
        cfg.augment.correlation_window,
        cfg.augment.correlation_top_k,
    );

    let render = |seq: &[u32]| {
        seq.iter()
            .map(|&i| if i == mask_token { "[mask]".to_string() } else { i.to_string() })
            .collect::<Vec<_>>()
            .join(" ")
    };
    let mut out = format!("input:      {}\n", render(sequence));
    for op in [AugmentOp::Crop, AugmentOp::Mask, AugmentOp::Reorder, AugmentOp::Substitute, AugmentOp::Insert] {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ op as u64);
        let outcome = apply_operator(op, sequence, &cfg.augment, &table, mask_token, cfg.model.max_len, &mut rng);
        let tag = if outcome.skipped { " (skipped: too short)" } else { "" };
        out.push_str(&format!("{:<11} {}{}\n", format!("{}:", outcome.op), render(&outcome.seq), tag));
    }
    print!("{out}");
    Ok(out)
}

/// Run the (lambda, hidden-size) grid and write the CSV plus one training
/// log per grid point.
pub fn cmd_sweep(cfg: &RunConfig) -> anyhow::Result<()> {
    let cache = DatasetCache::load(&cfg.cache)
        .with_context(|| format!("cannot load cache {} (run preprocess first)", cfg.cache.display()))?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    cfg.archive(&cfg.out_dir)?;

    let points = sweep(
        &cache.split,
        cache.num_items(),
        &cfg.model,
        &cfg.augment,
        &cfg.train,
        &cfg.lambda_grid,
        &cfg.hidden_grid,
    )?;
    std::fs::write(cfg.out_dir.join("sweep.csv"), sweep_to_csv(&points))?;
    let log_dir = cfg.out_dir.join("sweep_logs");
    std::fs::create_dir_all(&log_dir)?;
    for p in &points {
        let name = format!("lambda{}_hidden{}.jsonl", p.row.lambda, p.row.hidden_size);
        std::fs::write(log_dir.join(name), p.log.to_json_lines())?;
    }
    println!("wrote {} ({} rows)", cfg.out_dir.join("sweep.csv").display(), points.len());
    Ok(())
}
