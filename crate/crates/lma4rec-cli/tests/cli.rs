//! Behavior of the command-line surface: exit codes, file outputs, and
//! byte-level determinism.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_lma4rec"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().expect("binary runs")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "expected success, got {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn preprocess_tiny(dir: &Path) {
    let out = run(
        &[
            "preprocess", "--synthetic", "--users", "24", "--items", "8", "--min-len", "8",
            "--max-len", "10", "--out", "pp",
        ],
        dir,
    );
    assert_ok(&out);
}

const TINY_TRAIN: &[&str] = &[
    "train", "--cache", "pp/cache.json", "--hidden", "8", "--max-len", "10", "--epochs", "2",
    "--batch-size", "8", "--seed", "11",
];

#[test]
fn preprocess_writes_cache_and_stats_deterministically() {
    let tmp = tempfile::tempdir().unwrap();
    preprocess_tiny(tmp.path());
    let first = std::fs::read(tmp.path().join("pp/cache.json")).unwrap();
    assert!(tmp.path().join("pp/stats.json").exists());
    assert!(tmp.path().join("pp/stats.txt").exists());
    assert!(tmp.path().join("pp/correlation.tsv").exists());

    preprocess_tiny(tmp.path());
    let second = std::fs::read(tmp.path().join("pp/cache.json")).unwrap();
    assert_eq!(first, second, "rerun on identical input must produce a byte-identical cache");
}

#[test]
fn preprocess_missing_input_fails_with_message() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["preprocess", "--input", "nope.tsv", "--out", "pp"], tmp.path());
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("no such input"), "{err}");
}

#[test]
fn train_then_evaluate_produces_identical_test_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    preprocess_tiny(tmp.path());
    let out = run(&[TINY_TRAIN, &["--out", "run"]].concat(), tmp.path());
    assert_ok(&out);
    for artifact in ["checkpoint.json", "config.toml", "train_log.jsonl", "metrics_test.json", "metrics_test.txt"] {
        assert!(tmp.path().join("run").join(artifact).exists(), "missing {artifact}");
    }
    let out = run(
        &["evaluate", "--checkpoint", "run/checkpoint.json", "--cache", "pp/cache.json", "--split", "test", "--out", "ev"],
        tmp.path(),
    );
    assert_ok(&out);
    let a = std::fs::read(tmp.path().join("run/metrics_test.json")).unwrap();
    let b = std::fs::read(tmp.path().join("ev/metrics_test.json")).unwrap();
    assert_eq!(a, b, "evaluate must reproduce the metrics train just wrote");
}

#[test]
fn train_twice_with_one_seed_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    preprocess_tiny(tmp.path());
    assert_ok(&run(&[TINY_TRAIN, &["--out", "runA"]].concat(), tmp.path()));
    assert_ok(&run(&[TINY_TRAIN, &["--out", "runB"]].concat(), tmp.path()));
    for artifact in ["checkpoint.json", "metrics_test.json"] {
        let a = std::fs::read(tmp.path().join("runA").join(artifact)).unwrap();
        let b = std::fs::read(tmp.path().join("runB").join(artifact)).unwrap();
        assert_eq!(a, b, "{artifact} differs between identical runs");
    }
    // archived configs agree except for the out_dir they record
    let norm = |dir: &str| {
        std::fs::read_to_string(tmp.path().join(dir).join("config.toml"))
            .unwrap()
            .replace(dir, "")
    };
    assert_eq!(norm("runA"), norm("runB"));
}

#[test]
fn no_ssl_run_logs_no_contrastive_loss() {
    let tmp = tempfile::tempdir().unwrap();
    preprocess_tiny(tmp.path());
    let out = run(&[TINY_TRAIN, &["--out", "run", "--no-ssl"]].concat(), tmp.path());
    assert_ok(&out);
    let log = std::fs::read_to_string(tmp.path().join("run/train_log.jsonl")).unwrap();
    for line in log.lines() {
        let record: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(record["l_ssl"].is_null(), "no-ssl run logged a contrastive loss: {line}");
        assert_eq!(record["l_rs"], record["l_total"]);
    }
    let cfg = std::fs::read_to_string(tmp.path().join("run/config.toml")).unwrap();
    assert!(cfg.contains("no_ssl = true"));
}

#[test]
fn lambda_override_is_archived() {
    let tmp = tempfile::tempdir().unwrap();
    preprocess_tiny(tmp.path());
    let out = run(&[TINY_TRAIN, &["--out", "run", "--lambda", "0.1"]].concat(), tmp.path());
    assert_ok(&out);
    let cfg = std::fs::read_to_string(tmp.path().join("run/config.toml")).unwrap();
    assert!(cfg.contains("lambda = 0.1"), "{cfg}");
}

#[test]
fn corrupted_checkpoint_is_refused() {
    let tmp = tempfile::tempdir().unwrap();
    preprocess_tiny(tmp.path());
    std::fs::write(tmp.path().join("bad.json"), "{\"format\": \"garbage\"}").unwrap();
    let out = run(
        &["evaluate", "--checkpoint", "bad.json", "--cache", "pp/cache.json", "--split", "test", "--out", "ev"],
        tmp.path(),
    );
    assert!(!out.status.success());
}

#[test]
fn evaluate_json_has_exactly_the_six_table_metrics() {
    let tmp = tempfile::tempdir().unwrap();
    preprocess_tiny(tmp.path());
    assert_ok(&run(&[TINY_TRAIN, &["--out", "run"]].concat(), tmp.path()));
    let body = std::fs::read_to_string(tmp.path().join("run/metrics_test.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&body).unwrap();
    assert_eq!(v["ks"], serde_json::json!([5, 10, 20]));
    assert_eq!(v["hr"].as_array().unwrap().len(), 3);
    assert_eq!(v["ndcg"].as_array().unwrap().len(), 3);
}

#[test]
fn augment_demo_prints_five_labeled_lines_and_is_seed_stable() {
    let tmp = tempfile::tempdir().unwrap();
    let args = ["augment-demo", "--sequence", "1,2,3,4", "--seed", "7"];
    let first = run(&args, tmp.path());
    assert_ok(&first);
    let text = String::from_utf8(first.stdout).unwrap();
    for label in ["input:", "crop:", "mask:", "reorder:", "substitute:", "insert:"] {
        assert!(text.contains(label), "missing {label} in\n{text}");
    }
    // the crop line is a contiguous slice of the input
    let crop_line = text.lines().find(|l| l.starts_with("crop:")).unwrap();
    let items: Vec<&str> = crop_line.split_whitespace().skip(1).collect();
    assert!("1 2 3 4".contains(&items.join(" ")));

    let second = run(&args, tmp.path());
    assert_eq!(text, String::from_utf8(second.stdout).unwrap());
}

#[test]
fn augment_demo_rejects_invalid_indices() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["augment-demo", "--sequence", "1,0,3"], tmp.path());
    assert!(!out.status.success());
}

#[test]
fn sweep_emits_the_documented_csv() {
    let tmp = tempfile::tempdir().unwrap();
    preprocess_tiny(tmp.path());
    let out = run(
        &[
            "sweep", "--cache", "pp/cache.json", "--out", "sw", "--hidden", "8", "--max-len", "10",
            "--epochs", "1", "--batch-size", "8", "--lambda-grid", "0,0.1", "--hidden-grid", "8,4",
        ],
        tmp.path(),
    );
    assert_ok(&out);
    let csv = std::fs::read_to_string(tmp.path().join("sw/sweep.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "lambda,hidden_size,HR@5,HR@10,HR@20,NDCG@5,NDCG@10,NDCG@20");
    assert_eq!(lines.count(), 4, "2x2 grid -> 4 rows");
    assert!(tmp.path().join("sw/sweep_logs").read_dir().unwrap().count() == 4);
}
