//! End-to-end tests that drive the compiled `ctr` binary the way a user
//! would: train on a small synthetic log, then eval, predict, bench, and
//! inspect the resulting checkpoint. Each test owns a fresh temp directory.

use std::path::PathBuf;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ctr"))
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

struct Workspace {
    _dir: tempfile::TempDir,
    train: PathBuf,
    eval: PathBuf,
    schema: PathBuf,
    out: PathBuf,
}

fn setup() -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let train = root.join("train.csv");
    let eval = root.join("eval.csv");
    let schema = root.join("fields.schema");
    ctr::synth::write_csv(&train, 2000, 1001).unwrap();
    ctr::synth::write_csv(&eval, 500, 2002).unwrap();
    std::fs::write(&schema, ctr::synth::schema_text()).unwrap();
    let out = root.join("run");
    Workspace { _dir: dir, train, eval, schema, out }
}

/// Small model, three epochs, hyperparameters slow enough that held-out AUC
/// is still climbing at every epoch boundary.
fn train_three_epochs(ws: &Workspace) -> Output {
    bin()
        .args(["train", "--epochs", "3", "--embed-dim", "4", "--mlp", "8"])
        .args(["--lr", "0.01", "--batch-size", "256", "--seed", "7"])
        .arg("--data")
        .arg(&ws.train)
        .arg("--eval")
        .arg(&ws.eval)
        .arg("--schema")
        .arg(&ws.schema)
        .arg("--out")
        .arg(&ws.out)
        .output()
        .unwrap()
}

fn train_one_epoch(ws: &Workspace, extra: &[&str]) -> Output {
    bin()
        .args(["train", "--embed-dim", "4", "--mlp", "8", "--seed", "7"])
        .args(extra)
        .arg("--data")
        .arg(&ws.train)
        .arg("--eval")
        .arg(&ws.eval)
        .arg("--schema")
        .arg(&ws.schema)
        .arg("--out")
        .arg(&ws.out)
        .output()
        .unwrap()
}

fn read_metrics(ws: &Workspace) -> Vec<Vec<String>> {
    let text = std::fs::read_to_string(ws.out.join("metrics.csv")).unwrap();
    text.lines().map(|l| l.split(',').map(str::to_owned).collect()).collect()
}

#[test]
fn train_logs_metrics_and_improves_across_epochs() {
    let ws = setup();
    let out = train_three_epochs(&ws);
    assert!(out.status.success(), "train failed: {}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("loaded 2000 train rows, 500 eval rows, 6 fields"), "{text}");
    assert!(text.contains("epoch 3:"), "{text}");

    let rows = read_metrics(&ws);
    assert_eq!(rows[0], ["epoch", "train_logloss", "eval_auc", "eval_logloss", "seconds"]);
    assert_eq!(rows.len(), 4, "header plus one row per epoch");
    let aucs: Vec<f64> = rows[1..].iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(aucs.windows(2).all(|w| w[0] < w[1]), "AUC not increasing: {aucs:?}");

    for epoch in 1..=3 {
        assert!(ws.out.join(format!("epoch_{epoch}.ckpt")).exists());
    }
    assert!(ws.out.join("model.ckpt").exists());
}

#[test]
fn eval_reproduces_the_auc_logged_at_save_time() {
    let ws = setup();
    let out = train_three_epochs(&ws);
    assert!(out.status.success(), "train failed: {}", stderr(&out));
    let rows = read_metrics(&ws);
    let logged = rows.last().unwrap();

    let eval = bin()
        .arg("eval")
        .arg("--model")
        .arg(ws.out.join("model.ckpt"))
        .arg("--data")
        .arg(&ws.eval)
        .output()
        .unwrap();
    assert!(eval.status.success(), "eval failed: {}", stderr(&eval));
    let text = stdout(&eval);
    assert!(text.contains("examples 500"), "{text}");
    // Same checkpoint, same data: the printed AUC and log loss must match
    // the training log character for character, not just approximately.
    assert!(text.contains(&format!("auc {}\n", logged[2])), "{text} vs {logged:?}");
    assert!(text.contains(&format!("logloss {}\n", logged[3])), "{text} vs {logged:?}");
}

#[test]
fn predict_writes_one_probability_per_row_with_or_without_labels() {
    let ws = setup();
    let out = train_one_epoch(&ws, &[]);
    assert!(out.status.success(), "train failed: {}", stderr(&out));

    let preds_path = ws.out.join("preds.txt");
    let run = |data: &std::path::Path| {
        let out = bin()
            .arg("predict")
            .arg("--model")
            .arg(ws.out.join("model.ckpt"))
            .arg("--data")
            .arg(data)
            .arg("--out")
            .arg(&preds_path)
            .output()
            .unwrap();
        assert!(out.status.success(), "predict failed: {}", stderr(&out));
        let text = std::fs::read_to_string(&preds_path).unwrap();
        let probs: Vec<f64> = text.lines().map(|l| l.parse().unwrap()).collect();
        assert_eq!(probs.len(), 500);
        assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
        probs
    };
    let labeled = run(&ws.eval);

    // Scoring data has no label column in production; strip it and expect
    // the same probabilities.
    let unlabeled_path = ws.out.join("unlabeled.csv");
    let stripped: String = std::fs::read_to_string(&ws.eval)
        .unwrap()
        .lines()
        .map(|l| l.split_once(',').unwrap().1)
        .collect::<Vec<_>>()
        .join("\n");
    std::fs::write(&unlabeled_path, stripped).unwrap();
    let unlabeled = run(&unlabeled_path);
    assert_eq!(labeled, unlabeled);
}

#[test]
fn bench_reports_throughput_for_both_modes() {
    let ws = setup();
    let out = train_one_epoch(&ws, &[]);
    assert!(out.status.success(), "train failed: {}", stderr(&out));

    let bench = bin()
        .args(["bench", "--seconds", "0.5"])
        .arg("--model")
        .arg(ws.out.join("model.ckpt"))
        .arg("--data")
        .arg(&ws.eval)
        .output()
        .unwrap();
    assert!(bench.status.success(), "bench failed: {}", stderr(&bench));
    let text = stdout(&bench);
    for key in ["inference_examples_per_sec", "train_examples_per_sec"] {
        let line = text.lines().find(|l| l.starts_with(key)).expect(key);
        let rate: f64 = line.split_whitespace().nth(1).unwrap().parse().unwrap();
        assert!(rate > 0.0, "{line}");
    }
    assert!(text.contains("inference_trials"), "{text}");
    assert!(text.contains("train_trials"), "{text}");
}

#[test]
fn inspect_prints_a_consistent_parameter_budget() {
    let ws = setup();
    let out = train_one_epoch(&ws, &[]);
    assert!(out.status.success(), "train failed: {}", stderr(&out));

    let inspect =
        bin().arg("inspect").arg("--model").arg(ws.out.join("model.ckpt")).output().unwrap();
    assert!(inspect.status.success(), "inspect failed: {}", stderr(&inspect));
    let text = stdout(&inspect);
    let value = |key: &str| -> usize {
        text.lines()
            .find(|l| l.starts_with(key))
            .unwrap_or_else(|| panic!("missing {key} in {text}"))
            .split_whitespace()
            .nth(1)
            .unwrap()
            .parse()
            .unwrap()
    };
    assert_eq!(value("fields"), 6);
    assert_eq!(value("hierarchies"), 3);
    assert_eq!(value("embed_dim"), 4);
    let parts = ["embedding", "linear", "pair_weights", "projection", "mlp", "head"];
    let sum: usize = parts.iter().map(|k| value(k)).sum();
    assert_eq!(sum, value("total"));
    assert!(text.contains("complexity O("), "{text}");
}

#[test]
fn special_case_models_train_end_to_end() {
    for kind in ["fm", "fwfm", "linear"] {
        let ws = setup();
        let out = train_one_epoch(&ws, &["--model", kind]);
        assert!(out.status.success(), "{kind} train failed: {}", stderr(&out));
        let rows = read_metrics(&ws);
        assert_eq!(rows.len(), 2, "{kind}: header plus one epoch");
        let auc: f64 = rows[1][2].parse().unwrap();
        assert!((0.0..=1.0).contains(&auc), "{kind}: auc {auc}");
    }
}

#[test]
fn rejects_data_that_does_not_match_the_schema() {
    let ws = setup();
    let bad_schema = ws.schema.with_file_name("bad_fields.schema");
    std::fs::write(
        &bad_schema,
        "@hierarchy user\nua, auto, one-hot, user, dict\nabsent_column, auto, one-hot, user, dict\n",
    )
    .unwrap();
    let out = bin()
        .arg("train")
        .arg("--data")
        .arg(&ws.train)
        .arg("--eval")
        .arg(&ws.eval)
        .arg("--schema")
        .arg(&bad_schema)
        .arg("--out")
        .arg(&ws.out)
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.starts_with("error:"), "{err}");
    assert!(err.contains("absent_column"), "{err}");
}

#[test]
fn rejects_a_malformed_schema_file() {
    let ws = setup();
    let bad_schema = ws.schema.with_file_name("malformed.schema");
    std::fs::write(&bad_schema, "@hierarchy user\nua, auto, one-hot\n").unwrap();
    let out = bin()
        .arg("train")
        .arg("--data")
        .arg(&ws.train)
        .arg("--eval")
        .arg(&ws.eval)
        .arg("--schema")
        .arg(&bad_schema)
        .arg("--out")
        .arg(&ws.out)
        .output()
        .unwrap();
    assert!(!out.status.success());
    assert!(stderr(&out).starts_with("error:"), "{}", stderr(&out));
}
