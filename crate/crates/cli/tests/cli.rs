use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

fn pkil(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pkil"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = pkil(dir, args);
    assert!(
        out.status.success(),
        "pkil {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Synthetic data, vectors and a trained model in a fresh directory.
fn workspace(iterations: &str, init: &str) -> (tempfile::TempDir, String) {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::copy(fixture("synthetic_tree.json"), d.join("tree.json")).unwrap();
    ok(d, &["synth", "--tree", "tree.json", "--examples", "40", "--out", "."]);
    ok(
        d,
        &[
            "train-embeddings",
            "--corpus",
            "corpus.txt",
            "--dim",
            "12",
            "--epochs",
            "3",
            "--out",
            "vectors.txt",
        ],
    );
    let stdout = ok(
        d,
        &[
            "train",
            "--tree",
            "tree.json",
            "--annotations",
            "annotations.jsonl",
            "--vectors",
            "vectors.txt",
            "--kernel",
            "cosine",
            "--iterations",
            iterations,
            "--init",
            init,
            "--out",
            "model.json",
        ],
    );
    (dir, stdout)
}

fn artifact_json(path: &Path) -> serde_json::Value {
    let text = fs::read_to_string(path).unwrap();
    let (header, body) = text.split_once('\n').unwrap();
    assert!(header.starts_with("#pkil version="));
    serde_json::from_str(body).unwrap()
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(pkil(dir.path(), &["no-such-command"]).status.code(), Some(1));
    assert_eq!(
        pkil(dir.path(), &["train", "--kernel", "sideways"]).status.code(),
        Some(1)
    );
    let out = pkil(dir.path(), &["train-embeddings", "--out", "v.txt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--corpus"));
    assert_eq!(pkil(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn missing_corpus_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = pkil(
        dir.path(),
        &["train-embeddings", "--corpus", "absent.txt", "--out", "v.txt"],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.txt"));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), "nonsense = 3\n").unwrap();
    let out = pkil(dir.path(), &["--config", "run.toml", "synth"]);
    assert!(!out.status.success());
}

#[test]
fn zero_iterations_keep_midpoint_thresholds() {
    let (dir, stdout) = workspace("0", "midpoint");
    assert!(!stdout.contains("iteration"));
    let model = artifact_json(&dir.path().join("model.json"));
    for (_, t) in model["thresholds"].as_object().unwrap() {
        assert_eq!(t.as_f64(), Some(0.0));
    }
}

#[test]
fn one_trajectory_line_per_iteration_and_predictions() {
    let (dir, stdout) = workspace("4", "annotations");
    let lines: Vec<&str> = stdout.lines().filter(|l| l.starts_with("iteration ")).collect();
    assert_eq!(lines.len(), 4);
    let losses: Vec<f64> = lines
        .iter()
        .map(|l| l.rsplit(' ').next().unwrap().parse().unwrap())
        .collect();
    assert!(losses.windows(2).all(|w| w[1] <= w[0]));

    let d = dir.path();
    fs::write(
        d.join("extra.jsonl"),
        "{\"id\": \"empty\", \"text\": \"\"}\n{\"id\": \"one\", \"text\": \"Everything feels hopeless and empty.\"}\n",
    )
    .unwrap();
    ok(
        d,
        &[
            "predict",
            "--model",
            "model.json",
            "--posts",
            "extra.jsonl",
            "--out",
            "pred.jsonl",
        ],
    );
    let records: Vec<serde_json::Value> = fs::read_to_string(d.join("pred.jsonl"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 2);
    assert_eq!(records[0]["id"], "empty");
    assert_eq!(records[0]["fallback"], true);
    let sum: f64 = records[1]["scores"]
        .as_object()
        .unwrap()
        .values()
        .map(|v| v.as_f64().unwrap())
        .sum();
    assert!((sum - 1.0).abs() < 1e-9);

    let explained = ok(d, &["explain", "--model", "model.json", "--posts", "extra.jsonl"]);
    assert!(explained.contains("fallback"));
}

#[test]
fn changed_vectors_are_detected() {
    let (dir, _) = workspace("1", "annotations");
    let d = dir.path();
    let mut vectors = fs::read_to_string(d.join("vectors.txt")).unwrap();
    vectors.push_str("zzz");
    let dim = vectors.lines().nth(1).unwrap().split_whitespace().count() - 1;
    for _ in 0..dim {
        vectors.push_str(" 0.5");
    }
    vectors.push('\n');
    fs::write(d.join("vectors.txt"), vectors).unwrap();
    let out = pkil(d, &["predict", "--model", "model.json", "--posts", "posts.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sha256"));
}

#[test]
fn baseline_method_and_highlights() {
    let (dir, _) = workspace("1", "annotations");
    let d = dir.path();
    let stdout = ok(
        d,
        &[
            "train",
            "--method",
            "baseline",
            "--tree",
            "tree.json",
            "--annotations",
            "annotations.jsonl",
            "--vectors",
            "vectors.txt",
            "--out",
            "baseline.json",
        ],
    );
    assert!(stdout.starts_with("final loss"));
    ok(
        d,
        &[
            "predict",
            "--model",
            "baseline.json",
            "--posts",
            "posts.jsonl",
            "--highlight",
            "0.0",
            "--out",
            "b.jsonl",
        ],
    );
    let first = fs::read_to_string(d.join("b.jsonl"))
        .unwrap()
        .lines()
        .find(|l| !l.starts_with('#'))
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap())
        .unwrap();
    assert!(first["highlights"].is_array());
    // A pkil model does not take --highlight.
    assert_eq!(
        pkil(
            d,
            &[
                "predict",
                "--model",
                "model.json",
                "--posts",
                "posts.jsonl",
                "--highlight",
                "0.1"
            ]
        )
        .status
        .code(),
        Some(2)
    );
}
