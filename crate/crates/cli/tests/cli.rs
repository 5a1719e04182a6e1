use std::path::Path;
use std::process::{Command, Output};

use repsense_core::evaluation::predict_labels;
use repsense_core::landmarks::read_landmark_file;
use repsense_core::model::load_model;
use sha2::{Digest, Sha256};

fn repsense(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_repsense"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = repsense(args);
    assert!(
        out.status.success(),
        "repsense {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small dataset and a 2-epoch model in `dir`.
fn pipeline(dir: &Path, seed: &str) -> (std::path::PathBuf, std::path::PathBuf) {
    let data = dir.join("data.jsonl");
    let model = dir.join("model.bin");
    ok(&[
        "generate",
        "--out",
        p(&data),
        "--per-class",
        "6",
        "--t-min",
        "10",
        "--t-max",
        "14",
        "--seed",
        "3",
    ]);
    ok(&[
        "train",
        "--data",
        p(&data),
        "--model-out",
        p(&model),
        "--epochs",
        "2",
        "--lstm-units",
        "8,8",
        "--seed",
        seed,
        "--quiet",
    ]);
    (data, model)
}

fn sha(path: &Path) -> Vec<u8> {
    Sha256::digest(std::fs::read(path).unwrap()).to_vec()
}

#[test]
fn generate_train_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = pipeline(dir.path(), "1");
    assert!(dir.path().join("model.history.jsonl").exists());
    let history = std::fs::read_to_string(dir.path().join("model.history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 2);

    let reports = dir.path().join("reports");
    let out = ok(&[
        "eval",
        "--model",
        p(&model),
        "--data",
        p(&data),
        "--split",
        "val",
        "--seed",
        "1",
        "--out-dir",
        p(&reports),
    ]);
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("Validation Accuracy [%]"), "{stdout}");
    assert!(stdout.contains("Overall accuracy"), "{stdout}");
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(reports.join("report.json")).unwrap())
            .unwrap();
    // 6 per class, 20% held out: round(1.2) = 1 per class
    assert_eq!(json["confusion"]["counts"].as_array().unwrap().len(), 4);
    assert_eq!(
        std::fs::read_to_string(reports.join("report.txt"))
            .unwrap()
            .trim(),
        stdout.trim()
    );
}

#[test]
fn predict_matches_evaluate_decisions() {
    let dir = tempfile::tempdir().unwrap();
    let (data, model) = pipeline(dir.path(), "2");
    let out = ok(&["predict", "--model", p(&model), "--data", p(&data)]);
    let lines: Vec<serde_json::Value> = String::from_utf8(out.stdout)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();

    let saved = load_model(&model).unwrap();
    let file = read_landmark_file(&data).unwrap();
    let seqs = file.to_sequences(saved.config.max_seq_len).unwrap();
    let labels = predict_labels(&saved.params, &saved.config, &seqs).unwrap();
    assert_eq!(lines.len(), labels.len());
    for ((line, label), rec) in lines.iter().zip(&labels).zip(&file.sequences) {
        assert_eq!(line["sequence_id"], rec.sequence_id.as_str());
        assert_eq!(line["label"], saved.registry.name(*label));
        let total: f64 = line["probs"]
            .as_object()
            .unwrap()
            .values()
            .map(|v| v.as_f64().unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-9);
    }
}

#[test]
fn same_seed_gives_identical_model_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let (_, ma) = pipeline(a.path(), "7");
    let (_, mb) = pipeline(b.path(), "7");
    let (_, mc) = pipeline(c.path(), "8");
    assert_eq!(sha(&ma), sha(&mb));
    assert_ne!(sha(&ma), sha(&mc));
}

#[test]
fn effective_config_is_printed_and_flags_override_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[synth]\nseed = 41\nnoise_sigma = 0.0\n").unwrap();
    let data = dir.path().join("d.jsonl");
    let out = ok(&[
        "--config",
        p(&cfg),
        "generate",
        "--out",
        p(&data),
        "--per-class",
        "2",
        "--seed",
        "42",
    ]);
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert!(stderr.contains("seed = 42"), "{stderr}");
    assert!(stderr.contains("noise_sigma = 0.0"), "{stderr}");
    assert_eq!(read_landmark_file(&data).unwrap().sequences.len(), 8);

    // the printed block reproduces the run
    let block: String = stderr
        .lines()
        .skip_while(|l| !l.starts_with("# effective config"))
        .skip(1)
        .take_while(|l| !l.starts_with("wrote"))
        .map(|l| format!("{l}\n"))
        .collect();
    let replay_cfg = dir.path().join("replay.toml");
    std::fs::write(&replay_cfg, block).unwrap();
    let replay = dir.path().join("r.jsonl");
    ok(&["--config", p(&replay_cfg), "generate", "--out", p(&replay)]);
    assert_eq!(
        std::fs::read(&data).unwrap(),
        std::fs::read(&replay).unwrap()
    );
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.jsonl");
    let bad_cfg = dir.path().join("bad.toml");
    std::fs::write(&bad_cfg, "[train]\nepoch = 3\n").unwrap();
    let out = dir.path().join("x.jsonl");
    let model = dir.path().join("m.bin");
    for args in [
        vec!["generate", "--out", p(&out), "--frobnicate"],
        vec!["train", "--data", p(&missing), "--model-out", p(&model)],
        vec![
            "generate",
            "--out",
            p(&out),
            "--t-min",
            "20",
            "--t-max",
            "10",
        ],
        vec!["--config", p(&bad_cfg), "generate", "--out", p(&out)],
        vec!["predict", "--model", p(&missing), "--data", p(&missing)],
        vec!["bogus"],
    ] {
        let o = repsense(&args);
        assert_eq!(
            o.status.code(),
            Some(2),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn serve_rejects_mismatched_max_seq_len() {
    let dir = tempfile::tempdir().unwrap();
    let (_, model) = pipeline(dir.path(), "1");
    let o = repsense(&[
        "serve",
        "--model",
        p(&model),
        "--max-seq-len",
        "16",
        "--listen",
        "127.0.0.1:0",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("max-seq-len"));
}
