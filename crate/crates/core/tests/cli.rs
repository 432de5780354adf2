use std::path::Path;
use std::process::{Command, Output};

use transferlab::cli::read_manifest;

const BIN: &str = env!("CARGO_BIN_EXE_transferlab");

const PAIR: &str = r#"{"type": "pair", "n_source": 8, "n_target": 6, "d": 4, "input_overlap": 0.5,
    "source_labels": {"kind": "linear-teacher", "parameters": [1.0, -0.5, 0.25, 0.0], "clip": true},
    "target_labels": {"kind": "linear-teacher", "parameters": [0.8, -0.4, 0.5, 0.1], "clip": true},
    "seed": 11}"#;

fn config(experiment: &str) -> String {
    format!(r#"{{"schema_version": 1, "seeds": [1, 2], "experiment": {experiment}}}"#)
}

fn write(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn transferlab(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("TRANSFERLAB_OUTPUT_ROOT")
        .output()
        .unwrap()
}

fn run(cfg: &Path, out: &Path) -> Output {
    transferlab(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
}

#[test]
fn validate_config_accepts_and_rejects() {
    let dir = tempfile::tempdir().unwrap();
    let good = write(dir.path(), "good.json", &config(&format!(r#"{{"kind": "gram", "tasks": {PAIR}}}"#)));
    let out = transferlab(&["validate-config", good.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("gram experiment, 2 seed(s)"));

    let bad = write(
        dir.path(),
        "bad.json",
        &config(&format!(r#"{{"kind": "gram", "tasks": {PAIR}, "extra": 3}}"#)),
    );
    let out = transferlab(&["validate-config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("invalid config") && err.contains("experiment.extra"), "{err}");

    let missing = transferlab(&["validate-config", dir.path().join("nope.json").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(1));
}

#[test]
fn repeated_runs_produce_identical_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "transfer.json",
        &config(&format!(
            r#"{{"kind": "transfer", "tasks": {PAIR}, "model": {{"type": "shallow", "m": 64, "kappa": 1.0}},
                "pretrain": {{"eta": 0.5, "steps": 40, "record_every": 10}},
                "finetune": {{"eta": 0.5, "steps": 20, "record_every": 10}}}}"#
        )),
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(run(&cfg, &a).status.code(), Some(0));
    assert_eq!(run(&cfg, &b).status.code(), Some(0));
    let (ma, mb) = (read_manifest(&a).unwrap(), read_manifest(&b).unwrap());
    assert_eq!(ma.status, "complete");
    assert!(ma.artifacts.iter().any(|x| x.path == "seed-2/finetuned.ckpt"));
    assert_eq!(ma.artifacts, mb.artifacts);
    assert_eq!(ma.config_sha256, mb.config_sha256);
}

#[test]
fn seed_override_runs_one_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "pre.json",
        &config(&format!(
            r#"{{"kind": "pretrain", "tasks": {PAIR}, "model": {{"type": "deep", "hidden": [5, 4], "scale": {{"rule": "he", "gain": 1.0}}}},
                "train": {{"eta": 0.05, "steps": 10}}}}"#
        )),
    );
    let out = dir.path().join("r");
    let o = transferlab(&["run", cfg.to_str().unwrap(), "--seed-override", "7", "--single-thread", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = read_manifest(&out).unwrap();
    assert_eq!(m.seeds, vec![7]);
    assert!(m.artifacts.iter().any(|x| x.path == "seed-7/pretrained.ckpt"));
    assert!(!m.artifacts.iter().any(|x| x.path.starts_with("seed-1/")));
}

#[test]
fn report_detects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "g.json", &config(&format!(r#"{{"kind": "gram", "tasks": {PAIR}}}"#)));
    let out = dir.path().join("run");
    assert_eq!(run(&cfg, &out).status.code(), Some(0));
    let ok = transferlab(&["report", out.to_str().unwrap()]);
    assert_eq!(ok.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("artifacts verified"));

    let m = read_manifest(&out).unwrap();
    let victim = out.join(&m.artifacts.last().unwrap().path);
    let mut bytes = std::fs::read(&victim).unwrap();
    bytes.push(b'\n');
    std::fs::write(&victim, bytes).unwrap();
    let bad = transferlab(&["report", out.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(1));

    std::fs::remove_file(&victim).unwrap();
    let gone = transferlab(&["report", out.to_str().unwrap()]);
    assert_eq!(gone.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&gone.stderr).contains("missing"));
}

#[test]
fn failed_verdict_exits_two_and_error_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    // an oversized step overshoots, so the contraction check fails
    let cfg = write(
        dir.path(),
        "conv.json",
        &config(&format!(
            r#"{{"kind": "verify-convergence", "tasks": {PAIR}, "m": 32, "kappa": 1.0, "eta": 6.0, "steps": 3}}"#
        )),
    );
    let out = dir.path().join("conv");
    let o = run(&cfg, &out);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL"));
    assert_eq!(transferlab(&["report", out.to_str().unwrap()]).status.code(), Some(2));

    // invalid task shape surfaces at run time as a partial run
    let bad = write(
        dir.path(),
        "bad.json",
        &config(r#"{"kind": "gram", "tasks": {"type": "single", "n": 3, "d": 1, "seed": 1,
            "labels": {"kind": "constant", "parameters": [0.5]}}}"#),
    );
    let out = dir.path().join("bad");
    let o = run(&bad, &out);
    assert_eq!(o.status.code(), Some(1));
    let m = read_manifest(&out).unwrap();
    assert_eq!(m.status, "partial");
    assert!(m.error.is_some());
    assert_eq!(transferlab(&["report", out.to_str().unwrap()]).status.code(), Some(1));
}
