//! End-to-end tests of the `s2fp8` binary: subcommand output, file
//! workflows, and exit codes.

use s2fp8_core::tensor::{read_s2t1_file, write_s2t1_file};
use s2fp8_core::Tensor;
use std::path::Path;
use std::process::{Command, Output};

fn s2fp8(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_s2fp8"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn write_tensor(path: &Path, values: &[f32]) {
    let t = Tensor::new(vec![values.len()], values.to_vec()).unwrap();
    write_s2t1_file(path, &t).unwrap();
}

#[test]
fn formats_prints_the_table() {
    let out = s2fp8(&["formats"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("FP8"));
    assert!(text.contains("2^-16"));
    assert!(text.contains("(1-2^-3)*2^16"));
    assert!(text.contains("2^277"));
}

#[test]
fn quantize_reports_known_example() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.s2t1");
    let output = dir.path().join("out.s2t1");
    write_tensor(&input, &[1.0, 4.0]);
    let out = s2fp8(&[
        "quantize",
        "--in",
        input.to_str().unwrap(),
        "--mode",
        "s2fp8",
        "--out",
        output.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("alpha = 15"), "{text}");
    assert!(text.contains("beta = -15"), "{text}");
    assert!(text.contains("max_rel_err = 0"), "{text}");
    assert!(text.contains("flushed_to_zero = 0 / 2"), "{text}");
    let back = read_s2t1_file(&output).unwrap();
    assert_eq!(back.data(), &[1.0, 4.0]);
}

#[test]
fn quantize_flushes_spectrum_in_fp8_only() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("in.s2t1");
    let values: Vec<f32> = (0..64)
        .map(|i| (2.0f64.powf(-40.0 + 20.0 * i as f64 / 63.0)) as f32)
        .collect();
    write_tensor(&input, &values);

    let out_fp8 = dir.path().join("fp8.s2t1");
    let out = s2fp8(&[
        "quantize",
        "--in",
        input.to_str().unwrap(),
        "--mode",
        "fp8",
        "--out",
        out_fp8.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("flushed_to_zero = 64 / 64"));

    let out_s2 = dir.path().join("s2.s2f8");
    let out = s2fp8(&[
        "quantize",
        "--in",
        input.to_str().unwrap(),
        "--mode",
        "s2fp8",
        "--out",
        out_s2.to_str().unwrap(),
        "--container",
        "s2f8",
    ]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("flushed_to_zero = 0 / 64"));
    assert!(out_s2.exists());
}

#[test]
fn train_runs_a_minimal_config() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.json");
    std::fs::write(
        &config,
        r#"{
  "seed": 5, "epochs": 2, "batch_size": 16,
  "dataset": {"kind": "blobs", "train": 64, "val": 32, "features": 2, "classes": 2, "separation": 8.0},
  "model": {"hidden": [8]},
  "optimizer": {"kind": "sgd_momentum", "lr": 0.05, "momentum": 0.9},
  "runs": [{"id": "fp32", "mode": "fp32"}, {"id": "s2fp8", "mode": "s2fp8"}]
}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("results");
    let out = s2fp8(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out_dir.join("metrics.csv").exists());
    assert!(out_dir.join("summary.json").exists());
    let text = stdout(&out);
    assert!(text.contains("run fp32"));
    assert!(text.contains("run s2fp8"));
}

#[test]
fn checkgrad_passes_on_the_fixture_config() {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/checkgrad.json");
    let out = s2fp8(&["checkgrad", "--config", config.to_str().unwrap()]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("PASS"), "{text}");
}

#[test]
fn exit_codes_follow_the_contract() {
    // Usage errors exit 1.
    let out = s2fp8(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(1));
    let out = s2fp8(&["quantize", "--bogus-flag"]);
    assert_eq!(out.status.code(), Some(1));
    // Help exits 0.
    let out = s2fp8(&["--help"]);
    assert_eq!(out.status.code(), Some(0));

    // Missing or malformed files exit 2.
    let dir = tempfile::tempdir().unwrap();
    let out = s2fp8(&[
        "quantize",
        "--in",
        dir.path().join("missing.s2t1").to_str().unwrap(),
        "--mode",
        "fp8",
        "--out",
        dir.path().join("out.s2t1").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let bad = dir.path().join("bad.s2t1");
    std::fs::write(&bad, b"NOPE").unwrap();
    let out = s2fp8(&[
        "quantize",
        "--in",
        bad.to_str().unwrap(),
        "--mode",
        "fp8",
        "--out",
        dir.path().join("out.s2t1").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    let out = s2fp8(&[
        "train",
        "--config",
        dir.path().join("missing.json").to_str().unwrap(),
        "--out-dir",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));

    // Semantically invalid configuration exits 1.
    let dup = dir.path().join("dup.json");
    std::fs::write(
        &dup,
        r#"{
  "seed": 5, "epochs": 1, "batch_size": 16,
  "dataset": {"kind": "blobs", "train": 32, "val": 16, "features": 2, "classes": 2, "separation": 8.0},
  "model": {"hidden": []},
  "optimizer": {"kind": "sgd_momentum", "lr": 0.05, "momentum": 0.9},
  "runs": [{"id": "a", "mode": "fp32"}, {"id": "a", "mode": "s2fp8"}]
}"#,
    )
    .unwrap();
    let out = s2fp8(&[
        "train",
        "--config",
        dup.to_str().unwrap(),
        "--out-dir",
        dir.path().join("out2").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn diverged_runs_still_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("exp.json");
    // An absurd learning rate forces divergence.
    std::fs::write(
        &config,
        r#"{
  "seed": 3, "epochs": 5, "batch_size": 8,
  "dataset": {"kind": "blobs", "train": 64, "val": 32, "features": 2, "classes": 2, "separation": 8.0},
  "model": {"hidden": [8]},
  "optimizer": {"kind": "sgd_momentum", "lr": 1.0e30, "momentum": 0.9},
  "runs": [{"id": "fp32", "mode": "fp32"}]
}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("results");
    let out = s2fp8(&[
        "train",
        "--config",
        config.to_str().unwrap(),
        "--out-dir",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0));
    let summary = std::fs::read_to_string(out_dir.join("summary.json")).unwrap();
    assert!(summary.contains("\"diverged\""), "{summary}");
}
