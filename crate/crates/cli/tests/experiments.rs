//! Experiment-level integration tests beyond the acceptance suite: the
//! conv-model path and the Adam optimizer, each driven through the
//! experiment runner.

use s2fp8_cli::config::ExperimentConfig;
use s2fp8_cli::experiment::run_experiment;

fn parse(json: &str) -> ExperimentConfig {
    serde_json::from_str(json).unwrap()
}

#[test]
fn conv_model_trains_on_image_blobs() {
    // 16 features reshaped to 4x4x1 images, one conv layer plus a dense
    // head. Blob classes are separable, so both fp32 and s2fp8 should
    // reach high accuracy with shared hyperparameters.
    let cfg = parse(
        r#"{
  "seed": 33, "epochs": 6, "batch_size": 32,
  "dataset": {"kind": "blobs", "train": 256, "val": 128, "features": 16, "classes": 2, "separation": 8.0},
  "model": {"hidden": [16], "bias": true, "conv": {"image": [4, 4, 1], "kernel": 3, "filters": 4, "stride": 1, "pad": 1}},
  "optimizer": {"kind": "sgd_momentum", "lr": 0.05, "momentum": 0.9, "lr_decay_epochs": [3], "lr_decay_factor": 0.1},
  "runs": [{"id": "fp32", "mode": "fp32"}, {"id": "s2fp8", "mode": "s2fp8"}],
  "tracked_tensors": ["conv0.w", "conv0.dw", "dense0.w"]
}"#,
    );
    let dir = tempfile::tempdir().unwrap();
    let summary = run_experiment(&cfg, dir.path()).unwrap();
    for run in &summary.runs {
        assert_eq!(run.status, "completed", "{}", run.id);
        let acc = run.final_val_acc.unwrap();
        assert!(acc >= 0.95, "{} accuracy {acc}", run.id);
    }
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    assert!(csv.lines().next().unwrap().contains("conv0.w.alpha"));
}

#[test]
fn adam_trains_blobs() {
    let cfg = parse(
        r#"{
  "seed": 12, "epochs": 6, "batch_size": 32,
  "dataset": {"kind": "blobs", "train": 256, "val": 128, "features": 2, "classes": 3, "separation": 8.0},
  "model": {"hidden": [16], "bias": true},
  "optimizer": {"kind": "adam", "lr": 0.01},
  "runs": [{"id": "fp32", "mode": "fp32"}, {"id": "s2fp8", "mode": "s2fp8"}]
}"#,
    );
    let dir = tempfile::tempdir().unwrap();
    let summary = run_experiment(&cfg, dir.path()).unwrap();
    for run in &summary.runs {
        assert_eq!(run.status, "completed", "{}", run.id);
        let acc = run.final_val_acc.unwrap();
        assert!(acc >= 0.95, "{} accuracy {acc}", run.id);
    }
}

#[test]
fn trains_from_idx_files() {
    // Synthetic 6x6 images: class 0 lights the top rows, class 1 the
    // bottom rows. Written as real IDX files and trained through the
    // config path.
    let dir = tempfile::tempdir().unwrap();
    let write_idx = |name: &str, images: bool, n: usize, payload: Vec<u8>| {
        let mut bytes = Vec::new();
        if images {
            bytes.extend_from_slice(&0x0000_0803u32.to_be_bytes());
            bytes.extend_from_slice(&(n as u32).to_be_bytes());
            bytes.extend_from_slice(&6u32.to_be_bytes());
            bytes.extend_from_slice(&6u32.to_be_bytes());
        } else {
            bytes.extend_from_slice(&0x0000_0801u32.to_be_bytes());
            bytes.extend_from_slice(&(n as u32).to_be_bytes());
        }
        bytes.extend_from_slice(&payload);
        let path = dir.path().join(name);
        std::fs::write(&path, bytes).unwrap();
        path
    };
    let make_split = |n: usize, salt: u8| {
        let mut pixels = Vec::with_capacity(n * 36);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let class = (i % 2) as u8;
            for row in 0..6u8 {
                for col in 0..6u8 {
                    let lit = if class == 0 { row < 3 } else { row >= 3 };
                    let noise = (i as u8)
                        .wrapping_mul(31)
                        .wrapping_add(row * 7 + col + salt)
                        % 40;
                    pixels.push(if lit { 200 + noise / 2 } else { noise });
                }
            }
            labels.push(class);
        }
        (pixels, labels)
    };
    let (train_px, train_lb) = make_split(128, 1);
    let (val_px, val_lb) = make_split(64, 2);
    let cfg = parse(&format!(
        r#"{{
  "seed": 4, "epochs": 4, "batch_size": 16,
  "dataset": {{"kind": "idx",
    "train_images": {:?}, "train_labels": {:?},
    "val_images": {:?}, "val_labels": {:?}, "classes": 2}},
  "model": {{"hidden": [16], "bias": true}},
  "optimizer": {{"kind": "sgd_momentum", "lr": 0.05, "momentum": 0.9}},
  "runs": [{{"id": "fp32", "mode": "fp32"}}, {{"id": "s2fp8", "mode": "s2fp8"}}]
}}"#,
        write_idx("train-images", true, 128, train_px),
        write_idx("train-labels", false, 128, train_lb),
        write_idx("val-images", true, 64, val_px),
        write_idx("val-labels", false, 64, val_lb),
    ));
    let out = dir.path().join("results");
    let summary = run_experiment(&cfg, &out).unwrap();
    for run in &summary.runs {
        assert_eq!(run.status, "completed", "{}", run.id);
        assert!(run.final_val_acc.unwrap() >= 0.95, "{}", run.id);
    }
}

#[test]
fn exponential_loss_scale_schedule_runs() {
    let cfg = parse(
        r#"{
  "seed": 9, "epochs": 4, "batch_size": 32,
  "dataset": {"kind": "blobs", "train": 128, "val": 64, "features": 2, "classes": 2, "separation": 8.0},
  "model": {"hidden": [8], "bias": true},
  "optimizer": {"kind": "sgd_momentum", "lr": 0.05, "momentum": 0.9},
  "runs": [
    {"id": "fp32", "mode": "fp32"},
    {"id": "fp8_ls_exp", "mode": "fp8_loss_scaled", "loss_scale": 4.0, "loss_scale_growth": 2.0}
  ]
}"#,
    );
    let dir = tempfile::tempdir().unwrap();
    let summary = run_experiment(&cfg, dir.path()).unwrap();
    let exp = summary.runs.iter().find(|r| r.id == "fp8_ls_exp").unwrap();
    assert_eq!(exp.status, "completed");
    assert!(exp.final_val_acc.unwrap() >= 0.95);
}
