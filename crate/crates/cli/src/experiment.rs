//! Experiment execution: one dataset, one seed, several precision modes,
//! a combined per-step metrics CSV, and a JSON summary of final accuracies
//! and deltas against the `fp32` run.

use crate::config::{ExperimentConfig, OptimizerSpec};
use crate::{dataset, CliError};
use s2fp8_core::nn::{self, Optimizer, RunStatus, StepRecord, TrainRun};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub id: String,
    pub mode: String,
    /// `"completed"` or `"diverged"`.
    pub status: String,
    pub steps: usize,
    pub final_loss: Option<f32>,
    pub final_train_acc: Option<f32>,
    pub final_val_acc: Option<f32>,
    /// `final_val_acc - fp32 final_val_acc`, when an `fp32` run exists.
    pub delta_vs_fp32: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub runs: Vec<RunSummary>,
}

/// Runs every configured mode with identical seed, data and
/// hyperparameters, writing `metrics.csv` and `summary.json` to `out_dir`.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: &Path,
) -> Result<ExperimentSummary, CliError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let data = dataset::build_dataset(&cfg.dataset, cfg.seed)?;
    let input_features = data.train_x.len() / data.train_x.shape()[0];

    let mut results: Vec<(String, String, TrainRun)> = Vec::new();
    let mut tracked_names: Option<Vec<String>> = None;
    for run in &cfg.runs {
        let mut model = cfg.build_model(input_features)?;
        let mut train_cfg = cfg.train_config(&model)?;
        if let Some(growth) = run.loss_scale_growth {
            train_cfg.loss_scale_growth = growth as f32;
        }
        if tracked_names.is_none() {
            tracked_names = Some(train_cfg.tracked.iter().map(|t| t.name.clone()).collect());
        }
        let mut opt = match &cfg.optimizer {
            OptimizerSpec::SgdMomentum { momentum, .. } => {
                Optimizer::sgd_momentum(*momentum as f32, &model)
            }
            OptimizerSpec::Adam { .. } => Optimizer::adam(&model),
        };
        let q = run.quant_config();
        let outcome = nn::train(&mut model, &data, &mut opt, &q, &train_cfg)?;
        results.push((run.id.clone(), q.mode.as_str().to_string(), outcome));
    }

    let tracked_names = tracked_names.unwrap_or_default();
    write_metrics_csv(
        &mut std::io::BufWriter::new(std::fs::File::create(out_dir.join("metrics.csv"))?),
        &tracked_names,
        &results,
    )?;

    let summary = summarize(cfg, &results);
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| CliError::io(format!("cannot serialize summary: {e}")))?;
    std::fs::write(out_dir.join("summary.json"), json)?;
    Ok(summary)
}

fn summarize(cfg: &ExperimentConfig, results: &[(String, String, TrainRun)]) -> ExperimentSummary {
    let fp32_val: Option<f32> = results
        .iter()
        .find(|(id, _, _)| id == "fp32")
        .and_then(|(_, _, run)| run.records.last())
        .map(|r| r.val_acc);
    let runs = results
        .iter()
        .map(|(id, mode, run)| {
            let last = run.records.last();
            let status = match run.status {
                RunStatus::Completed => "completed",
                RunStatus::Diverged { .. } => "diverged",
            };
            let final_val_acc = last.map(|r| r.val_acc).filter(|v| v.is_finite());
            RunSummary {
                id: id.clone(),
                mode: mode.clone(),
                status: status.to_string(),
                steps: run.records.len(),
                final_loss: last.map(|r| r.loss),
                final_train_acc: last.map(|r| r.train_acc),
                final_val_acc,
                delta_vs_fp32: match (id.as_str(), final_val_acc, fp32_val) {
                    ("fp32", _, _) => None,
                    (_, Some(v), Some(f)) => Some(v as f64 - f as f64),
                    _ => None,
                },
            }
        })
        .collect();
    ExperimentSummary {
        seed: cfg.seed,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        runs,
    }
}

pub fn csv_header(tracked_names: &[String]) -> String {
    let mut header = String::from("run_id,step,epoch,loss,train_acc,val_acc,batch_hash");
    for name in tracked_names {
        for field in ["mu", "m", "alpha", "beta"] {
            header.push(',');
            header.push_str(name);
            header.push('.');
            header.push_str(field);
        }
    }
    header
}

fn write_metrics_csv<W: Write>(
    w: &mut W,
    tracked_names: &[String],
    results: &[(String, String, TrainRun)],
) -> Result<(), CliError> {
    writeln!(w, "{}", csv_header(tracked_names))?;
    for (id, _, run) in results {
        for rec in &run.records {
            write!(
                w,
                "{id},{},{},{},{},{},{}",
                rec.step, rec.epoch, rec.loss, rec.train_acc, rec.val_acc, rec.batch_hash
            )?;
            for t in &rec.tracked {
                write!(w, ",{},{},{},{}", t.mu, t.m, t.alpha, t.beta)?;
            }
            // A divergence record carries no tracked stats; pad so the row
            // still parses.
            for _ in rec.tracked.len()..tracked_names.len() {
                write!(w, ",NaN,NaN,NaN,NaN")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

/// One parsed `metrics.csv` row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub run_id: String,
    pub record: StepRecord,
}

/// Parses a data row against the header, recovering the full [`StepRecord`].
pub fn parse_metrics_row(header: &str, line: &str) -> Result<MetricsRow, CliError> {
    let cols: Vec<&str> = header.split(',').collect();
    let vals: Vec<&str> = line.split(',').collect();
    if cols.len() != vals.len() {
        return Err(CliError::io(format!(
            "row has {} fields, header has {}",
            vals.len(),
            cols.len()
        )));
    }
    if cols.len() < 7 || cols[..7] != ["run_id", "step", "epoch", "loss", "train_acc", "val_acc", "batch_hash"] {
        return Err(CliError::io("unexpected metrics header".to_string()));
    }
    let parse_f32 = |s: &str| -> Result<f32, CliError> {
        s.parse()
            .map_err(|e| CliError::io(format!("bad float {s:?}: {e}")))
    };
    let parse_f64 = |s: &str| -> Result<f64, CliError> {
        s.parse()
            .map_err(|e| CliError::io(format!("bad float {s:?}: {e}")))
    };
    let mut tracked = Vec::new();
    let mut i = 7;
    while i + 4 <= cols.len() {
        let name = cols[i]
            .strip_suffix(".mu")
            .ok_or_else(|| CliError::io(format!("unexpected column {:?}", cols[i])))?;
        tracked.push(s2fp8_core::nn::TrackedStats {
            name: name.to_string(),
            mu: parse_f64(vals[i])?,
            m: parse_f64(vals[i + 1])?,
            alpha: parse_f64(vals[i + 2])?,
            beta: parse_f64(vals[i + 3])?,
        });
        i += 4;
    }
    Ok(MetricsRow {
        run_id: vals[0].to_string(),
        record: StepRecord {
            step: vals[1]
                .parse()
                .map_err(|e| CliError::io(format!("bad step: {e}")))?,
            epoch: vals[2]
                .parse()
                .map_err(|e| CliError::io(format!("bad epoch: {e}")))?,
            loss: parse_f32(vals[3])?,
            train_acc: parse_f32(vals[4])?,
            val_acc: parse_f32(vals[5])?,
            batch_hash: vals[6]
                .parse()
                .map_err(|e| CliError::io(format!("bad batch hash: {e}")))?,
            tracked,
        },
    })
}
