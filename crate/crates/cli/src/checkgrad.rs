//! The `checkgrad` subcommand: compare `Fp32`-mode backprop on the
//! configured model against central finite differences.

use crate::config::ExperimentConfig;
use crate::{dataset, CliError};
use s2fp8_core::nn::gradcheck::{self, GradCheckReport};

pub const MAX_PARAMS: usize = 1000;

pub fn run_checkgrad(cfg: &ExperimentConfig) -> Result<GradCheckReport, CliError> {
    cfg.validate()?;
    let data = dataset::build_dataset(&cfg.dataset, cfg.seed)?;
    let input_features = data.train_x.len() / data.train_x.shape()[0];
    let model = cfg.build_model(input_features)?;
    if model.param_count() > MAX_PARAMS {
        return Err(CliError::config(format!(
            "checkgrad expects a small model (<= {MAX_PARAMS} parameters), got {}",
            model.param_count()
        )));
    }
    let rows: Vec<usize> = (0..cfg.batch_size.min(data.train_x.shape()[0])).collect();
    let batch = data.train_x.gather_rows(&rows);
    let labels: Vec<usize> = rows.iter().map(|&i| data.train_y[i]).collect();
    Ok(gradcheck::check_gradients(
        &model,
        &batch,
        &labels,
        gradcheck::DEFAULT_THRESHOLD,
    )?)
}

pub fn render(report: &GradCheckReport) -> String {
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    let worst = report
        .worst
        .as_ref()
        .map(|(name, i)| format!(" (worst at {name}[{i}])"))
        .unwrap_or_default();
    format!(
        "checkgrad: max relative error {:e} over {} parameters, threshold {:e}{worst}: {verdict}\n",
        report.max_rel_err, report.params_checked, report.threshold
    )
}
