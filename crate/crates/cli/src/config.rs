//! JSON experiment configuration: dataset, model, optimizer, and the list
//! of precision-mode runs sharing one seed and one set of hyperparameters.

use crate::CliError;
use s2fp8_core::nn::{Model, QuantConfig, QuantMode, TrackedTensor, TrainConfig};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    pub optimizer: OptimizerSpec,
    pub runs: Vec<RunSpec>,
    /// Tensor series to log each step, e.g. `"dense0.w"` or `"dense0.dw"`.
    /// Defaults to every trainable weight and its gradient, capped at 8.
    #[serde(default)]
    pub tracked_tensors: Option<Vec<String>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Gaussian class clusters, linearly separable for large separations.
    Blobs {
        train: usize,
        val: usize,
        features: usize,
        classes: usize,
        /// Distance of each class center from the origin, in units of the
        /// within-cluster standard deviation.
        separation: f64,
    },
    /// Class-signed features whose log2 magnitudes are uniform over
    /// `[log2_lo, log2_hi]` — far outside FP8's range for the default
    /// interval, while staying S2FP8-representable.
    LogUniformSpectrum {
        train: usize,
        val: usize,
        features: usize,
        classes: usize,
        log2_lo: f64,
        log2_hi: f64,
    },
    /// IDX image/label files.
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        val_images: PathBuf,
        val_labels: PathBuf,
        classes: usize,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Hidden dense layer widths; empty for a linear model.
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default = "default_true")]
    pub bias: bool,
    /// Optional leading conv layer.
    #[serde(default)]
    pub conv: Option<ConvSpec>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    /// Input image shape `[h, w, c]`.
    pub image: [usize; 3],
    pub kernel: usize,
    pub filters: usize,
    #[serde(default = "default_one")]
    pub stride: usize,
    #[serde(default)]
    pub pad: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerSpec {
    SgdMomentum {
        lr: f64,
        momentum: f64,
        #[serde(default)]
        lr_decay_epochs: Vec<usize>,
        #[serde(default = "default_decay")]
        lr_decay_factor: f64,
    },
    Adam {
        lr: f64,
        #[serde(default)]
        lr_decay_epochs: Vec<usize>,
        #[serde(default = "default_decay")]
        lr_decay_factor: f64,
    },
}

impl OptimizerSpec {
    pub fn lr(&self) -> f64 {
        match self {
            OptimizerSpec::SgdMomentum { lr, .. } | OptimizerSpec::Adam { lr, .. } => *lr,
        }
    }

    pub fn decay(&self) -> (Vec<usize>, f64) {
        match self {
            OptimizerSpec::SgdMomentum {
                lr_decay_epochs,
                lr_decay_factor,
                ..
            }
            | OptimizerSpec::Adam {
                lr_decay_epochs,
                lr_decay_factor,
                ..
            } => (lr_decay_epochs.clone(), *lr_decay_factor),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeSpec {
    Fp32,
    Fp8Rne,
    Fp8LossScaled,
    S2fp8,
}

impl ModeSpec {
    pub fn to_mode(self) -> QuantMode {
        match self {
            ModeSpec::Fp32 => QuantMode::Fp32,
            ModeSpec::Fp8Rne => QuantMode::Fp8Rne,
            ModeSpec::Fp8LossScaled => QuantMode::Fp8LossScaled,
            ModeSpec::S2fp8 => QuantMode::S2Fp8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub id: String,
    pub mode: ModeSpec,
    /// Loss scale; defaults to 1.
    #[serde(default)]
    pub loss_scale: Option<f64>,
    /// Multiplies the loss scale at each epoch start after the first
    /// (fixed exponential schedule); defaults to 1 (constant).
    #[serde(default)]
    pub loss_scale_growth: Option<f64>,
    /// S2FP8 transformed peak; defaults to 15.
    #[serde(default)]
    pub target_max: Option<f64>,
}

impl RunSpec {
    pub fn quant_config(&self) -> QuantConfig {
        let mut q = QuantConfig::with_mode(self.mode.to_mode());
        if let Some(ls) = self.loss_scale {
            q = q.loss_scale(ls as f32);
        }
        if let Some(tm) = self.target_max {
            q = q.target_max(tm);
        }
        q
    }
}

fn default_true() -> bool {
    true
}

fn default_one() -> usize {
    1
}

fn default_decay() -> f64 {
    0.1
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::io(format!("cannot read {}: {e}", path.display())))?;
    let cfg: ExperimentConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::io(format!("cannot parse {}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.epochs == 0 {
            return Err(CliError::config("epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(CliError::config("batch_size must be at least 1"));
        }
        if self.runs.is_empty() {
            return Err(CliError::config("at least one run is required"));
        }
        let mut ids = std::collections::HashSet::new();
        for run in &self.runs {
            if run.id.is_empty() {
                return Err(CliError::config("run ids must be non-empty"));
            }
            if !ids.insert(&run.id) {
                return Err(CliError::config(format!("duplicate run id {:?}", run.id)));
            }
            for (field, value) in [
                ("loss_scale", run.loss_scale),
                ("loss_scale_growth", run.loss_scale_growth),
            ] {
                if let Some(v) = value {
                    if !(v.is_finite() && v > 0.0) {
                        return Err(CliError::config(format!(
                            "run {:?}: {field} must be positive",
                            run.id
                        )));
                    }
                }
            }
        }
        if !(self.optimizer.lr().is_finite() && self.optimizer.lr() > 0.0) {
            return Err(CliError::config("learning rate must be positive"));
        }
        match &self.dataset {
            DatasetSpec::Blobs {
                train,
                val,
                features,
                classes,
                ..
            }
            | DatasetSpec::LogUniformSpectrum {
                train,
                val,
                features,
                classes,
                ..
            } => {
                if *train == 0 || *val == 0 {
                    return Err(CliError::config("train and val sizes must be positive"));
                }
                if *features == 0 || *classes < 2 {
                    return Err(CliError::config(
                        "features must be positive and classes at least 2",
                    ));
                }
            }
            DatasetSpec::Idx {
                train_images,
                train_labels,
                val_images,
                val_labels,
                classes,
            } => {
                if *classes < 2 {
                    return Err(CliError::config("classes must be at least 2"));
                }
                for path in [train_images, train_labels, val_images, val_labels] {
                    if !path.exists() {
                        return Err(CliError::config(format!(
                            "referenced file does not exist: {}",
                            path.display()
                        )));
                    }
                }
            }
        }
        if let DatasetSpec::LogUniformSpectrum { log2_lo, log2_hi, .. } = &self.dataset {
            if !log2_lo.is_finite() || !log2_hi.is_finite() || log2_lo >= log2_hi {
                return Err(CliError::config(
                    "log2_lo and log2_hi must be finite with log2_lo below log2_hi",
                ));
            }
        }
        if let Some(tracked) = &self.tracked_tensors {
            if tracked.len() > 8 {
                return Err(CliError::config("at most 8 tracked tensor series"));
            }
        }
        Ok(())
    }

    pub fn feature_count(&self) -> usize {
        match &self.dataset {
            DatasetSpec::Blobs { features, .. }
            | DatasetSpec::LogUniformSpectrum { features, .. } => *features,
            DatasetSpec::Idx { .. } => 0, // taken from the files
        }
    }

    pub fn class_count(&self) -> usize {
        match &self.dataset {
            DatasetSpec::Blobs { classes, .. }
            | DatasetSpec::LogUniformSpectrum { classes, .. }
            | DatasetSpec::Idx { classes, .. } => *classes,
        }
    }

    /// Builds the model for one run; every run uses the same seed, so all
    /// modes start from identical weights.
    pub fn build_model(&self, input_features: usize) -> Result<Model, CliError> {
        let classes = self.class_count();
        match &self.model.conv {
            None => Ok(Model::mlp(
                input_features,
                &self.model.hidden,
                classes,
                self.model.bias,
                self.seed,
            )),
            Some(conv) => {
                let [h, w, c] = conv.image;
                if h * w * c != input_features {
                    return Err(CliError::config(format!(
                        "conv image {h}x{w}x{c} does not match {input_features} input features"
                    )));
                }
                Ok(Model::conv_net(
                    conv.image,
                    conv.kernel,
                    conv.filters,
                    conv.stride,
                    conv.pad,
                    &self.model.hidden,
                    classes,
                    self.model.bias,
                    self.seed,
                )?)
            }
        }
    }

    pub fn train_config(&self, model: &Model) -> Result<TrainConfig, CliError> {
        let (decay_epochs, decay_factor) = self.optimizer.decay();
        let mut cfg = TrainConfig::new(
            self.epochs,
            self.batch_size,
            self.seed,
            self.optimizer.lr() as f32,
        );
        cfg.lr_decay_epochs = decay_epochs;
        cfg.lr_decay_factor = decay_factor as f32;
        cfg.tracked = match &self.tracked_tensors {
            None => s2fp8_core::nn::default_tracked(model),
            Some(names) => names
                .iter()
                .map(|n| resolve_tracked(model, n))
                .collect::<Result<Vec<_>, _>>()?,
        };
        Ok(cfg)
    }
}

/// Parses `dense0.w` / `dense0.dw` into a layer reference.
fn resolve_tracked(model: &Model, name: &str) -> Result<TrackedTensor, CliError> {
    let (base, grad) = if let Some(base) = name.strip_suffix(".dw") {
        (base, true)
    } else if let Some(base) = name.strip_suffix(".w") {
        (base, false)
    } else {
        return Err(CliError::config(format!(
            "tracked tensor {name:?} must end in .w or .dw"
        )));
    };
    for (layer, lname) in model.trainable() {
        if lname == base {
            return Ok(TrackedTensor {
                layer,
                grad,
                name: name.to_string(),
            });
        }
    }
    Err(CliError::config(format!(
        "tracked tensor {name:?} does not name a trainable layer"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(runs: &str) -> String {
        format!(
            r#"{{
  "seed": 7, "epochs": 2, "batch_size": 16,
  "dataset": {{"kind": "blobs", "train": 64, "val": 32, "features": 2, "classes": 2, "separation": 8.0}},
  "model": {{"hidden": [8]}},
  "optimizer": {{"kind": "sgd_momentum", "lr": 0.05, "momentum": 0.9}},
  "runs": {runs}
}}"#
        )
    }

    #[test]
    fn parses_and_validates() {
        let cfg: ExperimentConfig =
            serde_json::from_str(&minimal(r#"[{"id": "fp32", "mode": "fp32"}]"#)).unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.class_count(), 2);
        let model = cfg.build_model(2).unwrap();
        let tc = cfg.train_config(&model).unwrap();
        assert_eq!(tc.tracked.len(), 4);
    }

    #[test]
    fn rejects_duplicate_run_ids() {
        let cfg: ExperimentConfig = serde_json::from_str(&minimal(
            r#"[{"id": "a", "mode": "fp32"}, {"id": "a", "mode": "s2fp8"}]"#,
        ))
        .unwrap();
        assert!(matches!(cfg.validate(), Err(CliError::Config(_))));
    }

    #[test]
    fn rejects_unknown_fields() {
        let bad = minimal(r#"[{"id": "a", "mode": "fp32", "typo_field": 3}]"#);
        assert!(serde_json::from_str::<ExperimentConfig>(&bad).is_err());
    }

    #[test]
    fn resolves_tracked_names() {
        let cfg: ExperimentConfig =
            serde_json::from_str(&minimal(r#"[{"id": "fp32", "mode": "fp32"}]"#)).unwrap();
        let model = cfg.build_model(2).unwrap();
        let t = resolve_tracked(&model, "dense1.dw").unwrap();
        assert!(t.grad);
        assert_eq!(t.layer, 2); // dense, relu, dense
        assert!(resolve_tracked(&model, "dense9.w").is_err());
        assert!(resolve_tracked(&model, "dense0").is_err());
    }
}
