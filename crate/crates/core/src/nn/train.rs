//! The training loop: shuffled minibatches with a fixed seed, per-step
//! metrics, per-tensor statistics tracking, and divergence handling.

use super::{apply_update, backward, forward, Model, Optimizer, QuantConfig, TrainError};
use crate::codec;
use crate::tensor::{softmax_cross_entropy, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Dataset {
    /// `[n, features...]`
    pub train_x: Tensor,
    pub train_y: Vec<usize>,
    pub val_x: Tensor,
    pub val_y: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.train_x.shape()[0] != self.train_y.len() {
            return Err(TrainError::Config(format!(
                "{} training rows but {} labels",
                self.train_x.shape()[0],
                self.train_y.len()
            )));
        }
        if self.val_x.shape()[0] != self.val_y.len() {
            return Err(TrainError::Config(format!(
                "{} validation rows but {} labels",
                self.val_x.shape()[0],
                self.val_y.len()
            )));
        }
        if let Some(&bad) = self
            .train_y
            .iter()
            .chain(&self.val_y)
            .find(|&&y| y >= self.classes)
        {
            return Err(TrainError::Config(format!(
                "label {bad} out of range for {} classes",
                self.classes
            )));
        }
        Ok(())
    }
}

/// A tensor whose statistics are logged each step: a trainable layer's
/// weights, or the gradient produced for them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrackedTensor {
    pub layer: usize,
    pub grad: bool,
    pub name: String,
}

/// Default tracking: every dense/conv weight and its gradient, capped at 8
/// series.
pub fn default_tracked(model: &Model) -> Vec<TrackedTensor> {
    let mut out = Vec::new();
    for (layer, name) in model.trainable() {
        out.push(TrackedTensor {
            layer,
            grad: false,
            name: format!("{name}.w"),
        });
        out.push(TrackedTensor {
            layer,
            grad: true,
            name: format!("{name}.dw"),
        });
    }
    out.truncate(8);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackedStats {
    pub name: String,
    pub mu: f64,
    pub m: f64,
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub loss: f32,
    pub train_acc: f32,
    pub val_acc: f32,
    /// FNV-1a hash of the batch contents, for cross-run batch discipline
    /// checks.
    pub batch_hash: u64,
    pub tracked: Vec<TrackedStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Completed,
    /// The loss went non-finite at this step; the run stopped there.
    Diverged { step: u64 },
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub records: Vec<StepRecord>,
    pub status: RunStatus,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub lr: f32,
    /// Epochs at whose start the learning rate is multiplied by
    /// `lr_decay_factor`.
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f32,
    /// Fixed exponential loss-scale schedule: the loss scale is multiplied
    /// by this factor at the start of every epoch after the first. 1 (the
    /// default) keeps the scale constant.
    pub loss_scale_growth: f32,
    pub tracked: Vec<TrackedTensor>,
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, seed: u64, lr: f32) -> TrainConfig {
        TrainConfig {
            epochs,
            batch_size,
            seed,
            lr,
            lr_decay_epochs: Vec::new(),
            lr_decay_factor: 0.1,
            loss_scale_growth: 1.0,
            tracked: Vec::new(),
        }
    }

    fn validate(&self) -> Result<(), TrainError> {
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(TrainError::Config(format!(
                "learning rate must be finite and positive, got {}",
                self.lr
            )));
        }
        if !(self.loss_scale_growth.is_finite() && self.loss_scale_growth > 0.0) {
            return Err(TrainError::Config(format!(
                "loss_scale_growth must be finite and positive, got {}",
                self.loss_scale_growth
            )));
        }
        Ok(())
    }
}

/// Fraction of rows whose argmax logit equals the label. Ties break to the
/// first index.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f32 {
    let classes = *logits.shape().last().unwrap();
    let mut hits = 0usize;
    for (row, &label) in labels.iter().enumerate() {
        let r = &logits.data()[row * classes..(row + 1) * classes];
        let mut best = 0usize;
        for (j, &v) in r.iter().enumerate() {
            if v > r[best] {
                best = j;
            }
        }
        if best == label {
            hits += 1;
        }
    }
    hits as f32 / labels.len().max(1) as f32
}

/// Forward pass over a dataset split, returning its accuracy.
pub fn evaluate(
    model: &Model,
    x: &Tensor,
    y: &[usize],
    q: &QuantConfig,
) -> Result<f32, TrainError> {
    let (logits, _) = forward(model, x, q)?;
    Ok(accuracy(&logits, y))
}

fn fnv1a64(state: &mut u64, bytes: &[u8]) {
    for &b in bytes {
        *state ^= b as u64;
        *state = state.wrapping_mul(0x100000001b3);
    }
}

fn batch_hash(x: &Tensor, y: &[usize]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &v in x.data() {
        fnv1a64(&mut h, &v.to_le_bytes());
    }
    for &label in y {
        fnv1a64(&mut h, &(label as u64).to_le_bytes());
    }
    h
}

/// Runs forward/backward/update over shuffled minibatches.
///
/// A non-finite loss (or a non-finite tensor hitting a truncation hook) ends
/// the run with [`RunStatus::Diverged`] rather than an error. Fixed seed and
/// config give bit-identical records across runs, and the batch sequence
/// depends only on the seed, never on the precision mode.
pub fn train(
    model: &mut Model,
    data: &Dataset,
    opt: &mut Optimizer,
    q: &QuantConfig,
    cfg: &TrainConfig,
) -> Result<TrainRun, TrainError> {
    data.validate()?;
    cfg.validate()?;
    q.validate()?;
    let n = data.train_x.shape()[0];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::new();
    let mut step = 0u64;
    let mut lr = cfg.lr;
    let mut q = *q;
    for epoch in 0..cfg.epochs {
        if cfg.lr_decay_epochs.contains(&epoch) {
            lr *= cfg.lr_decay_factor;
        }
        if epoch > 0 {
            q.loss_scale *= cfg.loss_scale_growth;
        }
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let bx = data.train_x.gather_rows(chunk);
            let by: Vec<usize> = chunk.iter().map(|&i| data.train_y[i]).collect();
            let hash = batch_hash(&bx, &by);
            match train_step(model, data, opt, &q, cfg, &bx, &by, lr, step, epoch, hash) {
                Ok(record) => {
                    let diverged = !record.loss.is_finite();
                    records.push(record);
                    if diverged {
                        return Ok(TrainRun {
                            records,
                            status: RunStatus::Diverged { step },
                        });
                    }
                }
                Err(e) if e.is_divergence() => {
                    return Ok(TrainRun {
                        records,
                        status: RunStatus::Diverged { step },
                    });
                }
                Err(e) => return Err(e),
            }
            step += 1;
        }
    }
    Ok(TrainRun {
        records,
        status: RunStatus::Completed,
    })
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    model: &mut Model,
    data: &Dataset,
    opt: &mut Optimizer,
    q: &QuantConfig,
    cfg: &TrainConfig,
    bx: &Tensor,
    by: &[usize],
    lr: f32,
    step: u64,
    epoch: usize,
    hash: u64,
) -> Result<StepRecord, TrainError> {
    let (logits, cache) = forward(model, bx, q)?;
    let (loss, loss_grad) = softmax_cross_entropy(&logits, by)?;
    let train_acc = accuracy(&logits, by);
    if !loss.is_finite() {
        return Ok(StepRecord {
            step,
            epoch,
            loss,
            train_acc,
            val_acc: f32::NAN,
            batch_hash: hash,
            tracked: Vec::new(),
        });
    }
    let grads = backward(model, &cache, &loss_grad, q)?;
    // Statistics are taken on the weights as used this step (pre-update)
    // and on the gradients as produced for it.
    let mut tracked = Vec::with_capacity(cfg.tracked.len());
    for t in &cfg.tracked {
        let tensor = if t.grad {
            grads.weights(t.layer).ok_or_else(|| {
                TrainError::Config(format!("tracked layer {} has no gradients", t.layer))
            })?
        } else {
            model.layers[t.layer]
                .params()
                .ok_or_else(|| {
                    TrainError::Config(format!("tracked layer {} has no weights", t.layer))
                })?
                .0
        };
        let s = codec::compute_statistics(tensor, q.target_max)?;
        tracked.push(TrackedStats {
            name: t.name.clone(),
            mu: s.log2_mean,
            m: s.log2_max,
            alpha: s.squeeze,
            beta: s.shift,
        });
    }
    apply_update(model, &grads, opt, lr, q)?;
    let val_acc = evaluate(model, &data.val_x, &data.val_y, q)?;
    Ok(StepRecord {
        step,
        epoch,
        loss,
        train_acc,
        val_acc,
        batch_hash: hash,
        tracked,
    })
}
