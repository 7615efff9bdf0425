//! SGD-with-momentum and Adam over the master weights. All accumulator
//! arithmetic is `f32`, matching the weights.

use super::{Gradients, LayerGrads, Model, QuantConfig, TrainError};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OptimizerKind {
    SgdMomentum { momentum: f32 },
    Adam { beta1: f32, beta2: f32, epsilon: f32 },
}

#[derive(Debug, Clone)]
struct ParamState {
    /// Momentum (SGD) or first moment (Adam).
    v: Tensor,
    /// Second moment, Adam only.
    v2: Option<Tensor>,
}

#[derive(Debug, Clone)]
struct LayerState {
    weights: ParamState,
    bias: Option<ParamState>,
}

#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    steps: u64,
    slots: Vec<Option<LayerState>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, model: &Model) -> Optimizer {
        let adam = matches!(kind, OptimizerKind::Adam { .. });
        let state_for = |t: &Tensor| ParamState {
            v: Tensor::zeros(t.shape().to_vec()),
            v2: adam.then(|| Tensor::zeros(t.shape().to_vec())),
        };
        let slots = model
            .layers
            .iter()
            .map(|layer| {
                layer.params().map(|(w, b)| LayerState {
                    weights: state_for(w),
                    bias: b.map(state_for),
                })
            })
            .collect();
        Optimizer {
            kind,
            steps: 0,
            slots,
        }
    }

    pub fn sgd_momentum(momentum: f32, model: &Model) -> Optimizer {
        Optimizer::new(OptimizerKind::SgdMomentum { momentum }, model)
    }

    pub fn adam(model: &Model) -> Optimizer {
        Optimizer::new(
            OptimizerKind::Adam {
                beta1: 0.9,
                beta2: 0.999,
                epsilon: 1e-8,
            },
            model,
        )
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    #[cfg(test)]
    fn momentum_of(&self, layer: usize) -> &Tensor {
        &self.slots[layer].as_ref().unwrap().weights.v
    }
}

/// One optimizer step over the master weights.
///
/// Gradients are divided by the loss scale first (the unscale half of
/// `w <- w - lr * (1/lambda) * d(lambda L)/dw`); the update arithmetic
/// itself is plain `f32` and never sees truncated weights.
pub fn apply_update(
    model: &mut Model,
    grads: &Gradients,
    opt: &mut Optimizer,
    lr: f32,
    q: &QuantConfig,
) -> Result<(), TrainError> {
    q.validate()?;
    if grads.layers.len() != model.layers.len() {
        return Err(TrainError::CacheMismatch(format!(
            "gradients cover {} layers, model has {}",
            grads.layers.len(),
            model.layers.len()
        )));
    }
    opt.steps += 1;
    let step = opt.steps;
    let kind = opt.kind;
    for (idx, layer) in model.layers.iter_mut().enumerate() {
        match (&grads.layers[idx], opt.slots[idx].as_mut()) {
            (LayerGrads::Params { weights: dw, bias: db }, Some(slot)) => {
                let (w, b) = layer
                    .params_mut()
                    .expect("optimizer slots align with trainable layers");
                update_param(w, dw, &mut slot.weights, kind, lr, q.loss_scale, step)?;
                if let (Some(b), Some(db), Some(bs)) = (b, db.as_ref(), slot.bias.as_mut()) {
                    update_param(b, db, bs, kind, lr, q.loss_scale, step)?;
                }
            }
            (LayerGrads::None, None) => {}
            _ => {
                return Err(TrainError::CacheMismatch(format!(
                    "gradient/layer mismatch at layer {idx}"
                )))
            }
        }
    }
    Ok(())
}

fn update_param(
    w: &mut Tensor,
    grad: &Tensor,
    state: &mut ParamState,
    kind: OptimizerKind,
    lr: f32,
    loss_scale: f32,
    step: u64,
) -> Result<(), TrainError> {
    if w.shape() != grad.shape() {
        return Err(TrainError::CacheMismatch(format!(
            "gradient shape {:?} does not match weights {:?}",
            grad.shape(),
            w.shape()
        )));
    }
    match kind {
        OptimizerKind::SgdMomentum { momentum } => {
            for ((w, &g), v) in w
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(state.v.data_mut())
            {
                let g = g / loss_scale;
                *v = momentum * *v + g;
                *w -= lr * *v;
            }
        }
        OptimizerKind::Adam {
            beta1,
            beta2,
            epsilon,
        } => {
            let c1 = 1.0 - beta1.powi(step as i32);
            let c2 = 1.0 - beta2.powi(step as i32);
            let v2 = state.v2.as_mut().expect("adam state has a second moment");
            for (((w, &g), m), s) in w
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(state.v.data_mut())
                .zip(v2.data_mut())
            {
                let g = g / loss_scale;
                *m = beta1 * *m + (1.0 - beta1) * g;
                *s = beta2 * *s + (1.0 - beta2) * g * g;
                let m_hat = *m / c1;
                let s_hat = *s / c2;
                *w -= lr * m_hat / (s_hat.sqrt() + epsilon);
            }
        }
    }
    Ok(())
}
