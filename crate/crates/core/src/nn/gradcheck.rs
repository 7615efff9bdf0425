//! Central-finite-difference validation of the backward pass.
//!
//! The reference loss is an independent `f64` evaluation of the same
//! dense/relu topology, so the difference quotient is far more accurate
//! than the `f32` engine it checks. A gradient from `Fp32`-mode backprop
//! should agree with it to well under the 1e-4 threshold.

use super::{backward, forward, Gradients, Layer, LayerGrads, Model, QuantConfig, TrainError};
use crate::tensor::{softmax_cross_entropy, Tensor};

pub const DEFAULT_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Layer name and flat parameter index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub params_checked: usize,
    pub threshold: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.threshold
    }
}

/// f64 mirror of the trainable parameters.
struct DenseParams {
    w: Vec<f64>,
    b: Option<Vec<f64>>,
    in_dim: usize,
    out_dim: usize,
}

enum RefLayer {
    Dense(DenseParams),
    Relu,
}

fn mirror(model: &Model) -> Result<Vec<RefLayer>, TrainError> {
    model
        .layers
        .iter()
        .map(|layer| match layer {
            Layer::Dense(d) => {
                let in_dim = d.weights.shape()[0];
                let out_dim = d.weights.shape()[1];
                Ok(RefLayer::Dense(DenseParams {
                    w: d.weights.data().iter().map(|&v| v as f64).collect(),
                    b: d.bias.as_ref().map(|b| b.data().iter().map(|&v| v as f64).collect()),
                    in_dim,
                    out_dim,
                }))
            }
            Layer::Relu => Ok(RefLayer::Relu),
            Layer::Conv2d(_) => Err(TrainError::Config(
                "gradient checking supports dense/relu models only".into(),
            )),
        })
        .collect()
}

fn reference_loss(layers: &[RefLayer], batch: &[f64], rows: usize, labels: &[usize]) -> f64 {
    let mut x = batch.to_vec();
    let mut width = x.len() / rows;
    for layer in layers {
        match layer {
            RefLayer::Dense(d) => {
                debug_assert_eq!(width, d.in_dim);
                let mut z = vec![0.0f64; rows * d.out_dim];
                for r in 0..rows {
                    for k in 0..d.in_dim {
                        let xv = x[r * d.in_dim + k];
                        for j in 0..d.out_dim {
                            z[r * d.out_dim + j] += xv * d.w[k * d.out_dim + j];
                        }
                    }
                    if let Some(b) = &d.b {
                        for j in 0..d.out_dim {
                            z[r * d.out_dim + j] += b[j];
                        }
                    }
                }
                x = z;
                width = d.out_dim;
            }
            RefLayer::Relu => {
                for v in &mut x {
                    *v = v.max(0.0);
                }
            }
        }
    }
    let classes = width;
    let mut loss = 0.0f64;
    for (r, &label) in labels.iter().enumerate() {
        let row = &x[r * classes..(r + 1) * classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().map(|&v| (v - max).exp()).sum();
        loss -= row[label] - max - denom.ln();
    }
    loss / rows as f64
}

/// Compares externally supplied gradients against central finite
/// differences of the `f64` reference loss.
pub fn compare_to_finite_differences(
    model: &Model,
    batch: &Tensor,
    labels: &[usize],
    grads: &Gradients,
    threshold: f64,
) -> Result<GradCheckReport, TrainError> {
    let mut layers = mirror(model)?;
    let rows = batch.shape()[0];
    let batch64: Vec<f64> = batch.data().iter().map(|&v| v as f64).collect();

    let mut max_rel_err = 0.0f64;
    let mut worst = None;
    let mut params_checked = 0usize;
    let names: Vec<(usize, String)> = model.trainable();

    for (layer_idx, name) in &names {
        let LayerGrads::Params { weights, bias } = &grads.layers[*layer_idx] else {
            return Err(TrainError::CacheMismatch(format!(
                "no gradients for layer {layer_idx}"
            )));
        };
        // Which mirrored layer this is: same index, model and mirror align.
        for which in 0..2 {
            let (analytic, label_suffix) = match which {
                0 => (Some(weights), "w"),
                _ => (bias.as_ref(), "b"),
            };
            let Some(analytic) = analytic else { continue };
            for i in 0..analytic.len() {
                let theta = {
                    let RefLayer::Dense(d) = &layers[*layer_idx] else {
                        unreachable!("trainable layers are dense here");
                    };
                    if which == 0 {
                        d.w[i]
                    } else {
                        d.b.as_ref().unwrap()[i]
                    }
                };
                let h = 1e-6 * theta.abs().max(1.0);
                let mut eval_at = |v: f64| {
                    {
                        let RefLayer::Dense(d) = &mut layers[*layer_idx] else {
                            unreachable!();
                        };
                        if which == 0 {
                            d.w[i] = v;
                        } else {
                            d.b.as_mut().unwrap()[i] = v;
                        }
                    }
                    reference_loss(&layers, &batch64, rows, labels)
                };
                let plus = eval_at(theta + h);
                let minus = eval_at(theta - h);
                eval_at(theta); // restore
                let fd = (plus - minus) / (2.0 * h);
                let g = analytic.data()[i] as f64;
                let rel = (g - fd).abs() / g.abs().max(fd.abs()).max(1e-6);
                params_checked += 1;
                if rel > max_rel_err {
                    max_rel_err = rel;
                    worst = Some((format!("{name}.{label_suffix}"), i));
                }
            }
        }
    }
    Ok(GradCheckReport {
        max_rel_err,
        worst,
        params_checked,
        threshold,
    })
}

/// Runs `Fp32`-mode backprop on the batch and checks every weight and bias
/// gradient against central finite differences.
pub fn check_gradients(
    model: &Model,
    batch: &Tensor,
    labels: &[usize],
    threshold: f64,
) -> Result<GradCheckReport, TrainError> {
    let q = QuantConfig::fp32();
    let (logits, cache) = forward(model, batch, &q)?;
    let (_, loss_grad) = softmax_cross_entropy(&logits, labels)?;
    let grads = backward(model, &cache, &loss_grad, &q)?;
    compare_to_finite_differences(model, batch, labels, &grads, threshold)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_batch(rows: usize, cols: usize, seed: u64) -> (Tensor, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..rows * cols)
            .map(|_| rng.random::<f32>() * 2.0 - 1.0)
            .collect();
        let labels = (0..rows).map(|i| i % 2).collect();
        (Tensor::new(vec![rows, cols], data).unwrap(), labels)
    }

    #[test]
    fn two_layer_mlp_passes() {
        let model = Model::mlp(4, &[8], 2, true, 0);
        let (batch, labels) = random_batch(8, 4, 0);
        let report = check_gradients(&model, &batch, &labels, DEFAULT_THRESHOLD).unwrap();
        assert!(
            report.passed(),
            "max rel err {} at {:?}",
            report.max_rel_err,
            report.worst
        );
        assert_eq!(report.params_checked, model.param_count());
    }

    #[test]
    fn one_weight_linear_model_matches_closed_form() {
        // Linear 1 -> 2, no bias: analytic dW[0][j] = mean_r x_r (p_j - y_j).
        let model = Model::mlp(1, &[], 2, false, 1);
        let batch = Tensor::new(vec![4, 1], vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let labels = vec![0, 1, 0, 1];
        let q = QuantConfig::fp32();
        let (logits, cache) = forward(&model, &batch, &q).unwrap();
        let (_, lgrad) = softmax_cross_entropy(&logits, &labels).unwrap();
        let grads = backward(&model, &cache, &lgrad, &q).unwrap();
        let dw = grads.weights(0).unwrap();
        let mut expected = [0.0f64; 2];
        for (r, &x) in batch.data().iter().enumerate() {
            for (j, e) in expected.iter_mut().enumerate() {
                *e += x as f64 * lgrad.data()[r * 2 + j] as f64;
            }
        }
        for (j, &e) in expected.iter().enumerate() {
            assert!(
                (dw.data()[j] as f64 - e).abs() < 1e-6,
                "{} vs {}",
                dw.data()[j],
                e
            );
        }
        // And the finite-difference route agrees.
        let report = check_gradients(&model, &batch, &labels, 1e-4).unwrap();
        assert!(report.passed(), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let model = Model::mlp(4, &[8], 2, true, 2);
        let (batch, labels) = random_batch(8, 4, 2);
        let q = QuantConfig::fp32();
        let (logits, cache) = forward(&model, &batch, &q).unwrap();
        let (_, lgrad) = softmax_cross_entropy(&logits, &labels).unwrap();
        let mut grads = backward(&model, &cache, &lgrad, &q).unwrap();
        if let LayerGrads::Params { weights, .. } = &mut grads.layers[0] {
            weights.data_mut()[0] += 0.05;
        }
        let report =
            compare_to_finite_differences(&model, &batch, &labels, &grads, 1e-4).unwrap();
        assert!(!report.passed(), "corruption went unnoticed");
    }

    #[test]
    fn conv_models_are_rejected() {
        let model = Model::conv_net([4, 4, 1], 3, 2, 1, 1, &[], 2, true, 0).unwrap();
        let batch = Tensor::zeros(vec![1, 16]);
        assert!(matches!(
            check_gradients(&model, &batch, &[0], 1e-4),
            Err(TrainError::Config(_))
        ));
    }
}
