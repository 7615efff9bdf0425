//! Layers, the model container, and manual forward/backward passes with
//! truncation at every GEMM boundary.

use super::{quantize_boundary, QuantConfig, TrainError};
use crate::tensor::{self, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct DenseLayer {
    /// Master weights `[in, out]`, never truncated in place.
    pub weights: Tensor,
    pub bias: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct ConvLayer {
    /// Master weights `[r, s, c, f]`.
    pub weights: Tensor,
    pub bias: Option<Tensor>,
    pub stride: usize,
    pub pad: usize,
}

#[derive(Debug, Clone)]
pub enum Layer {
    Dense(DenseLayer),
    Conv2d(ConvLayer),
    Relu,
}

impl Layer {
    pub fn params(&self) -> Option<(&Tensor, Option<&Tensor>)> {
        match self {
            Layer::Dense(d) => Some((&d.weights, d.bias.as_ref())),
            Layer::Conv2d(c) => Some((&c.weights, c.bias.as_ref())),
            Layer::Relu => None,
        }
    }

    pub fn params_mut(&mut self) -> Option<(&mut Tensor, Option<&mut Tensor>)> {
        match self {
            Layer::Dense(d) => Some((&mut d.weights, d.bias.as_mut())),
            Layer::Conv2d(c) => Some((&mut c.weights, c.bias.as_mut())),
            Layer::Relu => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub layers: Vec<Layer>,
    /// When set, flat `[batch, h*w*c]` input is reshaped to `[batch, h, w, c]`
    /// before the first conv layer.
    pub image_shape: Option<[usize; 3]>,
}

impl Model {
    /// Multilayer perceptron `input -> hidden[0] -> ... -> classes` with a
    /// relu after every hidden layer, He-normal initialized from `seed`.
    pub fn mlp(input: usize, hidden: &[usize], classes: usize, bias: bool, seed: u64) -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let mut in_dim = input;
        for &h in hidden {
            layers.push(Layer::Dense(dense_init(in_dim, h, bias, &mut rng)));
            layers.push(Layer::Relu);
            in_dim = h;
        }
        layers.push(Layer::Dense(dense_init(in_dim, classes, bias, &mut rng)));
        Model {
            layers,
            image_shape: None,
        }
    }

    /// One conv layer (+relu) over `[h, w, c]` images followed by an MLP
    /// head.
    #[allow(clippy::too_many_arguments)]
    pub fn conv_net(
        image: [usize; 3],
        kernel: usize,
        filters: usize,
        stride: usize,
        pad: usize,
        hidden: &[usize],
        classes: usize,
        bias: bool,
        seed: u64,
    ) -> Result<Model, TrainError> {
        let [h, w, c] = image;
        let oh = tensor::conv_out_dim(h, kernel, stride, pad);
        let ow = tensor::conv_out_dim(w, kernel, stride, pad);
        let (oh, ow) = match (oh, ow) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(TrainError::Config(format!(
                    "conv kernel {kernel} stride {stride} pad {pad} does not fit {h}x{w}"
                )))
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::new();
        let fan_in = kernel * kernel * c;
        let wtens = he_normal(vec![kernel, kernel, c, filters], fan_in, &mut rng);
        layers.push(Layer::Conv2d(ConvLayer {
            weights: wtens,
            bias: bias.then(|| Tensor::zeros(vec![filters])),
            stride,
            pad,
        }));
        layers.push(Layer::Relu);
        let mut in_dim = oh * ow * filters;
        for &hsz in hidden {
            layers.push(Layer::Dense(dense_init(in_dim, hsz, bias, &mut rng)));
            layers.push(Layer::Relu);
            in_dim = hsz;
        }
        layers.push(Layer::Dense(dense_init(in_dim, classes, bias, &mut rng)));
        Ok(Model {
            layers,
            image_shape: Some(image),
        })
    }

    /// Names of trainable layers in order: `dense0`, `dense1`, ..., `conv0`.
    pub fn trainable(&self) -> Vec<(usize, String)> {
        let mut out = Vec::new();
        let (mut dense, mut conv) = (0usize, 0usize);
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                Layer::Dense(_) => {
                    out.push((i, format!("dense{dense}")));
                    dense += 1;
                }
                Layer::Conv2d(_) => {
                    out.push((i, format!("conv{conv}")));
                    conv += 1;
                }
                Layer::Relu => {}
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .filter_map(|l| l.params())
            .map(|(w, b)| w.len() + b.map_or(0, |b| b.len()))
            .sum()
    }
}

fn dense_init(in_dim: usize, out_dim: usize, bias: bool, rng: &mut ChaCha8Rng) -> DenseLayer {
    DenseLayer {
        weights: he_normal(vec![in_dim, out_dim], in_dim, rng),
        bias: bias.then(|| Tensor::zeros(vec![out_dim])),
    }
}

fn he_normal(shape: Vec<usize>, fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| (std * normal(rng)) as f32).collect();
    Tensor::from_parts(shape, data)
}

/// Box-Muller standard normal; deterministic for a given rng state.
fn normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            break u;
        }
    };
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Per-layer tensors retained for backprop. GEMM layers keep their
/// already-quantized operands so the backward GEMMs reuse them as-is.
#[derive(Debug, Clone)]
pub enum LayerCache {
    Dense {
        /// Quantized, flattened input `[b, in]`.
        input_q: Tensor,
        /// Quantized weights as used by the forward GEMM.
        weights_q: Tensor,
        /// Quantized layer output.
        output_q: Tensor,
        /// Input shape before flattening.
        input_shape: Vec<usize>,
    },
    Conv {
        weights_q: Tensor,
        /// im2col patches of the quantized input.
        cols_q: Tensor,
        output_q: Tensor,
        input_shape: Vec<usize>,
        nhwc: [usize; 4],
    },
    Relu {
        input: Tensor,
    },
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub layers: Vec<LayerCache>,
}

/// Runs the model on a batch. Dense layers flatten trailing axes; a conv
/// layer reshapes flat input to the model's image shape.
pub fn forward(
    model: &Model,
    batch: &Tensor,
    q: &QuantConfig,
) -> Result<(Tensor, ForwardCache), TrainError> {
    q.validate()?;
    let mut x = batch.clone();
    let mut caches = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        match layer {
            Layer::Dense(d) => {
                let input_shape = x.shape().to_vec();
                let flat = flatten2(&x)?;
                let input_q = quantize_boundary(&flat, q)?;
                let weights_q = quantize_boundary(&d.weights, q)?;
                let mut z = tensor::matmul(&input_q, &weights_q)?;
                if let Some(b) = &d.bias {
                    add_row_bias(&mut z, b)?;
                }
                let output_q = quantize_boundary(&z, q)?;
                caches.push(LayerCache::Dense {
                    input_q,
                    weights_q,
                    output_q: output_q.clone(),
                    input_shape,
                });
                x = output_q;
            }
            Layer::Conv2d(c) => {
                let input_shape = x.shape().to_vec();
                let img = to_image(&x, model.image_shape)?;
                let input_q = quantize_boundary(&img, q)?;
                let weights_q = quantize_boundary(&c.weights, q)?;
                let [r, s, _, f] = conv_dims(&c.weights)?;
                let cols_q = tensor::im2col(&input_q, r, s, c.stride, c.pad)?;
                let wmat = weights_q.reshape(vec![cols_q.shape()[1], f])?;
                let mut z = tensor::matmul(&cols_q, &wmat)?;
                if let Some(b) = &c.bias {
                    add_row_bias(&mut z, b)?;
                }
                let [n, h, w, ch] = nhwc_of(&input_q);
                let oh = tensor::conv_out_dim(h, r, c.stride, c.pad).unwrap();
                let ow = tensor::conv_out_dim(w, s, c.stride, c.pad).unwrap();
                let z = z.reshape(vec![n, oh, ow, f])?;
                let output_q = quantize_boundary(&z, q)?;
                caches.push(LayerCache::Conv {
                    weights_q,
                    cols_q,
                    output_q: output_q.clone(),
                    input_shape,
                    nhwc: [n, h, w, ch],
                });
                x = output_q;
            }
            Layer::Relu => {
                caches.push(LayerCache::Relu { input: x.clone() });
                x = tensor::relu(&x);
            }
        }
    }
    let logits = flatten2(&x)?;
    Ok((logits, ForwardCache { layers: caches }))
}

/// Gradients for one layer's parameters.
#[derive(Debug, Clone)]
pub enum LayerGrads {
    Params {
        weights: Tensor,
        bias: Option<Tensor>,
    },
    None,
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub layers: Vec<LayerGrads>,
}

impl Gradients {
    pub fn weights(&self, layer: usize) -> Option<&Tensor> {
        match self.layers.get(layer) {
            Some(LayerGrads::Params { weights, .. }) => Some(weights),
            _ => None,
        }
    }
}

/// Backpropagates `loss_grad` through the cached forward pass.
///
/// The loss gradient is multiplied by the loss scale first; each backward
/// GEMM consumes the cached quantized forward operands plus the freshly
/// quantized incoming gradient, and every produced weight/input gradient is
/// quantized after its GEMM. Bias gradients are plain sums of the incoming
/// gradient (biases bypass quantization).
pub fn backward(
    model: &Model,
    cache: &ForwardCache,
    loss_grad: &Tensor,
    q: &QuantConfig,
) -> Result<Gradients, TrainError> {
    q.validate()?;
    if cache.layers.len() != model.layers.len() {
        return Err(TrainError::CacheMismatch(format!(
            "cache has {} layers, model has {}",
            cache.layers.len(),
            model.layers.len()
        )));
    }
    let mut grads = vec![LayerGrads::None; model.layers.len()];
    let mut g = tensor::scale(loss_grad, q.loss_scale);
    for (idx, layer) in model.layers.iter().enumerate().rev() {
        match (layer, &cache.layers[idx]) {
            (
                Layer::Dense(d),
                LayerCache::Dense {
                    input_q,
                    weights_q,
                    input_shape,
                    ..
                },
            ) => {
                let g2 = flatten2(&g)?;
                let db = d
                    .bias
                    .as_ref()
                    .map(|_| column_sums(&g2))
                    .transpose()?;
                let g_q = quantize_boundary(&g2, q)?;
                let dw = tensor::matmul(&tensor::transpose2(input_q)?, &g_q)?;
                let dw_q = quantize_boundary(&dw, q)?;
                let dx = tensor::matmul(&g_q, &tensor::transpose2(weights_q)?)?;
                let dx_q = quantize_boundary(&dx, q)?;
                grads[idx] = LayerGrads::Params {
                    weights: dw_q,
                    bias: db,
                };
                g = dx_q.reshape(input_shape.clone())?;
            }
            (
                Layer::Conv2d(c),
                LayerCache::Conv {
                    weights_q,
                    cols_q,
                    input_shape,
                    nhwc,
                    ..
                },
            ) => {
                let [r, s, ch, f] = conv_dims(&c.weights)?;
                let g2 = g.reshape(vec![g.len() / f, f])?;
                let db = c
                    .bias
                    .as_ref()
                    .map(|_| column_sums(&g2))
                    .transpose()?;
                let g_q = quantize_boundary(&g2, q)?;
                let dw = tensor::matmul(&tensor::transpose2(cols_q)?, &g_q)?;
                let dw_q = quantize_boundary(&dw.reshape(vec![r, s, ch, f])?, q)?;
                let wmat = weights_q.reshape(vec![r * s * ch, f])?;
                let dcols = tensor::matmul(&g_q, &tensor::transpose2(&wmat)?)?;
                let dx = tensor::col2im(&dcols, nhwc, r, s, c.stride, c.pad)?;
                let dx_q = quantize_boundary(&dx, q)?;
                grads[idx] = LayerGrads::Params {
                    weights: dw_q,
                    bias: db,
                };
                g = dx_q.reshape(input_shape.clone())?;
            }
            (Layer::Relu, LayerCache::Relu { input }) => {
                g = tensor::mul(&flatten_like(&g, input)?, &tensor::relu_grad(input))?;
            }
            _ => {
                return Err(TrainError::CacheMismatch(format!(
                    "layer {idx} kind does not match its cache"
                )))
            }
        }
    }
    Ok(Gradients { layers: grads })
}

fn flatten2(x: &Tensor) -> Result<Tensor, TrainError> {
    if x.rank() == 2 {
        return Ok(x.clone());
    }
    let b = x.shape()[0];
    Ok(x.reshape(vec![b, x.len() / b])?)
}

fn flatten_like(g: &Tensor, reference: &Tensor) -> Result<Tensor, TrainError> {
    if g.shape() == reference.shape() {
        Ok(g.clone())
    } else {
        Ok(g.reshape(reference.shape().to_vec())?)
    }
}

fn to_image(x: &Tensor, image_shape: Option<[usize; 3]>) -> Result<Tensor, TrainError> {
    if x.rank() == 4 {
        return Ok(x.clone());
    }
    let [h, w, c] = image_shape.ok_or_else(|| {
        TrainError::Config("conv layer needs rank-4 input or a model image_shape".into())
    })?;
    let b = x.shape()[0];
    Ok(x.reshape(vec![b, h, w, c])?)
}

fn conv_dims(w: &Tensor) -> Result<[usize; 4], TrainError> {
    match w.shape() {
        [r, s, c, f] => Ok([*r, *s, *c, *f]),
        other => Err(TrainError::Config(format!(
            "conv weights must be [r, s, c, f], got {other:?}"
        ))),
    }
}

fn nhwc_of(x: &Tensor) -> [usize; 4] {
    [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]]
}

fn add_row_bias(z: &mut Tensor, bias: &Tensor) -> Result<(), TrainError> {
    let n = *z.shape().last().unwrap();
    if bias.shape() != [n] {
        return Err(TrainError::Config(format!(
            "bias shape {:?} does not match output width {n}",
            bias.shape()
        )));
    }
    for row in z.data_mut().chunks_mut(n) {
        for (v, &b) in row.iter_mut().zip(bias.data()) {
            *v += b;
        }
    }
    Ok(())
}

fn column_sums(g: &Tensor) -> Result<Tensor, TrainError> {
    let n = *g.shape().last().unwrap();
    let mut out = vec![0.0f32; n];
    for row in g.data().chunks(n) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Ok(Tensor::from_parts(vec![n], out))
}
