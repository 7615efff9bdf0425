//! Dense row-major `f32` tensors and the numeric kernels the training
//! engine quantizes at its boundaries.
//!
//! Kernels use deterministic sequential accumulation: identical inputs give
//! bit-identical outputs across runs. Convolution lowers to im2col followed
//! by GEMM so boundary quantization applies uniformly to both.

use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape {shape:?} has {expected} elements but {found} were provided")]
    ShapeDataMismatch {
        shape: Vec<usize>,
        expected: usize,
        found: usize,
    },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("label {label} out of range for {classes} classes at row {row}")]
    LabelOutOfRange {
        label: usize,
        classes: usize,
        row: usize,
    },
    #[error("{0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Dense n-dimensional array of `f32` in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        let expected = checked_numel(&shape)?;
        if expected != data.len() {
            return Err(TensorError::ShapeDataMismatch {
                shape,
                expected,
                found: data.len(),
            });
        }
        debug_assert!(
            data.iter().all(|v| v.is_finite()),
            "tensor constructed with a non-finite value"
        );
        Ok(Self::from_parts(shape, data))
    }

    /// Internal constructor for kernels that already know the shape is
    /// consistent. Unlike [`Tensor::new`] this does not assert finiteness:
    /// kernel outputs may transiently overflow in a diverging run, which the
    /// training loop reports as a run status rather than a crash.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor, TensorError> {
        let expected = checked_numel(&shape)?;
        if expected != self.data.len() {
            return Err(TensorError::ShapeDataMismatch {
                shape,
                expected,
                found: self.data.len(),
            });
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    /// Gathers rows along the first axis, in the given order.
    pub fn gather_rows(&self, indices: &[usize]) -> Tensor {
        assert!(!self.shape.is_empty());
        let row = self.len() / self.shape[0];
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            data.extend_from_slice(&self.data[i * row..(i + 1) * row]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor::from_parts(shape, data)
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize), TensorError> {
        if self.rank() != 2 {
            return Err(TensorError::InvalidShape {
                shape: self.shape.clone(),
                reason: format!("{op} needs a rank-2 tensor"),
            });
        }
        Ok((self.shape[0], self.shape[1]))
    }
}

fn checked_numel(shape: &[usize]) -> Result<usize, TensorError> {
    if shape.is_empty() {
        return Err(TensorError::InvalidShape {
            shape: shape.to_vec(),
            reason: "rank must be at least 1".into(),
        });
    }
    let mut n: usize = 1;
    for &d in shape {
        if d == 0 {
            return Err(TensorError::InvalidShape {
                shape: shape.to_vec(),
                reason: "dimensions must be positive".into(),
            });
        }
        n = n.checked_mul(d).ok_or_else(|| TensorError::InvalidShape {
            shape: shape.to_vec(),
            reason: "element count overflows".into(),
        })?;
    }
    Ok(n)
}

/// `C = A @ B` for `A: [m, k]`, `B: [k, n]`, accumulated sequentially over
/// `k` in `f32`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    let (m, ka) = a.dims2("matmul")?;
    let (kb, n) = b.dims2("matmul")?;
    if ka != kb {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let arow = &a.data[i * ka..(i + 1) * ka];
        let orow = &mut out[i * n..(i + 1) * n];
        for (k, &aik) in arow.iter().enumerate() {
            let brow = &b.data[k * n..(k + 1) * n];
            for (o, &bkj) in orow.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
    Ok(Tensor::from_parts(vec![m, n], out))
}

/// Output spatial size of a convolution axis: `(in + 2*pad - kernel)/stride + 1`.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = input + 2 * pad;
    if stride == 0 || padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

/// Unfolds `x: [n, h, w, c]` into `[n*oh*ow, r*s*c]` patches for a kernel of
/// spatial size `r x s`; out-of-bounds taps read zero.
pub fn im2col(
    x: &Tensor,
    r: usize,
    s: usize,
    stride: usize,
    pad: usize,
) -> Result<Tensor, TensorError> {
    let [n, h, w, c] = nhwc(x)?;
    let (oh, ow) = conv_dims(h, w, r, s, stride, pad, x)?;
    let patch = r * s * c;
    let mut out = vec![0.0f32; n * oh * ow * patch];
    let mut row = 0;
    for img in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let base = row * patch;
                for ky in 0..r {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..s {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let src = ((img * h + iy as usize) * w + ix as usize) * c;
                        let dst = base + (ky * s + kx) * c;
                        out[dst..dst + c].copy_from_slice(&x.data[src..src + c]);
                    }
                }
                row += 1;
            }
        }
    }
    Ok(Tensor::from_parts(vec![n * oh * ow, patch], out))
}

/// Folds patch gradients `[n*oh*ow, r*s*c]` back onto the input layout,
/// accumulating overlaps. Inverse of [`im2col`]'s access pattern.
pub fn col2im(
    cols: &Tensor,
    input_shape: &[usize],
    r: usize,
    s: usize,
    stride: usize,
    pad: usize,
) -> Result<Tensor, TensorError> {
    let [n, h, w, c] = match input_shape {
        [n, h, w, c] => [*n, *h, *w, *c],
        _ => {
            return Err(TensorError::InvalidShape {
                shape: input_shape.to_vec(),
                reason: "col2im needs an [n, h, w, c] input shape".into(),
            })
        }
    };
    let oh = conv_out_dim(h, r, stride, pad).unwrap_or(0);
    let ow = conv_out_dim(w, s, stride, pad).unwrap_or(0);
    let patch = r * s * c;
    if cols.shape() != [n * oh * ow, patch] {
        return Err(TensorError::ShapeMismatch {
            op: "col2im",
            lhs: cols.shape.clone(),
            rhs: vec![n * oh * ow, patch],
        });
    }
    let mut out = vec![0.0f32; n * h * w * c];
    let mut row = 0;
    for img in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let base = row * patch;
                for ky in 0..r {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..s {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let dst = ((img * h + iy as usize) * w + ix as usize) * c;
                        let src = base + (ky * s + kx) * c;
                        for ch in 0..c {
                            out[dst + ch] += cols.data[src + ch];
                        }
                    }
                }
                row += 1;
            }
        }
    }
    Ok(Tensor::from_parts(vec![n, h, w, c], out))
}

/// Cross-correlation of `x: [n, h, w, c]` with `weights: [r, s, c, f]`,
/// lowered to im2col + GEMM. Output is `[n, oh, ow, f]`.
pub fn conv2d(
    x: &Tensor,
    weights: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor, TensorError> {
    let [n, h, w, c] = nhwc(x)?;
    let [r, s, wc, f] = match weights.shape() {
        [r, s, wc, f] => [*r, *s, *wc, *f],
        _ => {
            return Err(TensorError::InvalidShape {
                shape: weights.shape.clone(),
                reason: "conv2d weights must be [r, s, c, f]".into(),
            })
        }
    };
    if wc != c {
        return Err(TensorError::ShapeMismatch {
            op: "conv2d",
            lhs: x.shape.clone(),
            rhs: weights.shape.clone(),
        });
    }
    let (oh, ow) = conv_dims(h, w, r, s, stride, pad, x)?;
    let cols = im2col(x, r, s, stride, pad)?;
    let wmat = weights.reshape(vec![r * s * c, f])?;
    let out = matmul(&cols, &wmat)?;
    out.reshape(vec![n, oh, ow, f])
}

fn nhwc(x: &Tensor) -> Result<[usize; 4], TensorError> {
    match x.shape() {
        [n, h, w, c] => Ok([*n, *h, *w, *c]),
        _ => Err(TensorError::InvalidShape {
            shape: x.shape.to_vec(),
            reason: "expected an [n, h, w, c] tensor".into(),
        }),
    }
}

fn conv_dims(
    h: usize,
    w: usize,
    r: usize,
    s: usize,
    stride: usize,
    pad: usize,
    x: &Tensor,
) -> Result<(usize, usize), TensorError> {
    match (
        conv_out_dim(h, r, stride, pad),
        conv_out_dim(w, s, stride, pad),
    ) {
        (Some(oh), Some(ow)) => Ok((oh, ow)),
        _ => Err(TensorError::InvalidShape {
            shape: x.shape.to_vec(),
            reason: format!("kernel {r}x{s} stride {stride} pad {pad} does not fit"),
        }),
    }
}

/// Transpose of a rank-2 tensor.
pub fn transpose2(t: &Tensor) -> Result<Tensor, TensorError> {
    let (m, n) = t.dims2("transpose2")?;
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = t.data[i * n + j];
        }
    }
    Ok(Tensor::from_parts(vec![n, m], out))
}

pub fn relu(x: &Tensor) -> Tensor {
    let data = x.data.iter().map(|&v| v.max(0.0)).collect();
    Tensor::from_parts(x.shape.clone(), data)
}

/// 0/1 mask of strictly positive entries; the subgradient at 0 is 0.
pub fn relu_grad(x: &Tensor) -> Tensor {
    let data = x
        .data
        .iter()
        .map(|&v| if v > 0.0 { 1.0 } else { 0.0 })
        .collect();
    Tensor::from_parts(x.shape.clone(), data)
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    zip_elementwise("add", a, b, |x, y| x + y)
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor, TensorError> {
    zip_elementwise("mul", a, b, |x, y| x * y)
}

pub fn scale(a: &Tensor, c: f32) -> Tensor {
    let data = a.data.iter().map(|&v| v * c).collect();
    Tensor::from_parts(a.shape.clone(), data)
}

fn zip_elementwise(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f32, f32) -> f32,
) -> Result<Tensor, TensorError> {
    if a.shape != b.shape {
        return Err(TensorError::ShapeMismatch {
            op,
            lhs: a.shape.clone(),
            rhs: b.shape.clone(),
        });
    }
    let data = a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect();
    Ok(Tensor::from_parts(a.shape.clone(), data))
}

/// Mean softmax cross-entropy over a batch of logits `[b, classes]`, with
/// the gradient `(softmax - onehot) / b`. Stabilized by max subtraction.
pub fn softmax_cross_entropy(
    logits: &Tensor,
    labels: &[usize],
) -> Result<(f32, Tensor), TensorError> {
    let (b, classes) = logits.dims2("softmax_cross_entropy")?;
    if labels.len() != b {
        return Err(TensorError::ShapeMismatch {
            op: "softmax_cross_entropy",
            lhs: logits.shape.clone(),
            rhs: vec![labels.len()],
        });
    }
    let mut grad = vec![0.0f32; b * classes];
    let mut loss = 0.0f64;
    let inv_b = 1.0 / b as f32;
    for (row, &label) in labels.iter().enumerate() {
        if label >= classes {
            return Err(TensorError::LabelOutOfRange {
                label,
                classes,
                row,
            });
        }
        let lrow = &logits.data[row * classes..(row + 1) * classes];
        let max = lrow.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        let mut denom = 0.0f64;
        for &l in lrow {
            denom += ((l - max) as f64).exp();
        }
        loss -= (lrow[label] - max) as f64 - denom.ln();
        for (j, &l) in lrow.iter().enumerate() {
            let p = (((l - max) as f64).exp() / denom) as f32;
            let y = if j == label { 1.0 } else { 0.0 };
            grad[row * classes + j] = (p - y) * inv_b;
        }
    }
    let grad = Tensor::from_parts(vec![b, classes], grad);
    Ok(((loss / b as f64) as f32, grad))
}

const S2T1_MAGIC: &[u8; 4] = b"S2T1";

/// Writes the `S2T1` container: magic, rank (u32 LE), dims (u32 LE each),
/// then the row-major payload as little-endian `f32`.
pub fn write_s2t1<W: Write>(mut w: W, t: &Tensor) -> Result<(), TensorError> {
    w.write_all(S2T1_MAGIC)?;
    w.write_all(&(t.rank() as u32).to_le_bytes())?;
    for &d in t.shape() {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in t.data() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_s2t1<R: Read>(mut r: R) -> Result<Tensor, TensorError> {
    let mut magic = [0u8; 4];
    read_exact_at(&mut r, &mut magic, 0)?;
    if &magic != S2T1_MAGIC {
        return Err(TensorError::Parse(format!(
            "bad magic {magic:?} at offset 0, expected \"S2T1\""
        )));
    }
    let rank = read_u32_le(&mut r, 4)? as usize;
    if rank == 0 || rank > 32 {
        return Err(TensorError::Parse(format!("unreasonable rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        shape.push(read_u32_le(&mut r, 8 + 4 * i)? as usize);
    }
    let n = checked_numel(&shape)?;
    let payload_at = 8 + 4 * rank;
    let mut data = Vec::with_capacity(n);
    for i in 0..n {
        let mut buf = [0u8; 4];
        read_exact_at(&mut r, &mut buf, payload_at + 4 * i)?;
        data.push(f32::from_le_bytes(buf));
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(TensorError::Parse(format!(
            "trailing bytes after {} payload elements",
            n
        )));
    }
    // Files may carry non-finite payloads; downstream operations report
    // them, so no finiteness assertion here.
    Ok(Tensor::from_parts(shape, data))
}

pub fn write_s2t1_file(path: &Path, t: &Tensor) -> Result<(), TensorError> {
    write_s2t1(std::io::BufWriter::new(std::fs::File::create(path)?), t)
}

pub fn read_s2t1_file(path: &Path) -> Result<Tensor, TensorError> {
    read_s2t1(std::io::BufReader::new(std::fs::File::open(path)?))
}

fn read_exact_at<R: Read>(r: &mut R, buf: &mut [u8], offset: usize) -> Result<(), TensorError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            TensorError::Parse(format!("truncated at offset {offset}"))
        } else {
            TensorError::Io(e)
        }
    })
}

fn read_u32_le<R: Read>(r: &mut R, offset: usize) -> Result<u32, TensorError> {
    let mut buf = [0u8; 4];
    read_exact_at(r, &mut buf, offset)?;
    Ok(u32::from_le_bytes(buf))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_hand_example() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::new(vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.data(), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn matmul_identity_and_zero() {
        let a = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.0, 4.0, 0.5, -1.0]).unwrap();
        let id = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(matmul(&id, &a).unwrap(), a);
        let zero = Tensor::zeros(vec![4, 2]);
        let out = matmul(&zero, &a).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_mismatch() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![2, 3]);
        assert!(matches!(
            matmul(&a, &b),
            Err(TensorError::ShapeMismatch { op: "matmul", .. })
        ));
    }

    #[test]
    fn conv_ones_kernel_on_constant_input() {
        // 3x3 all-ones kernel over a constant image: interior outputs are 9c.
        let x = Tensor::new(vec![1, 5, 5, 1], vec![2.0; 25]).unwrap();
        let w = Tensor::new(vec![3, 3, 1, 1], vec![1.0; 9]).unwrap();
        let y = conv2d(&x, &w, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 5, 5, 1]);
        // Interior taps see the full window.
        assert_eq!(y.data()[6], 18.0);
        assert_eq!(y.data()[12], 18.0);
        // Corner sees a 2x2 window.
        assert_eq!(y.data()[0], 8.0);
    }

    #[test]
    fn conv_1x1_equals_matmul() {
        let x = Tensor::new(vec![1, 2, 2, 3], (0..12).map(|i| i as f32).collect()).unwrap();
        let w = Tensor::new(vec![1, 1, 3, 2], (0..6).map(|i| i as f32 * 0.5).collect()).unwrap();
        let y = conv2d(&x, &w, 1, 0).unwrap();
        let xm = x.reshape(vec![4, 3]).unwrap();
        let wm = w.reshape(vec![3, 2]).unwrap();
        let ym = matmul(&xm, &wm).unwrap();
        assert_eq!(y.data(), ym.data());
        assert_eq!(y.shape(), &[1, 2, 2, 2]);
    }

    #[test]
    fn conv_output_shape_arithmetic() {
        assert_eq!(conv_out_dim(5, 3, 1, 0), Some(3));
        assert_eq!(conv_out_dim(5, 3, 2, 1), Some(3));
        assert_eq!(conv_out_dim(2, 3, 1, 0), None);
    }

    #[test]
    fn relu_and_grad_conventions() {
        let x = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        assert_eq!(relu_grad(&x).data(), &[0.0, 0.0, 1.0]);
        assert_eq!(scale(&x, 1.0), x);
    }

    #[test]
    fn softmax_uniform_logits_loss_is_ln_c() {
        for classes in [2usize, 5, 10] {
            let logits = Tensor::zeros(vec![4, classes]);
            let labels = vec![0usize; 4];
            let (loss, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
            assert!(
                (loss as f64 - (classes as f64).ln()).abs() < 1e-6,
                "classes {classes}: loss {loss}"
            );
            for row in 0..4 {
                let s: f32 = grad.data()[row * classes..(row + 1) * classes].iter().sum();
                assert!(s.abs() < 1e-6);
            }
        }
    }

    #[test]
    fn softmax_label_out_of_range() {
        let logits = Tensor::zeros(vec![1, 3]);
        assert!(matches!(
            softmax_cross_entropy(&logits, &[3]),
            Err(TensorError::LabelOutOfRange { label: 3, .. })
        ));
    }

    #[test]
    fn s2t1_round_trip_and_errors() {
        let t = Tensor::new(vec![2, 3], vec![1.0, -2.5, 0.0, 3.25, -0.0, 1.0e-20]).unwrap();
        let mut buf = Vec::new();
        write_s2t1(&mut buf, &t).unwrap();
        let back = read_s2t1(buf.as_slice()).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert_eq!(
            back.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );

        let bad_magic = read_s2t1(&b"NOPE\x01\x00\x00\x00"[..]);
        assert!(matches!(bad_magic, Err(TensorError::Parse(msg)) if msg.contains("offset 0")));

        let truncated = read_s2t1(&buf[..10]);
        assert!(matches!(truncated, Err(TensorError::Parse(msg)) if msg.contains("truncated")));
    }

    #[test]
    fn gather_rows_reorders() {
        let t = Tensor::new(vec![3, 2], vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let g = t.gather_rows(&[2, 0]);
        assert_eq!(g.shape(), &[2, 2]);
        assert_eq!(g.data(), &[4.0, 5.0, 0.0, 1.0]);
    }
}
