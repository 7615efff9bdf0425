//! Shifted-and-squeezed FP8 (S2FP8) tensor emulation.
//!
//! The crate has four layers:
//!
//! - [`formats`]: parameterized IEEE-like binary float formats (FP8, FP16,
//!   BF16, FP32) with bit-exact round-to-nearest-even truncation of `f32`
//!   values.
//! - [`tensor`]: a dense row-major `f32` tensor plus the numeric kernels
//!   (GEMM, im2col convolution, elementwise ops, softmax cross-entropy)
//!   that training quantizes at its boundaries.
//! - [`codec`]: per-tensor log2-domain statistics, the shift/squeeze
//!   transform that recenters a tensor into FP8's representable range, and
//!   the S2FP8 encode/decode round trip.
//! - [`nn`]: a small from-scratch training engine (dense/conv/relu layers,
//!   manual backprop, SGD-momentum and Adam) that inserts truncation before
//!   and after every GEMM while keeping master weights and accumulations in
//!   `f32`.
//!
//! All operations are deterministic: fixed seeds and inputs produce
//! bit-identical outputs across runs.

pub mod codec;
pub mod formats;
pub mod nn;
pub mod tensor;

pub use codec::{S2Encoded, S2Stats};
pub use formats::FloatFormat;
pub use tensor::Tensor;
