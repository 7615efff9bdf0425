//! A small from-scratch training engine with truncation hooks at every GEMM
//! boundary.
//!
//! The precision dataflow: master weights live in `f32` and are updated by
//! `f32` optimizer arithmetic only. In a quantized mode, the inputs and
//! weights of each dense/conv GEMM are truncated before the multiply, the
//! GEMM accumulates in `f32`, and its output is truncated after; the
//! backward pass truncates the incoming gradient before each backward GEMM
//! and the produced weight/input gradients after. Activations, the loss and
//! biases stay in `f32`.
//!
//! Loss scaling multiplies the loss gradient by `loss_scale` before
//! backprop and divides gradients by it before the update. It is applied
//! uniformly in every mode (`loss_scale = 1` is an exact identity), so an
//! `Fp32` run can demonstrate the scale/unscale identity and
//! `Fp8LossScaled` with `loss_scale = 1` reduces bit-exactly to `Fp8Rne`.

mod model;
mod optim;
mod train;

pub mod gradcheck;

pub use model::{
    backward, forward, ConvLayer, DenseLayer, ForwardCache, Gradients, Layer, LayerCache,
    LayerGrads, Model,
};
pub use optim::{apply_update, Optimizer, OptimizerKind};
pub use train::{
    accuracy, default_tracked, evaluate, train, Dataset, RunStatus, StepRecord, TrackedStats,
    TrackedTensor, TrainConfig, TrainRun,
};

use crate::codec::{self, CodecError};
use crate::formats::{self, FormatError, FP8};
use crate::tensor::{Tensor, TensorError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("forward cache does not match the model: {0}")]
    CacheMismatch(String),
}

impl TrainError {
    /// True when the error reports a non-finite value, i.e. the run
    /// diverged numerically instead of hitting a usage bug.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            TrainError::Format(FormatError::NonFinite { .. })
                | TrainError::Format(FormatError::NonFiniteAt { .. })
                | TrainError::Codec(CodecError::NonFiniteAt { .. })
        )
    }
}

/// Precision mode applied at GEMM boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuantMode {
    /// No truncation anywhere; the exact `f32` reference.
    Fp32,
    /// Plain FP8 round-to-nearest-even truncation.
    Fp8Rne,
    /// FP8 truncation with a constant loss scale.
    Fp8LossScaled,
    /// Shifted-and-squeezed FP8.
    S2Fp8,
}

impl QuantMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            QuantMode::Fp32 => "fp32",
            QuantMode::Fp8Rne => "fp8_rne",
            QuantMode::Fp8LossScaled => "fp8_loss_scaled",
            QuantMode::S2Fp8 => "s2fp8",
        }
    }
}

/// Which precision mode applies at GEMM boundaries, plus the loss scale and
/// the S2FP8 target peak.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantConfig {
    pub mode: QuantMode,
    /// Loss scale λ (> 0). Default 1.
    pub loss_scale: f32,
    /// Transformed peak exponent for S2FP8. Default 15.
    pub target_max: f64,
}

impl QuantConfig {
    pub fn fp32() -> Self {
        Self::with_mode(QuantMode::Fp32)
    }

    pub fn fp8_rne() -> Self {
        Self::with_mode(QuantMode::Fp8Rne)
    }

    pub fn fp8_loss_scaled(loss_scale: f32) -> Self {
        QuantConfig {
            loss_scale,
            ..Self::with_mode(QuantMode::Fp8LossScaled)
        }
    }

    pub fn s2fp8() -> Self {
        Self::with_mode(QuantMode::S2Fp8)
    }

    pub fn with_mode(mode: QuantMode) -> Self {
        QuantConfig {
            mode,
            loss_scale: 1.0,
            target_max: codec::DEFAULT_TARGET_MAX,
        }
    }

    pub fn loss_scale(mut self, loss_scale: f32) -> Self {
        self.loss_scale = loss_scale;
        self
    }

    pub fn target_max(mut self, target_max: f64) -> Self {
        self.target_max = target_max;
        self
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.loss_scale.is_finite() && self.loss_scale > 0.0) {
            return Err(TrainError::Config(format!(
                "loss_scale must be finite and positive, got {}",
                self.loss_scale
            )));
        }
        Ok(())
    }
}

/// Truncates a tensor according to the configured mode. `Fp32` returns the
/// input bit-identically.
pub fn quantize_boundary(x: &Tensor, q: &QuantConfig) -> Result<Tensor, TrainError> {
    match q.mode {
        QuantMode::Fp32 => Ok(x.clone()),
        QuantMode::Fp8Rne | QuantMode::Fp8LossScaled => {
            Ok(formats::truncate_tensor(x, FP8)?)
        }
        QuantMode::S2Fp8 => Ok(codec::s2fp8_truncate(x, q.target_max)?),
    }
}
