//! The shifted-and-squeezed FP8 tensor codec.
//!
//! A tensor `X` is stored as FP8 codes `Y` plus two per-tensor factors: a
//! squeeze `alpha` and a shift `beta`, related through
//! `log2|Y_i| = alpha * log2|X_i| + beta` with signs carried over. The
//! factors are chosen from the tensor's own statistics — the mean `mu` and
//! maximum `m` of `log2|X_i|` over nonzero elements — so that the transformed
//! magnitudes have zero mean in the log2 domain and peak at `2^target_max`,
//! which fits FP8 without saturation.
//!
//! All transform arithmetic runs in the log2 domain at `f64` precision; the
//! only `f32`-domain step is the FP8 truncation itself, so no intermediate
//! overflows even when the squeeze factor is large.

use crate::formats::{self, FormatError, FP8};
use crate::tensor::Tensor;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

/// Default transformed peak, `log2(2^15)` — comfortably inside FP8's
/// normal range.
pub const DEFAULT_TARGET_MAX: f64 = 15.0;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("non-finite value {value} at element {index}")]
    NonFiniteAt { value: f32, index: usize },
    #[error("target_max {value} outside (0, log2(FP8 max normal)]")]
    InvalidTargetMax { value: f64 },
    #[error("invalid statistics: squeeze factor must be finite and positive, got {squeeze}")]
    InvalidStats { squeeze: f64 },
    #[error("code {code:#04x} at element {index} uses the reserved exponent")]
    ReservedCode { code: u8, index: usize },
    #[error("encoded container holds {codes} codes but shape {shape:?} needs {expected}")]
    CodeCountMismatch {
        codes: usize,
        shape: Vec<usize>,
        expected: usize,
    },
    #[error("{0}")]
    Parse(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-tensor statistics of the log2 magnitudes and the derived transform
/// factors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct S2Stats {
    /// Mean of `log2|X_i|` over nonzero elements (`mu`).
    pub log2_mean: f64,
    /// Maximum of `log2|X_i|` over nonzero elements (`m`).
    pub log2_max: f64,
    /// Squeeze factor (`alpha`), always positive.
    pub squeeze: f64,
    /// Shift factor (`beta`).
    pub shift: f64,
    /// Count of nonzero elements.
    pub n_nonzero: u64,
    /// Transformed peak exponent the factors aim at.
    pub target_max: f64,
}

fn validate_target_max(target_max: f64) -> Result<(), CodecError> {
    let limit = FP8.properties().max_normal.log2();
    if !(target_max > 0.0 && target_max <= limit) {
        return Err(CodecError::InvalidTargetMax { value: target_max });
    }
    Ok(())
}

/// `log2|v|` with exact results for powers of two.
fn log2_abs(v: f32) -> f64 {
    let a = (v as f64).abs();
    let bits = a.to_bits();
    let e = ((bits >> 52) & 0x7ff) as i32 - 1023;
    let m = f64::from_bits((bits & 0x000f_ffff_ffff_ffff) | (1023u64 << 52));
    if m == 1.0 {
        e as f64
    } else {
        e as f64 + m.log2()
    }
}

/// `2^t` with exact results for integer `t`.
fn exp2(t: f64) -> f64 {
    if t.fract() == 0.0 && (-1022.0..=1023.0).contains(&t) {
        formats::pow2(t as i32)
    } else {
        t.exp2()
    }
}

/// Computes `mu`, `m` and the transform factors for a tensor.
///
/// Degenerate conventions: an all-zero tensor gets the identity transform
/// (`alpha = 1`, `beta = 0`); a tensor whose nonzero elements share one
/// magnitude gets a pure shift (`alpha = 1`, `beta = target_max - m`), which
/// places them exactly at `2^target_max`.
pub fn compute_statistics(x: &Tensor, target_max: f64) -> Result<S2Stats, CodecError> {
    validate_target_max(target_max)?;
    let mut sum = 0.0f64;
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    let mut n = 0u64;
    // Sequential reduction in element order keeps runs reproducible.
    for (index, &v) in x.data().iter().enumerate() {
        if !v.is_finite() {
            return Err(CodecError::NonFiniteAt { value: v, index });
        }
        if v != 0.0 {
            let l = log2_abs(v);
            sum += l;
            min = min.min(l);
            max = max.max(l);
            n += 1;
        }
    }
    if n == 0 {
        return Ok(S2Stats {
            log2_mean: 0.0,
            log2_max: 0.0,
            squeeze: 1.0,
            shift: 0.0,
            n_nonzero: 0,
            target_max,
        });
    }
    let mean = sum / n as f64;
    // The single-magnitude test is on the raw log2 values, not the rounded
    // mean, so near-equal tensors cannot slip into a huge squeeze factor.
    if n >= 2 && min != max && max > mean {
        let squeeze = target_max / (max - mean);
        Ok(S2Stats {
            log2_mean: mean,
            log2_max: max,
            squeeze,
            shift: -squeeze * mean,
            n_nonzero: n,
            target_max,
        })
    } else {
        Ok(S2Stats {
            log2_mean: mean,
            log2_max: max,
            squeeze: 1.0,
            shift: target_max - max,
            n_nonzero: n,
            target_max,
        })
    }
}

fn validate_stats(stats: &S2Stats) -> Result<(), CodecError> {
    if !(stats.squeeze.is_finite() && stats.squeeze > 0.0 && stats.shift.is_finite()) {
        return Err(CodecError::InvalidStats {
            squeeze: stats.squeeze,
        });
    }
    Ok(())
}

/// Applies `Y_i = sign(X_i) * 2^(alpha*log2|X_i| + beta)`; zeros pass through.
pub fn shift_squeeze(x: &Tensor, stats: &S2Stats) -> Result<Tensor, CodecError> {
    validate_stats(stats)?;
    let mut out = Vec::with_capacity(x.len());
    for (index, &v) in x.data().iter().enumerate() {
        if !v.is_finite() {
            return Err(CodecError::NonFiniteAt { value: v, index });
        }
        if v == 0.0 {
            out.push(v); // keeps the sign of zero
            continue;
        }
        let t = stats.squeeze * log2_abs(v) + stats.shift;
        let y = exp2(t) as f32;
        if !y.is_finite() {
            // Only reachable with stats from an unrelated tensor.
            return Err(CodecError::NonFiniteAt { value: y, index });
        }
        out.push(if v < 0.0 { -y } else { y });
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Inverts [`shift_squeeze`]: `X_i = sign(Y_i) * 2^((log2|Y_i| - beta)/alpha)`.
pub fn inverse_shift_squeeze(y: &Tensor, stats: &S2Stats) -> Result<Tensor, CodecError> {
    validate_stats(stats)?;
    let mut out = Vec::with_capacity(y.len());
    for (index, &v) in y.data().iter().enumerate() {
        if !v.is_finite() {
            return Err(CodecError::NonFiniteAt { value: v, index });
        }
        out.push(invert_element(v, stats));
    }
    Ok(Tensor::from_parts(y.shape().to_vec(), out))
}

fn invert_element(v: f32, stats: &S2Stats) -> f32 {
    if v == 0.0 {
        return v;
    }
    let s = (log2_abs(v) - stats.shift) / stats.squeeze;
    let mut x = exp2(s) as f32;
    if x.is_infinite() {
        // The original magnitude sat near the top of the f32 range and the
        // FP8 rounding pushed its log2 past it; saturate instead.
        x = f32::MAX;
    }
    if v < 0.0 {
        -x
    } else {
        x
    }
}

/// FP8 codes plus the statistics needed to reconstruct the tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct S2Encoded {
    pub stats: S2Stats,
    /// One FP8 pattern per element, sign bit most significant.
    pub codes: Vec<u8>,
    pub shape: Vec<usize>,
}

/// Encodes a tensor with freshly computed statistics.
pub fn encode(x: &Tensor, target_max: f64) -> Result<S2Encoded, CodecError> {
    let stats = compute_statistics(x, target_max)?;
    encode_with_stats(x, &stats)
}

/// Encodes a tensor with caller-provided statistics.
pub fn encode_with_stats(x: &Tensor, stats: &S2Stats) -> Result<S2Encoded, CodecError> {
    let y = shift_squeeze(x, stats)?;
    let mut codes = Vec::with_capacity(y.len());
    for &v in y.data() {
        codes.push(FP8.quantize_bits(v).expect("transformed value is finite") as u8);
    }
    Ok(S2Encoded {
        stats: *stats,
        codes,
        shape: x.shape().to_vec(),
    })
}

/// Decodes FP8 codes back to a binary32 tensor through the inverse
/// transform. Rejects codes with the reserved exponent.
pub fn decode(e: &S2Encoded) -> Result<Tensor, CodecError> {
    validate_stats(&e.stats)?;
    let expected: usize = e.shape.iter().product();
    if expected != e.codes.len() {
        return Err(CodecError::CodeCountMismatch {
            codes: e.codes.len(),
            shape: e.shape.clone(),
            expected,
        });
    }
    let mut out = Vec::with_capacity(e.codes.len());
    for (index, &code) in e.codes.iter().enumerate() {
        let y = FP8.value_of_bits(code as u32).map_err(|err| match err {
            FormatError::ReservedExponent { .. } => CodecError::ReservedCode { code, index },
            other => CodecError::Format(other),
        })?;
        out.push(invert_element(y, &e.stats));
    }
    Ok(Tensor::from_parts(e.shape.clone(), out))
}

/// End-to-end S2FP8 truncation: statistics, transform, FP8 rounding,
/// inverse transform. Identical, bit for bit, to `decode(encode(x))`.
pub fn s2fp8_truncate(x: &Tensor, target_max: f64) -> Result<Tensor, CodecError> {
    decode(&encode(x, target_max)?)
}

/// [`s2fp8_truncate`] with caller-provided statistics; repeated application
/// with the same statistics is a fixed point.
pub fn s2fp8_truncate_with_stats(x: &Tensor, stats: &S2Stats) -> Result<Tensor, CodecError> {
    decode(&encode_with_stats(x, stats)?)
}

const S2F8_MAGIC: &[u8; 4] = b"S2F8";
const S2F8_VERSION: u8 = 1;

/// Writes the `S2F8` container: magic, version byte, target_max / alpha /
/// beta as little-endian f64, n_nonzero as u64, rank and dims as u32, then
/// one code byte per element.
pub fn write_s2f8<W: Write>(mut w: W, e: &S2Encoded) -> Result<(), CodecError> {
    w.write_all(S2F8_MAGIC)?;
    w.write_all(&[S2F8_VERSION])?;
    w.write_all(&e.stats.target_max.to_le_bytes())?;
    w.write_all(&e.stats.squeeze.to_le_bytes())?;
    w.write_all(&e.stats.shift.to_le_bytes())?;
    w.write_all(&e.stats.n_nonzero.to_le_bytes())?;
    w.write_all(&(e.shape.len() as u32).to_le_bytes())?;
    for &d in &e.shape {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    w.write_all(&e.codes)?;
    Ok(())
}

/// Reads an `S2F8` container. The wire format does not carry `mu` and `m`;
/// they are reconstructed from the factors (so `shift == -squeeze * mu`
/// still holds) and are informational only — decoding needs just the
/// factors.
pub fn read_s2f8<R: Read>(mut r: R) -> Result<S2Encoded, CodecError> {
    let mut magic = [0u8; 4];
    read_exact_at(&mut r, &mut magic, 0)?;
    if &magic != S2F8_MAGIC {
        return Err(CodecError::Parse(format!(
            "bad magic {magic:?} at offset 0, expected \"S2F8\""
        )));
    }
    let mut version = [0u8; 1];
    read_exact_at(&mut r, &mut version, 4)?;
    if version[0] != S2F8_VERSION {
        return Err(CodecError::Parse(format!(
            "unsupported version {} at offset 4",
            version[0]
        )));
    }
    let target_max = read_f64_le(&mut r, 5)?;
    let squeeze = read_f64_le(&mut r, 13)?;
    let shift = read_f64_le(&mut r, 21)?;
    let mut n8 = [0u8; 8];
    read_exact_at(&mut r, &mut n8, 29)?;
    let n_nonzero = u64::from_le_bytes(n8);
    let mut r4 = [0u8; 4];
    read_exact_at(&mut r, &mut r4, 37)?;
    let rank = u32::from_le_bytes(r4) as usize;
    if rank == 0 || rank > 32 {
        return Err(CodecError::Parse(format!("unreasonable rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    let mut n: usize = 1;
    for i in 0..rank {
        read_exact_at(&mut r, &mut r4, 41 + 4 * i)?;
        let d = u32::from_le_bytes(r4) as usize;
        if d == 0 {
            return Err(CodecError::Parse(format!("zero dimension {i}")));
        }
        n = n
            .checked_mul(d)
            .ok_or_else(|| CodecError::Parse("dims overflow".into()))?;
        shape.push(d);
    }
    let codes_at = 41 + 4 * rank;
    let mut codes = vec![0u8; n];
    read_exact_at(&mut r, &mut codes, codes_at)?;
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(CodecError::Parse(format!(
            "trailing bytes after {n} codes"
        )));
    }
    validate_target_max(target_max)?;
    let stats = S2Stats {
        log2_mean: if n_nonzero == 0 { 0.0 } else { -shift / squeeze },
        log2_max: if n_nonzero == 0 {
            0.0
        } else {
            (target_max - shift) / squeeze
        },
        squeeze,
        shift,
        n_nonzero,
        target_max,
    };
    validate_stats(&stats)?;
    Ok(S2Encoded {
        stats,
        codes,
        shape,
    })
}

pub fn write_s2f8_file(path: &Path, e: &S2Encoded) -> Result<(), CodecError> {
    write_s2f8(std::io::BufWriter::new(std::fs::File::create(path)?), e)
}

pub fn read_s2f8_file(path: &Path) -> Result<S2Encoded, CodecError> {
    read_s2f8(std::io::BufReader::new(std::fs::File::open(path)?))
}

fn read_exact_at<R: Read>(r: &mut R, buf: &mut [u8], offset: usize) -> Result<(), CodecError> {
    r.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            CodecError::Parse(format!("truncated at offset {offset}"))
        } else {
            CodecError::Io(e)
        }
    })
}

fn read_f64_le<R: Read>(r: &mut R, offset: usize) -> Result<f64, CodecError> {
    let mut buf = [0u8; 8];
    read_exact_at(r, &mut buf, offset)?;
    Ok(f64::from_le_bytes(buf))
}
