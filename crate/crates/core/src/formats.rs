//! Parameterized IEEE-like binary floating-point formats.
//!
//! A [`FloatFormat`] is described by its exponent and mantissa widths (the
//! sign bit is always present). The all-ones exponent field is reserved for
//! infinity/NaN and is never produced by truncation: magnitudes above the
//! largest finite value saturate to it instead. Subnormals are supported.
//!
//! Truncation works directly on the binary32 bit pattern: the magnitude is
//! decomposed into an exact integer significand and scale, rounded onto the
//! target format's grid with ties to even, then re-encoded. Every value of
//! the supported presets is exactly representable in binary32, so the result
//! round-trips without further rounding.

use crate::tensor::Tensor;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FormatError {
    #[error("invalid format widths: {0}")]
    InvalidWidths(String),
    #[error("cannot truncate non-finite value {value}")]
    NonFinite { value: f32 },
    #[error("cannot truncate non-finite value {value} at element {index}")]
    NonFiniteAt { value: f32, index: usize },
    #[error("format is {bits} bits wide, enumeration supports at most 16")]
    TooWideToEnumerate { bits: u32 },
    #[error("bit pattern {bits:#x} does not fit a {total}-bit format")]
    InvalidPattern { bits: u32, total: u32 },
    #[error("bit pattern {bits:#x} uses the reserved all-ones exponent")]
    ReservedExponent { bits: u32 },
}

/// An IEEE-like binary float format: 1 sign bit, `exp_bits` exponent bits
/// (biased by `2^(exp_bits-1) - 1`), `man_bits` stored mantissa bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FloatFormat {
    exp_bits: u32,
    man_bits: u32,
}

/// FP8 with 5 exponent and 2 mantissa bits (bias 15).
pub const FP8: FloatFormat = FloatFormat { exp_bits: 5, man_bits: 2 };
/// IEEE binary16.
pub const FP16: FloatFormat = FloatFormat { exp_bits: 5, man_bits: 10 };
/// bfloat16: binary32's exponent range with a 7-bit mantissa.
pub const BF16: FloatFormat = FloatFormat { exp_bits: 8, man_bits: 7 };
/// IEEE binary32.
pub const FP32: FloatFormat = FloatFormat { exp_bits: 8, man_bits: 23 };

impl FloatFormat {
    /// Validates the field widths and builds a format.
    pub fn new(exp_bits: u32, man_bits: u32) -> Result<Self, FormatError> {
        if exp_bits < 2 {
            return Err(FormatError::InvalidWidths(format!(
                "exp_bits must be at least 2, got {exp_bits}"
            )));
        }
        if 1 + exp_bits + man_bits > 32 {
            return Err(FormatError::InvalidWidths(format!(
                "1 + {exp_bits} + {man_bits} exceeds 32 bits"
            )));
        }
        Ok(FloatFormat { exp_bits, man_bits })
    }

    pub fn exp_bits(&self) -> u32 {
        self.exp_bits
    }

    pub fn man_bits(&self) -> u32 {
        self.man_bits
    }

    pub fn total_bits(&self) -> u32 {
        1 + self.exp_bits + self.man_bits
    }

    /// Exponent bias, `2^(exp_bits-1) - 1`.
    pub fn bias(&self) -> i32 {
        (1i32 << (self.exp_bits - 1)) - 1
    }

    fn mantissa_mask(&self) -> u32 {
        (1u32 << self.man_bits) - 1
    }

    fn exponent_mask(&self) -> u32 {
        (1u32 << self.exp_bits) - 1
    }

    /// Bit pattern of the largest finite value (top exponent reserved).
    pub fn max_normal_bits(&self) -> u32 {
        ((self.exponent_mask() - 1) << self.man_bits) | self.mantissa_mask()
    }

    /// Derived range and precision properties.
    pub fn properties(&self) -> FormatProperties {
        let bias = self.bias();
        let m = self.man_bits as i32;
        FormatProperties {
            min_subnormal_exp: 1 - bias - m,
            min_normal_exp: 1 - bias,
            // (2 - 2^-m) * 2^bias, written as (1 - 2^-(m+1)) * 2^(bias+1)
            max_normal: (1.0 - pow2(-(m + 1))) * pow2(bias + 1),
            machine_epsilon_exp: -(m + 1),
            // ceil(log2(max_normal / min_subnormal)) = 2*bias + man_bits
            range_log2: 2 * bias + m,
        }
    }

    /// Quantizes a finite `f32` to the format with round-to-nearest-even,
    /// returning the encoded bit pattern (sign bit most significant).
    ///
    /// Magnitudes above the largest finite value saturate to it; magnitudes
    /// that round below half the smallest subnormal flush to signed zero.
    pub fn quantize_bits(&self, x: f32) -> Result<u32, FormatError> {
        if !x.is_finite() {
            return Err(FormatError::NonFinite { value: x });
        }
        let fbits = x.to_bits();
        let sign_bit = (fbits >> 31) << (self.exp_bits + self.man_bits);
        let mag = fbits & 0x7fff_ffff;
        if mag == 0 {
            return Ok(sign_bit);
        }

        // Exact magnitude sig * 2^exp with sig a positive integer.
        let e_field = (mag >> 23) as i32;
        let frac = (mag & 0x007f_ffff) as u64;
        let (sig, exp) = if e_field == 0 {
            (frac, -126 - 23)
        } else {
            (frac | (1 << 23), e_field - 127 - 23)
        };

        let m = self.man_bits as i32;
        let bias = self.bias();
        let min_normal_exp = 1 - bias;
        let log2x = exp + 63 - sig.leading_zeros() as i32;

        // Grid quantum for the binade holding |x|; below the normal range
        // the subnormal quantum applies.
        let ulp_exp = if log2x < min_normal_exp {
            min_normal_exp - m
        } else {
            log2x - m
        };

        let shift = ulp_exp - exp;
        let mut q = if shift <= 0 {
            // |x| already lies on the grid. The shift amount is bounded by
            // the mantissa width, so this cannot overflow.
            sig << (-shift) as u32
        } else {
            rne_shift_right(sig, shift as u32)
        };
        if q == 0 {
            return Ok(sign_bit);
        }

        let mut ulp_exp = ulp_exp;
        if q == 2u64 << m {
            // Rounding carried into the next binade.
            q >>= 1;
            ulp_exp += 1;
        }
        debug_assert!(q < (2u64 << m));

        if q >= 1u64 << m {
            // Normal: value = (2^m + mantissa) * 2^ulp_exp.
            let vlog2 = ulp_exp + m;
            if vlog2 > bias {
                return Ok(sign_bit | self.max_normal_bits());
            }
            let field = (vlog2 + bias) as u32;
            let mantissa = (q as u32) & self.mantissa_mask();
            Ok(sign_bit | (field << self.man_bits) | mantissa)
        } else {
            // Subnormal: exponent field zero, mantissa is the grid count.
            debug_assert_eq!(ulp_exp, min_normal_exp - m);
            Ok(sign_bit | q as u32)
        }
    }

    /// Decodes a bit pattern back to its exact `f32` value. Patterns with
    /// the reserved all-ones exponent are rejected.
    pub fn value_of_bits(&self, bits: u32) -> Result<f32, FormatError> {
        if self.total_bits() < 32 && bits >> self.total_bits() != 0 {
            return Err(FormatError::InvalidPattern {
                bits,
                total: self.total_bits(),
            });
        }
        let mantissa = bits & self.mantissa_mask();
        let field = (bits >> self.man_bits) & self.exponent_mask();
        let negative = (bits >> (self.exp_bits + self.man_bits)) & 1 == 1;
        if field == self.exponent_mask() {
            return Err(FormatError::ReservedExponent { bits });
        }
        let m = self.man_bits as i32;
        let bias = self.bias();
        let v64 = if field == 0 {
            mantissa as f64 * pow2(1 - bias - m)
        } else {
            (((1u64 << self.man_bits) | mantissa as u64) as f64) * pow2(field as i32 - bias - m)
        };
        let v32 = v64 as f32;
        assert!(
            v32 as f64 == v64,
            "format value {v64} is not binary32-exact; only formats whose \
             values fit binary32 are supported"
        );
        Ok(if negative { -v32 } else { v32 })
    }
}

/// Round-to-nearest-even truncation of a finite `f32` to `fmt`, returned as
/// the exact `f32` value of the rounded result.
pub fn truncate_rne(x: f32, fmt: FloatFormat) -> Result<f32, FormatError> {
    let bits = fmt.quantize_bits(x)?;
    Ok(fmt
        .value_of_bits(bits)
        .expect("quantize_bits never emits reserved patterns"))
}

/// Elementwise [`truncate_rne`] over a tensor; shape preserved.
pub fn truncate_tensor(x: &Tensor, fmt: FloatFormat) -> Result<Tensor, FormatError> {
    let mut out = Vec::with_capacity(x.len());
    for (index, &v) in x.data().iter().enumerate() {
        match truncate_rne(v, fmt) {
            Ok(t) => out.push(t),
            Err(FormatError::NonFinite { value }) => {
                return Err(FormatError::NonFiniteAt { value, index })
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// All finite nonnegative representable values of `fmt` in ascending order,
/// starting with zero. Guarded to formats of at most 16 bits.
pub fn enumerate_representable(fmt: FloatFormat) -> Result<Vec<f32>, FormatError> {
    if fmt.total_bits() > 16 {
        return Err(FormatError::TooWideToEnumerate {
            bits: fmt.total_bits(),
        });
    }
    // Nonnegative patterns sort by value, so walking them in order yields an
    // ascending list. The reserved top exponent is skipped.
    let mut out = Vec::new();
    for bits in 0..1u32 << (fmt.exp_bits + fmt.man_bits) {
        match fmt.value_of_bits(bits) {
            Ok(v) => out.push(v),
            Err(FormatError::ReservedExponent { .. }) => break,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Exact range and precision properties of a format, all powers of two
/// except the max normal (which is `(1 - 2^-(man_bits+1)) * 2^(bias+1)`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormatProperties {
    /// Smallest positive subnormal is `2^min_subnormal_exp`.
    pub min_subnormal_exp: i32,
    /// Smallest positive normal is `2^min_normal_exp`.
    pub min_normal_exp: i32,
    /// Largest finite value, exact in `f64`.
    pub max_normal: f64,
    /// Machine epsilon (round-off unit) is `2^machine_epsilon_exp`.
    pub machine_epsilon_exp: i32,
    /// `ceil(log2(max_normal / min_subnormal))`.
    pub range_log2: i32,
}

impl FormatProperties {
    pub fn min_subnormal(&self) -> f64 {
        pow2(self.min_subnormal_exp)
    }

    pub fn min_normal(&self) -> f64 {
        pow2(self.min_normal_exp)
    }

    pub fn machine_epsilon(&self) -> f64 {
        pow2(self.machine_epsilon_exp)
    }
}

/// Exact `2^e` in `f64`.
pub(crate) fn pow2(e: i32) -> f64 {
    (2.0f64).powi(e)
}

fn rne_shift_right(sig: u64, shift: u32) -> u64 {
    if shift > 63 {
        // Magnitude is below half the quantum for any 24-bit significand.
        return 0;
    }
    let q = sig >> shift;
    let rem = sig & ((1u64 << shift) - 1);
    let half = 1u64 << (shift - 1);
    if rem > half || (rem == half && q & 1 == 1) {
        q + 1
    } else {
        q
    }
}
