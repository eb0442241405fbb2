//! Affine quantization arithmetic: `r = scale * (q - zero_point)`.
//!
//! One rounding rule is used everywhere: round half away from zero, then
//! saturate. Requantization multiplies in double precision.

/// Smallest value of an `i8` tensor element, widened.
pub const I8_MIN: i32 = i8::MIN as i32;
/// Largest value of an `i8` tensor element, widened.
pub const I8_MAX: i32 = i8::MAX as i32;

/// Per-tensor scale and zero point.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QuantParams {
    pub scale: f64,
    pub zero_point: i32,
}

impl QuantParams {
    pub const fn new(scale: f64, zero_point: i32) -> Self {
        Self { scale, zero_point }
    }

    /// Scale is positive and finite.
    pub fn has_valid_scale(&self) -> bool {
        self.scale.is_finite() && self.scale > 0.0
    }
}

/// A folded rescaling factor (e.g. `s_x * s_w / s_y`) plus the output zero point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Requant {
    pub multiplier: f64,
    pub output_zero: i32,
}

/// Round half away from zero.
#[inline]
pub fn round_half_away(x: f64) -> f64 {
    libm::round(x)
}

/// Rounds `x` and clamps the result to `[lo, hi]`.
#[inline]
pub fn round_saturate(x: f64, lo: i32, hi: i32) -> i32 {
    let r = round_half_away(x);
    if r.is_nan() || r <= lo as f64 {
        lo
    } else if r >= hi as f64 {
        hi
    } else {
        r as i32
    }
}

/// Rounds `x` and saturates into the `i8` range.
#[inline]
pub fn round_saturate_i8(x: f64) -> i8 {
    round_saturate(x, I8_MIN, I8_MAX) as i8
}

#[inline]
pub fn dequantize(q: i32, p: QuantParams) -> f64 {
    p.scale * (q - p.zero_point) as f64
}

/// Inverse of [`dequantize`], saturating into `[lo, hi]`.
#[inline]
pub fn quantize(r: f64, p: QuantParams, lo: i32, hi: i32) -> i32 {
    let q = round_half_away(r / p.scale) + p.zero_point as f64;
    if q.is_nan() || q <= lo as f64 {
        lo
    } else if q >= hi as f64 {
        hi
    } else {
        q as i32
    }
}

/// `clamp(round(multiplier * acc) + output_zero, lo, hi)`.
#[inline]
pub fn requantize(acc: i32, r: Requant, lo: i32, hi: i32) -> i32 {
    let q = round_half_away(r.multiplier * acc as f64) + r.output_zero as f64;
    if q <= lo as f64 {
        lo
    } else if q >= hi as f64 {
        hi
    } else {
        q as i32
    }
}
