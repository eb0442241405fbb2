//! ReLU, ReLU6 and Softmax in the quantized domain.

use crate::error::{check_len, KernelError};
use crate::quant::{round_saturate_i8, QuantParams};

/// Activation fused into the producing kernel.
///
/// Fused activations run on the already requantized output, so they share
/// its zero point and scale and reduce to `max` / `min`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Fused {
    #[default]
    None,
    Relu {
        zero: i8,
    },
    /// `ceiling` is `zero + round(6 / scale)`, folded at compile time.
    Relu6 {
        zero: i8,
        ceiling: i32,
    },
}

impl Fused {
    pub fn relu(output: QuantParams) -> Self {
        Fused::Relu {
            zero: output.zero_point as i8,
        }
    }

    pub fn relu6(output: QuantParams) -> Self {
        Fused::Relu6 {
            zero: output.zero_point as i8,
            ceiling: relu6_ceiling(output.zero_point, output.scale),
        }
    }

    #[inline]
    pub fn apply(self, y: i8) -> i8 {
        match self {
            Fused::None => y,
            Fused::Relu { zero } => relu_fused(y, zero),
            Fused::Relu6 { zero, ceiling } => clamp_relu6(y, zero, ceiling),
        }
    }
}

/// Quantized value of 6.0 for a tensor with the given zero point and scale.
pub fn relu6_ceiling(zero: i32, scale: f64) -> i32 {
    zero + libm::round(6.0 / scale) as i32
}

#[inline]
fn clamp_relu6(x: i8, zero: i8, ceiling: i32) -> i8 {
    let lo = (x as i32).max(zero as i32);
    lo.min(ceiling) as i8
}

#[inline]
pub fn relu_fused(x: i8, zero: i8) -> i8 {
    x.max(zero)
}

/// `min(max(x, z), z + round(6 / s))`.
#[inline]
pub fn relu6_fused(x: i8, zero: i8, scale: f64) -> i8 {
    clamp_relu6(x, zero, relu6_ceiling(zero as i32, scale))
}

/// Standalone ReLU with requantization between input and output domains.
pub fn relu(x: i8, input: QuantParams, output: QuantParams) -> i8 {
    let x = x as i32;
    if x < input.zero_point {
        output.zero_point as i8
    } else {
        round_saturate_i8(
            output.zero_point as f64 + input.scale / output.scale * (x - input.zero_point) as f64,
        )
    }
}

/// Standalone ReLU6: ReLU below the quantized 6.0 threshold, `z_y + 6/s_y` above.
pub fn relu6(x: i8, input: QuantParams, output: QuantParams) -> i8 {
    let threshold = input.zero_point as f64 + 6.0 / input.scale;
    if (x as f64) < threshold {
        relu(x, input, output)
    } else {
        round_saturate_i8(output.zero_point as f64 + 6.0 / output.scale)
    }
}

/// Softmax parameters; the kernel normalizes each row of `row_len` elements.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Softmax {
    pub row_len: usize,
    pub input_scale: f64,
    pub output: QuantParams,
}

/// Row-wise softmax. The row maximum is subtracted inside the exponentials,
/// which leaves the result unchanged but keeps `exp` finite.
pub fn softmax(input: &[i8], params: &Softmax, output: &mut [i8]) -> Result<(), KernelError> {
    let n = params.row_len;
    if n == 0 {
        return Err(KernelError::Geometry("softmax row length is zero"));
    }
    check_len("output", input.len(), output.len())?;
    if !input.len().is_multiple_of(n) {
        return Err(KernelError::Length {
            buffer: "input",
            expected: (input.len() / n + 1) * n,
            actual: input.len(),
        });
    }
    let zero = params.output.zero_point as f64;
    for (row, out) in input.chunks_exact(n).zip(output.chunks_exact_mut(n)) {
        let max = row.iter().copied().max().unwrap_or(0) as i32;
        let mut sum = 0.0f64;
        for &x in row {
            sum += libm::exp(params.input_scale * (x as i32 - max) as f64);
        }
        let denom = params.output.scale * sum;
        for (&x, y) in row.iter().zip(out.iter_mut()) {
            let e = libm::exp(params.input_scale * (x as i32 - max) as f64);
            *y = round_saturate_i8(zero + e / denom);
        }
    }
    Ok(())
}
