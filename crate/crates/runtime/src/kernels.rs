//! Operator kernels.
//!
//! Each kernel evaluates the zero-point-expanded form of its quantized
//! equation:
//!
//! ```text
//! y = round(bias_term + scale_ratio * (Σ x·w − z_w·Σ x − z_x·Σ w + n·z_x·z_w))
//! ```
//!
//! where `bias_term`, `scale_ratio`, `Σ w` and `n·z_x·z_w` come pre-folded in
//! the parameter struct. Only the two input-dependent sums are computed here.
//! Accumulators are `i32`; the compiler rejects layers whose worst case
//! would not fit.

use crate::activation::Fused;
use crate::error::{check_len, KernelError};
use crate::quant::round_saturate_i8;
use crate::view::{extract_view, Window};

pub use crate::activation::{softmax, Softmax};

/// Folded FullyConnected layer: `Y[m,p] = X[m,n] · W[n,p] + b`.
#[derive(Debug, Clone, Copy)]
pub struct FullyConnected<'a> {
    pub rows: usize,
    pub inner: usize,
    pub units: usize,
    /// Row-major `[inner, units]`.
    pub weights: &'a [i8],
    /// `z_y + (s_b / s_y)(b_j − z_b)` per output unit.
    pub bias_term: &'a [f64],
    /// `s_x · s_w / s_y`.
    pub scale_ratio: f64,
    /// Column sums of `weights`, not yet multiplied by `input_zero`.
    pub weight_col_sums: &'a [i32],
    pub input_zero: i32,
    pub weight_zero: i32,
    /// `inner · input_zero · weight_zero`.
    pub n_zx_zw: i32,
    pub fused: Fused,
}

impl FullyConnected<'_> {
    fn check(&self, input: &[i8], output: &[i8]) -> Result<(), KernelError> {
        check_len("weights", self.inner * self.units, self.weights.len())?;
        check_len("bias_term", self.units, self.bias_term.len())?;
        check_len("weight_col_sums", self.units, self.weight_col_sums.len())?;
        check_len("input", self.rows * self.inner, input.len())?;
        check_len("output", self.rows * self.units, output.len())
    }

    #[inline]
    fn finish(&self, unit: usize, dot: i32, zw_xsum: i32) -> i8 {
        let acc = dot - zw_xsum - self.input_zero * self.weight_col_sums[unit] + self.n_zx_zw;
        self.fused.apply(round_saturate_i8(
            self.bias_term[unit] + self.scale_ratio * acc as f64,
        ))
    }
}

#[inline]
fn row_sum(row: &[i8]) -> i32 {
    row.iter().map(|&x| x as i32).sum()
}

pub fn fully_connected(
    input: &[i8],
    params: &FullyConnected<'_>,
    output: &mut [i8],
) -> Result<(), KernelError> {
    params.check(input, output)?;
    let (n, p) = (params.inner, params.units);
    for (x, y) in input.chunks_exact(n).zip(output.chunks_exact_mut(p)) {
        let zw_xsum = params.weight_zero * row_sum(x);
        for (j, out) in y.iter_mut().enumerate() {
            let dot: i32 = x
                .iter()
                .zip(params.weights[j..].iter().step_by(p))
                .map(|(&a, &w)| a as i32 * w as i32)
                .sum();
            *out = params.finish(j, dot, zw_xsum);
        }
    }
    Ok(())
}

/// Number of pages needed to cover `units` output neurons, `page_size` at a time.
pub fn page_count(units: usize, page_size: usize) -> usize {
    units.div_ceil(page_size)
}

/// Paged FullyConnected: the layer is processed `page_size` output neurons
/// at a time. Each page's weight columns are first copied into `page`
/// (at least `inner * page_size` long), so only one page of weights is
/// resident at once. Output is bit-identical to [`fully_connected`].
///
/// Returns the number of pages executed.
pub fn fully_connected_paged(
    input: &[i8],
    params: &FullyConnected<'_>,
    page_size: usize,
    page: &mut [i8],
    output: &mut [i8],
) -> Result<usize, KernelError> {
    params.check(input, output)?;
    let (n, p) = (params.inner, params.units);
    if page_size == 0 || page_size > p {
        return Err(KernelError::PageSize {
            page_size,
            units: p,
        });
    }
    if page.len() < n * page_size {
        return Err(KernelError::Length {
            buffer: "page",
            expected: n * page_size,
            actual: page.len(),
        });
    }
    let mut pages = 0;
    for first in (0..p).step_by(page_size) {
        let last = (first + page_size).min(p);
        for (slot, j) in (first..last).enumerate() {
            let column = &mut page[slot * n..(slot + 1) * n];
            for (k, w) in column.iter_mut().enumerate() {
                *w = params.weights[k * p + j];
            }
        }
        for (x, y) in input.chunks_exact(n).zip(output.chunks_exact_mut(p)) {
            let zw_xsum = params.weight_zero * row_sum(x);
            for (slot, j) in (first..last).enumerate() {
                let column = &page[slot * n..(slot + 1) * n];
                let dot: i32 = x
                    .iter()
                    .zip(column)
                    .map(|(&a, &w)| a as i32 * w as i32)
                    .sum();
                y[j] = params.finish(j, dot, zw_xsum);
            }
        }
        pages += 1;
    }
    Ok(pages)
}

/// Spatial layout of a sliding-window operator over a single-batch NHWC tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub out_c: usize,
    pub window: Window,
}

impl ConvGeometry {
    pub fn input_len(&self) -> usize {
        self.in_h * self.in_w * self.in_c
    }

    pub fn output_len(&self) -> usize {
        self.out_h * self.out_w * self.out_c
    }

    /// Elements in one extracted view, `filter_h · filter_w · in_c`.
    pub fn view_len(&self) -> usize {
        self.window.area() * self.in_c
    }

    fn check(&self, input: &[i8], view: &[i8], output: &[i8]) -> Result<(), KernelError> {
        check_len("input", self.input_len(), input.len())?;
        check_len("view", self.view_len(), view.len())?;
        check_len("output", self.output_len(), output.len())?;
        match self.window.output_dims(self.in_h, self.in_w) {
            Some(dims) if dims == (self.out_h, self.out_w) => Ok(()),
            _ => Err(KernelError::Geometry("output extent disagrees with window")),
        }
    }

    fn view_at(&self, input: &[i8], row: usize, col: usize, fill: i8, view: &mut [i8]) {
        // Geometry was checked up front, so extraction cannot fail here.
        let _ = extract_view(
            input,
            self.in_h,
            self.in_w,
            self.in_c,
            row,
            col,
            &self.window,
            fill,
            view,
        );
    }
}

/// Folded Conv2D or DepthwiseConv2D layer.
///
/// Conv2D filters are `[out_c, filter_h, filter_w, in_c]`; depthwise filters
/// are `[1, filter_h, filter_w, out_c]` with `out_c` a multiple of `in_c`.
#[derive(Debug, Clone, Copy)]
pub struct Convolution<'a> {
    pub geometry: ConvGeometry,
    pub filters: &'a [i8],
    /// `z_y + (s_b / s_y)(b − z_b)` per output channel.
    pub bias_term: &'a [f64],
    /// `s_x · s_f / s_y`.
    pub scale_ratio: f64,
    /// Sum of each filter (conv) or each output channel's kernel (depthwise).
    pub filter_sums: &'a [i32],
    pub input_zero: i32,
    pub filter_zero: i32,
    /// `filter_h · filter_w · depth · z_x · z_f`, depth being `in_c` for conv and 1 for depthwise.
    pub window_zero_product: i32,
    pub fused: Fused,
}

impl Convolution<'_> {
    fn check(
        &self,
        input: &[i8],
        view: &[i8],
        output: &[i8],
        filter_len: usize,
    ) -> Result<(), KernelError> {
        self.geometry.check(input, view, output)?;
        let c = self.geometry.out_c;
        check_len("filters", filter_len, self.filters.len())?;
        check_len("bias_term", c, self.bias_term.len())?;
        check_len("filter_sums", c, self.filter_sums.len())
    }

    #[inline]
    fn finish(&self, channel: usize, dot: i32, xsum: i32) -> i8 {
        let acc = dot - self.filter_zero * xsum - self.input_zero * self.filter_sums[channel]
            + self.window_zero_product;
        self.fused.apply(round_saturate_i8(
            self.bias_term[channel] + self.scale_ratio * acc as f64,
        ))
    }
}

/// Conv2D; every filter spans all input channels. Padding reads as the
/// input zero point, i.e. real zero.
pub fn conv2d(
    input: &[i8],
    params: &Convolution<'_>,
    view: &mut [i8],
    output: &mut [i8],
) -> Result<(), KernelError> {
    let g = params.geometry;
    params.check(input, view, output, g.out_c * g.view_len())?;
    let fill = params.input_zero as i8;
    let per_filter = g.view_len();
    let mut out = output.chunks_exact_mut(g.out_c);
    for row in 0..g.out_h {
        for col in 0..g.out_w {
            g.view_at(input, row, col, fill, view);
            let xsum = row_sum(view);
            let y = out.next().expect("output length checked");
            for (f, filter) in params.filters.chunks_exact(per_filter).enumerate() {
                let dot: i32 = view
                    .iter()
                    .zip(filter)
                    .map(|(&a, &w)| a as i32 * w as i32)
                    .sum();
                y[f] = params.finish(f, dot, xsum);
            }
        }
    }
    Ok(())
}

/// DepthwiseConv2D; output channel `k` convolves input channel
/// `k / multiplier` only. Channels are never merged.
pub fn depthwise_conv2d(
    input: &[i8],
    params: &Convolution<'_>,
    view: &mut [i8],
    output: &mut [i8],
) -> Result<(), KernelError> {
    let g = params.geometry;
    params.check(input, view, output, g.window.area() * g.out_c)?;
    if g.in_c == 0 || !g.out_c.is_multiple_of(g.in_c) {
        return Err(KernelError::Geometry(
            "depthwise output channels must be a multiple of input channels",
        ));
    }
    let multiplier = g.out_c / g.in_c;
    let fill = params.input_zero as i8;
    let mut out = output.chunks_exact_mut(g.out_c);
    for row in 0..g.out_h {
        for col in 0..g.out_w {
            g.view_at(input, row, col, fill, view);
            let y = out.next().expect("output length checked");
            for (k, slot) in y.iter_mut().enumerate() {
                let ic = k / multiplier;
                let mut dot = 0i32;
                let mut xsum = 0i32;
                for t in 0..g.window.area() {
                    let x = view[t * g.in_c + ic] as i32;
                    dot += x * params.filters[t * g.out_c + k] as i32;
                    xsum += x;
                }
                *slot = params.finish(k, dot, xsum);
            }
        }
    }
    Ok(())
}

/// Folded AveragePool2D layer.
#[derive(Debug, Clone, Copy)]
pub struct AveragePool {
    /// `out_c` must equal `in_c`.
    pub geometry: ConvGeometry,
    /// `s_x / s_y`.
    pub scale_ratio: f64,
    /// `1 / (filter_h · filter_w)`.
    pub inverse_area: f64,
    pub input_zero: i32,
    pub output_zero: i32,
    pub fused: Fused,
}

/// AveragePool2D, per channel. The divisor is the full window area, so
/// padded positions count as real zeros.
pub fn average_pool2d(
    input: &[i8],
    params: &AveragePool,
    view: &mut [i8],
    output: &mut [i8],
) -> Result<(), KernelError> {
    let g = params.geometry;
    g.check(input, view, output)?;
    if g.out_c != g.in_c {
        return Err(KernelError::Geometry("pooling must preserve channels"));
    }
    let fill = params.input_zero as i8;
    let zero = params.output_zero as f64;
    let zx = params.input_zero as f64;
    let mut out = output.chunks_exact_mut(g.out_c);
    for row in 0..g.out_h {
        for col in 0..g.out_w {
            g.view_at(input, row, col, fill, view);
            let y = out.next().expect("output length checked");
            for (c, slot) in y.iter_mut().enumerate() {
                let sum: i32 = view.iter().skip(c).step_by(g.in_c).map(|&x| x as i32).sum();
                let mean = params.inverse_area * sum as f64;
                *slot = params
                    .fused
                    .apply(round_saturate_i8(zero + params.scale_ratio * (mean - zx)));
            }
        }
    }
    Ok(())
}

/// Reshape only relabels dimensions; data order and quantization are unchanged.
pub fn reshape(input: &[i8], output: &mut [i8]) -> Result<(), KernelError> {
    check_len("output", input.len(), output.len())?;
    output.copy_from_slice(input);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::view::Padding;

    fn identity_fc<'a>(weights: &'a [i8], bias: &'a [f64], sums: &'a [i32]) -> FullyConnected<'a> {
        FullyConnected {
            rows: 1,
            inner: 2,
            units: 2,
            weights,
            bias_term: bias,
            scale_ratio: 1.0,
            weight_col_sums: sums,
            input_zero: 0,
            weight_zero: 0,
            n_zx_zw: 0,
            fused: Fused::None,
        }
    }

    #[test]
    fn fc_identity_under_unit_quantization() {
        let w = [1, 0, 0, 1];
        let p = identity_fc(&w, &[0.0, 0.0], &[1, 1]);
        let mut y = [0i8; 2];
        fully_connected(&[1, 2], &p, &mut y).unwrap();
        assert_eq!(y, [1, 2]);
    }

    #[test]
    fn fc_rejects_bad_input_length() {
        let w = [1, 0, 0, 1];
        let p = identity_fc(&w, &[0.0, 0.0], &[1, 1]);
        let mut y = [0i8; 2];
        assert!(matches!(
            fully_connected(&[1, 2, 3], &p, &mut y),
            Err(KernelError::Length {
                buffer: "input",
                ..
            })
        ));
    }

    #[test]
    fn paged_page_size_bounds() {
        let w = [1, 0, 0, 1];
        let p = identity_fc(&w, &[0.0, 0.0], &[1, 1]);
        let mut y = [0i8; 2];
        let mut page = [0i8; 4];
        assert!(fully_connected_paged(&[1, 2], &p, 0, &mut page, &mut y).is_err());
        assert!(fully_connected_paged(&[1, 2], &p, 3, &mut page, &mut y).is_err());
        assert!(fully_connected_paged(&[1, 2], &p, 2, &mut page[..3], &mut y).is_err());
        assert_eq!(
            fully_connected_paged(&[1, 2], &p, 1, &mut page, &mut y),
            Ok(2)
        );
        assert_eq!(y, [1, 2]);
    }

    #[test]
    fn one_by_one_conv_is_identity() {
        let g = ConvGeometry {
            in_h: 2,
            in_w: 3,
            in_c: 1,
            out_h: 2,
            out_w: 3,
            out_c: 1,
            window: Window {
                filter_h: 1,
                filter_w: 1,
                stride_h: 1,
                stride_w: 1,
                padding: Padding::Same,
            },
        };
        let p = Convolution {
            geometry: g,
            filters: &[1],
            bias_term: &[0.0],
            scale_ratio: 1.0,
            filter_sums: &[1],
            input_zero: 0,
            filter_zero: 0,
            window_zero_product: 0,
            fused: Fused::None,
        };
        let x = [-3, 0, 5, 7, -128, 127];
        let mut view = [0i8; 1];
        let mut y = [0i8; 6];
        conv2d(&x, &p, &mut view, &mut y).unwrap();
        assert_eq!(y, x);
        depthwise_conv2d(&x, &p, &mut view, &mut y).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn average_of_two_by_two_block() {
        let g = ConvGeometry {
            in_h: 2,
            in_w: 2,
            in_c: 1,
            out_h: 1,
            out_w: 1,
            out_c: 1,
            window: Window {
                filter_h: 2,
                filter_w: 2,
                stride_h: 2,
                stride_w: 2,
                padding: Padding::Valid,
            },
        };
        let p = AveragePool {
            geometry: g,
            scale_ratio: 1.0,
            inverse_area: 0.25,
            input_zero: 0,
            output_zero: 0,
            fused: Fused::None,
        };
        let mut view = [0i8; 4];
        let mut y = [0i8; 1];
        average_pool2d(&[0, 2, 4, 6], &p, &mut view, &mut y).unwrap();
        assert_eq!(y, [3]);
    }

    #[test]
    fn reshape_keeps_order() {
        let mut y = [0i8; 4];
        reshape(&[1, 2, 3, 4], &mut y).unwrap();
        assert_eq!(y, [1, 2, 3, 4]);
        assert!(reshape(&[1, 2, 3], &mut y).is_err());
    }

    #[test]
    fn page_counts() {
        assert_eq!(page_count(32, 1), 32);
        assert_eq!(page_count(32, 32), 1);
        assert_eq!(page_count(16, 5), 4);
    }
}
