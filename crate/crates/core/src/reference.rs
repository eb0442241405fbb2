//! Reference evaluators used as test oracles.
//!
//! [`float_reference`] evaluates each operator's real-valued definition in
//! `f64` on dequantized tensors. [`naive_quantized_reference`] evaluates the
//! quantized equations term by term with straight nested loops and no
//! folded constants. Neither shares code with the kernels beyond the
//! rounding rule.

use tinyaot_runtime::quant::{dequantize, round_saturate_i8};
use tinyaot_runtime::{Padding, QuantParams};

use crate::error::{Error, Result};
use crate::graph::{ConstTensor, Graph, ShapedOp};
use crate::model::{Activation, OpCode};

fn check_input(g: &Graph, len: usize) -> Result<()> {
    if len != g.input_len() {
        return Err(Error::Size {
            expected: g.input_len(),
            actual: len,
        });
    }
    Ok(())
}

fn real_constant(t: &ConstTensor) -> Vec<f64> {
    t.data.iter().map(|&v| dequantize(v, t.quant)).collect()
}

fn real_activation(act: Activation, r: f64) -> f64 {
    match act {
        Activation::None => r,
        Activation::Relu => r.max(0.0),
        Activation::Relu6 => r.clamp(0.0, 6.0),
    }
}

/// Top-left input coordinate of the window for output position `o`.
fn origin(o: usize, stride: usize, filter: usize, padding: Padding) -> i64 {
    let shift = match padding {
        Padding::Same => (filter as i64 - 1) / 2,
        Padding::Valid => 0,
    };
    (o * stride) as i64 - shift
}

/// Input element `(r, c, ch)` of a `[1, h, w, channels]` tensor, or `None`
/// when the coordinate falls in the padding.
fn at<T: Copy>(
    x: &[T],
    h: usize,
    w: usize,
    channels: usize,
    r: i64,
    c: i64,
    ch: usize,
) -> Option<T> {
    if r < 0 || c < 0 || r >= h as i64 || c >= w as i64 {
        None
    } else {
        Some(x[(r as usize * w + c as usize) * channels + ch])
    }
}

struct Dims {
    h: usize,
    w: usize,
    c: usize,
    oh: usize,
    ow: usize,
    oc: usize,
}

fn dims(op: &ShapedOp) -> Dims {
    Dims {
        h: op.input_shape[1],
        w: op.input_shape[2],
        c: op.input_shape[3],
        oh: op.output_shape[1],
        ow: op.output_shape[2],
        oc: op.output_shape[3],
    }
}

/// Real-valued output of one operator given its real-valued input.
pub fn float_reference_op(op: &ShapedOp, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; op.output_len()];
    match op.kind {
        OpCode::FullyConnected => {
            let w = real_constant(op.weights.as_ref().expect("weights"));
            let b = op.bias.as_ref().map(real_constant);
            let (m, n, p) = (op.input_shape[0], op.input_shape[1], op.output_shape[1]);
            for i in 0..m {
                for j in 0..p {
                    let mut acc = b.as_ref().map_or(0.0, |b| b[j]);
                    for k in 0..n {
                        acc += x[i * n + k] * w[k * p + j];
                    }
                    y[i * p + j] = real_activation(op.fused, acc);
                }
            }
        }
        OpCode::Conv2d | OpCode::DepthwiseConv2d => {
            let f = real_constant(op.weights.as_ref().expect("filters"));
            let b = op.bias.as_ref().map(real_constant);
            let win = op.window().expect("window");
            let d = dims(op);
            let depthwise = op.kind == OpCode::DepthwiseConv2d;
            for i in 0..d.oh {
                for j in 0..d.ow {
                    let (r0, c0) = (
                        origin(i, win.stride_h, win.filter_h, win.padding),
                        origin(j, win.stride_w, win.filter_w, win.padding),
                    );
                    for o in 0..d.oc {
                        let mut acc = b.as_ref().map_or(0.0, |b| b[o]);
                        for kh in 0..win.filter_h {
                            for kw in 0..win.filter_w {
                                let (r, c) = (r0 + kh as i64, c0 + kw as i64);
                                if depthwise {
                                    let ic = o / (d.oc / d.c);
                                    let xv = at(x, d.h, d.w, d.c, r, c, ic).unwrap_or(0.0);
                                    acc += xv * f[(kh * win.filter_w + kw) * d.oc + o];
                                } else {
                                    for ic in 0..d.c {
                                        let xv = at(x, d.h, d.w, d.c, r, c, ic).unwrap_or(0.0);
                                        let fi = ((o * win.filter_h + kh) * win.filter_w + kw)
                                            * d.c
                                            + ic;
                                        acc += xv * f[fi];
                                    }
                                }
                            }
                        }
                        y[(i * d.ow + j) * d.oc + o] = real_activation(op.fused, acc);
                    }
                }
            }
        }
        OpCode::AveragePool2d => {
            let win = op.window().expect("window");
            let d = dims(op);
            let area = (win.filter_h * win.filter_w) as f64;
            for i in 0..d.oh {
                for j in 0..d.ow {
                    let (r0, c0) = (
                        origin(i, win.stride_h, win.filter_h, win.padding),
                        origin(j, win.stride_w, win.filter_w, win.padding),
                    );
                    for ch in 0..d.c {
                        let mut sum = 0.0;
                        for kh in 0..win.filter_h {
                            for kw in 0..win.filter_w {
                                sum += at(x, d.h, d.w, d.c, r0 + kh as i64, c0 + kw as i64, ch)
                                    .unwrap_or(0.0);
                            }
                        }
                        y[(i * d.ow + j) * d.c + ch] = real_activation(op.fused, sum / area);
                    }
                }
            }
        }
        OpCode::Reshape => y.copy_from_slice(x),
        OpCode::Softmax => {
            let n = *op.input_shape.last().expect("shape");
            for (row, out) in x.chunks(n).zip(y.chunks_mut(n)) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                for (o, e) in out.iter_mut().zip(&exps) {
                    *o = e / total;
                }
            }
        }
    }
    y
}

/// Dequantizes `input`, then evaluates every operator in real arithmetic
/// with no intermediate quantization.
pub fn float_reference(g: &Graph, input: &[i8]) -> Result<Vec<f64>> {
    check_input(g, input.len())?;
    let mut x: Vec<f64> = input
        .iter()
        .map(|&q| dequantize(q as i32, g.input_quant))
        .collect();
    for op in &g.ops {
        x = float_reference_op(op, &x);
    }
    Ok(x)
}

/// Real-valued output of `op` for a quantized input in its input domain.
pub fn float_reference_quantized_input(op: &ShapedOp, input: &[i8]) -> Vec<f64> {
    let x: Vec<f64> = input
        .iter()
        .map(|&q| dequantize(q as i32, op.input_quant))
        .collect();
    float_reference_op(op, &x)
}

fn fused_quantized(act: Activation, y: i8, out: QuantParams) -> i8 {
    let z = out.zero_point;
    let v = y as i32;
    match act {
        Activation::None => y,
        Activation::Relu => v.max(z) as i8,
        Activation::Relu6 => {
            let top = z + libm::round(6.0 / out.scale) as i32;
            v.max(z).min(top) as i8
        }
    }
}

/// `z_y + (s_b / s_y)(b − z_b)`, or `z_y` without a bias.
fn bias_real(op: &ShapedOp, channel: usize) -> f64 {
    let y = op.output_quant;
    match &op.bias {
        Some(b) => {
            let d = b.data[channel] as i64 - b.quant.zero_point as i64;
            y.zero_point as f64 + (b.quant.scale / y.scale) * d as f64
        }
        None => y.zero_point as f64,
    }
}

/// Evaluates `bias + (s_x s_w / s_y)[Σxw − z_w Σx − z_x Σw + n z_x z_w]`
/// from the four accumulated terms.
fn requantize_bracket(op: &ShapedOp, channel: usize, xw: i64, xs: i64, ws: i64, n: i64) -> i8 {
    let x = op.input_quant;
    let wq = op.weights.as_ref().expect("weights").quant;
    let (zx, zw) = (x.zero_point as i64, wq.zero_point as i64);
    let bracket = xw - zw * xs - zx * ws + n * zx * zw;
    let multiplier = x.scale * wq.scale / op.output_quant.scale;
    let y = round_saturate_i8(bias_real(op, channel) + multiplier * bracket as f64);
    fused_quantized(op.fused, y, op.output_quant)
}

/// Quantized output of one operator, evaluated literally.
pub fn naive_quantized_op(op: &ShapedOp, x: &[i8]) -> Vec<i8> {
    let mut y = vec![0i8; op.output_len()];
    let zx = op.input_quant.zero_point as i64;
    match op.kind {
        OpCode::FullyConnected => {
            let w = &op.weights.as_ref().expect("weights").data;
            let (m, n, p) = (op.input_shape[0], op.input_shape[1], op.output_shape[1]);
            for i in 0..m {
                for j in 0..p {
                    let (mut xw, mut xs, mut ws) = (0i64, 0i64, 0i64);
                    for k in 0..n {
                        let a = x[i * n + k] as i64;
                        let b = w[k * p + j] as i64;
                        xw += a * b;
                        xs += a;
                        ws += b;
                    }
                    y[i * p + j] = requantize_bracket(op, j, xw, xs, ws, n as i64);
                }
            }
        }
        OpCode::Conv2d | OpCode::DepthwiseConv2d => {
            let f = &op.weights.as_ref().expect("filters").data;
            let win = op.window().expect("window");
            let d = dims(op);
            let depthwise = op.kind == OpCode::DepthwiseConv2d;
            for i in 0..d.oh {
                for j in 0..d.ow {
                    let r0 = origin(i, win.stride_h, win.filter_h, win.padding);
                    let c0 = origin(j, win.stride_w, win.filter_w, win.padding);
                    for o in 0..d.oc {
                        let (mut xw, mut xs, mut ws, mut count) = (0i64, 0i64, 0i64, 0i64);
                        for kh in 0..win.filter_h {
                            for kw in 0..win.filter_w {
                                let (r, c) = (r0 + kh as i64, c0 + kw as i64);
                                let channels: Vec<(usize, usize)> = if depthwise {
                                    let ic = o / (d.oc / d.c);
                                    vec![(ic, (kh * win.filter_w + kw) * d.oc + o)]
                                } else {
                                    (0..d.c)
                                        .map(|ic| {
                                            (
                                                ic,
                                                ((o * win.filter_h + kh) * win.filter_w + kw) * d.c
                                                    + ic,
                                            )
                                        })
                                        .collect()
                                };
                                for (ic, fi) in channels {
                                    // Padding holds the quantized zero.
                                    let a = at(x, d.h, d.w, d.c, r, c, ic).map_or(zx, |v| v as i64);
                                    let b = f[fi] as i64;
                                    xw += a * b;
                                    xs += a;
                                    ws += b;
                                    count += 1;
                                }
                            }
                        }
                        y[(i * d.ow + j) * d.oc + o] = requantize_bracket(op, o, xw, xs, ws, count);
                    }
                }
            }
        }
        OpCode::AveragePool2d => {
            let win = op.window().expect("window");
            let d = dims(op);
            let (xq, yq) = (op.input_quant, op.output_quant);
            for i in 0..d.oh {
                for j in 0..d.ow {
                    let r0 = origin(i, win.stride_h, win.filter_h, win.padding);
                    let c0 = origin(j, win.stride_w, win.filter_w, win.padding);
                    for ch in 0..d.c {
                        let mut sum = 0i64;
                        for kh in 0..win.filter_h {
                            for kw in 0..win.filter_w {
                                sum += at(x, d.h, d.w, d.c, r0 + kh as i64, c0 + kw as i64, ch)
                                    .map_or(zx, |v| v as i64);
                            }
                        }
                        let mean = (1.0 / (win.filter_h * win.filter_w) as f64) * sum as f64;
                        let v = round_saturate_i8(
                            yq.zero_point as f64 + (xq.scale / yq.scale) * (mean - zx as f64),
                        );
                        y[(i * d.ow + j) * d.c + ch] = fused_quantized(op.fused, v, yq);
                    }
                }
            }
        }
        OpCode::Reshape => y.copy_from_slice(x),
        OpCode::Softmax => {
            let n = *op.input_shape.last().expect("shape");
            let (sx, out) = (op.input_quant.scale, op.output_quant);
            for (row, dst) in x.chunks(n).zip(y.chunks_mut(n)) {
                let max = *row.iter().max().expect("non-empty row") as i32;
                let exps: Vec<f64> = row
                    .iter()
                    .map(|&v| libm::exp(sx * (v as i32 - max) as f64))
                    .collect();
                let mut total = 0.0;
                for e in &exps {
                    total += e;
                }
                for (d, e) in dst.iter_mut().zip(&exps) {
                    *d = round_saturate_i8(out.zero_point as f64 + e / (out.scale * total));
                }
            }
        }
    }
    y
}

/// Runs the graph with [`naive_quantized_op`] for every operator.
pub fn naive_quantized_reference(g: &Graph, input: &[i8]) -> Result<Vec<i8>> {
    check_input(g, input.len())?;
    let mut x = input.to_vec();
    for op in &g.ops {
        x = naive_quantized_op(op, &x);
    }
    Ok(x)
}
