//! Pre-processing: folds every input-independent term of each operator's
//! quantized equation into a [`CompiledPlan`], and runs such plans directly.

use serde::{Deserialize, Serialize};
use tinyaot_runtime::kernels::{self, ConvGeometry, Softmax};
use tinyaot_runtime::{Fused, QuantParams};

use crate::error::{Error, Result};
use crate::graph::{ConstTensor, Graph, ShapedOp};
use crate::model::{Activation, OpCode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub shape: Vec<usize>,
    pub quant: QuantParams,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Folded FullyConnected constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldedFc {
    pub rows: usize,
    pub inner: usize,
    pub units: usize,
    pub weights: Vec<i8>,
    pub bias_term: Vec<f64>,
    pub scale_ratio: f64,
    pub weight_col_sums: Vec<i32>,
    pub input_zero: i32,
    pub weight_zero: i32,
    pub n_zx_zw: i32,
    pub fused: Fused,
}

impl FoldedFc {
    pub fn params(&self) -> kernels::FullyConnected<'_> {
        kernels::FullyConnected {
            rows: self.rows,
            inner: self.inner,
            units: self.units,
            weights: &self.weights,
            bias_term: &self.bias_term,
            scale_ratio: self.scale_ratio,
            weight_col_sums: &self.weight_col_sums,
            input_zero: self.input_zero,
            weight_zero: self.weight_zero,
            n_zx_zw: self.n_zx_zw,
            fused: self.fused,
        }
    }
}

/// Folded Conv2D / DepthwiseConv2D constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldedConv {
    pub geometry: ConvGeometry,
    pub filters: Vec<i8>,
    pub bias_term: Vec<f64>,
    pub scale_ratio: f64,
    pub filter_sums: Vec<i32>,
    pub input_zero: i32,
    pub filter_zero: i32,
    pub window_zero_product: i32,
    pub fused: Fused,
}

impl FoldedConv {
    pub fn params(&self) -> kernels::Convolution<'_> {
        kernels::Convolution {
            geometry: self.geometry,
            filters: &self.filters,
            bias_term: &self.bias_term,
            scale_ratio: self.scale_ratio,
            filter_sums: &self.filter_sums,
            input_zero: self.input_zero,
            filter_zero: self.filter_zero,
            window_zero_product: self.window_zero_product,
            fused: self.fused,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldedPool {
    pub geometry: ConvGeometry,
    pub scale_ratio: f64,
    pub inverse_area: f64,
    pub input_zero: i32,
    pub output_zero: i32,
    pub fused: Fused,
}

impl FoldedPool {
    pub fn params(&self) -> kernels::AveragePool {
        kernels::AveragePool {
            geometry: self.geometry,
            scale_ratio: self.scale_ratio,
            inverse_area: self.inverse_area,
            input_zero: self.input_zero,
            output_zero: self.output_zero,
            fused: self.fused,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldedSoftmax {
    pub row_len: usize,
    pub input_scale: f64,
    pub output: QuantParams,
}

impl FoldedSoftmax {
    pub fn params(&self) -> Softmax {
        Softmax {
            row_len: self.row_len,
            input_scale: self.input_scale,
            output: self.output,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kernel {
    FullyConnected(FoldedFc),
    Conv2d(FoldedConv),
    DepthwiseConv2d(FoldedConv),
    AveragePool2d(FoldedPool),
    Reshape,
    Softmax(FoldedSoftmax),
}

impl Kernel {
    pub fn op_code(&self) -> OpCode {
        match self {
            Kernel::FullyConnected(_) => OpCode::FullyConnected,
            Kernel::Conv2d(_) => OpCode::Conv2d,
            Kernel::DepthwiseConv2d(_) => OpCode::DepthwiseConv2d,
            Kernel::AveragePool2d(_) => OpCode::AveragePool2d,
            Kernel::Reshape => OpCode::Reshape,
            Kernel::Softmax(_) => OpCode::Softmax,
        }
    }
}

/// Run a FullyConnected step `page_size` output neurons at a time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Paging {
    pub page_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub kernel: Kernel,
    pub input: TensorSpec,
    pub output: TensorSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paging: Option<Paging>,
}

impl Step {
    /// Scratch elements for the extracted view, if the kernel uses one.
    pub fn view_len(&self) -> usize {
        match &self.kernel {
            Kernel::Conv2d(c) | Kernel::DepthwiseConv2d(c) => c.geometry.view_len(),
            Kernel::AveragePool2d(p) => p.geometry.view_len(),
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompiledPlan {
    pub input: TensorSpec,
    pub output: TensorSpec,
    pub steps: Vec<Step>,
}

impl CompiledPlan {
    /// Copy of the plan with every FullyConnected step paged at `page_size`
    /// (clamped to the layer width).
    pub fn page_all_fully_connected(&self, page_size: usize) -> CompiledPlan {
        let mut plan = self.clone();
        for step in &mut plan.steps {
            if let Kernel::FullyConnected(fc) = &step.kernel {
                step.paging = Some(Paging {
                    page_size: page_size.clamp(1, fc.units),
                });
            }
        }
        plan
    }
}

fn to_i32(op: usize, term: &'static str, value: i128) -> Result<i32> {
    i32::try_from(value).map_err(|_| Error::Overflow { op, term, value })
}

fn fused(act: Activation, out: QuantParams) -> Fused {
    match act {
        Activation::None => Fused::None,
        Activation::Relu => Fused::relu(out),
        Activation::Relu6 => Fused::relu6(out),
    }
}

/// `z_y + (s_b / s_y)(b_j − z_b)` for each output channel.
fn bias_terms(bias: Option<&ConstTensor>, channels: usize, out: QuantParams) -> Vec<f64> {
    let zero = out.zero_point as f64;
    match bias {
        Some(b) => {
            let ratio = b.quant.scale / out.scale;
            b.data
                .iter()
                .map(|&v| zero + ratio * (v as i64 - b.quant.zero_point as i64) as f64)
                .collect()
        }
        None => vec![zero; channels],
    }
}

fn weights_i8(w: &ConstTensor) -> Vec<i8> {
    w.data.iter().map(|&v| v as i8).collect()
}

/// Worst-case |accumulator| for a dot product of `depth` i8 pairs, checked
/// against i32 together with the folded terms added to it.
fn check_accumulator(
    op: usize,
    depth: usize,
    weight_zero: i32,
    input_zero: i32,
    max_weight_sum: i64,
    zero_product: i32,
) -> Result<()> {
    let depth = depth as i128;
    let bound = depth * 128 * 128
        + (weight_zero as i128).abs() * depth * 128
        + (input_zero as i128).abs() * max_weight_sum as i128
        + (zero_product as i128).abs();
    to_i32(op, "accumulator bound", bound).map(|_| ())
}

fn fold_fc(k: usize, op: &ShapedOp) -> Result<FoldedFc> {
    let w = op.weights.as_ref().expect("FC has weights");
    let (rows, inner) = (op.input_shape[0], op.input_shape[1]);
    let units = w.shape[1];
    let (x, y) = (op.input_quant, op.output_quant);
    let mut col_sums = vec![0i64; units];
    for row in w.data.chunks_exact(units) {
        for (s, &v) in col_sums.iter_mut().zip(row) {
            *s += v as i64;
        }
    }
    let n_zx_zw = to_i32(
        k,
        "n*z_x*z_w",
        inner as i128 * x.zero_point as i128 * w.quant.zero_point as i128,
    )?;
    let max_sum = col_sums.iter().map(|s| s.abs()).max().unwrap_or(0);
    check_accumulator(k, inner, w.quant.zero_point, x.zero_point, max_sum, n_zx_zw)?;
    Ok(FoldedFc {
        rows,
        inner,
        units,
        weights: weights_i8(w),
        bias_term: bias_terms(op.bias.as_ref(), units, y),
        scale_ratio: x.scale * w.quant.scale / y.scale,
        weight_col_sums: col_sums.iter().map(|&s| s as i32).collect(),
        input_zero: x.zero_point,
        weight_zero: w.quant.zero_point,
        n_zx_zw,
        fused: fused(op.fused, y),
    })
}

fn geometry(op: &ShapedOp) -> ConvGeometry {
    ConvGeometry {
        in_h: op.input_shape[1],
        in_w: op.input_shape[2],
        in_c: op.input_shape[3],
        out_h: op.output_shape[1],
        out_w: op.output_shape[2],
        out_c: op.output_shape[3],
        window: op.window().expect("windowed op"),
    }
}

fn fold_conv(k: usize, op: &ShapedOp) -> Result<FoldedConv> {
    let f = op.weights.as_ref().expect("conv has filters");
    let g = geometry(op);
    let (x, y) = (op.input_quant, op.output_quant);
    let depthwise = op.kind == OpCode::DepthwiseConv2d;
    let sums: Vec<i64> = if depthwise {
        // [1, fh, fw, out_c]: channel k is every out_c-th element.
        (0..g.out_c)
            .map(|c| {
                f.data
                    .iter()
                    .skip(c)
                    .step_by(g.out_c)
                    .map(|&v| v as i64)
                    .sum()
            })
            .collect()
    } else {
        f.data
            .chunks_exact(g.view_len())
            .map(|filter| filter.iter().map(|&v| v as i64).sum())
            .collect()
    };
    let depth = if depthwise {
        g.window.area()
    } else {
        g.view_len()
    };
    let zero_product = to_i32(
        k,
        "m*n*c*z_x*z_f",
        depth as i128 * x.zero_point as i128 * f.quant.zero_point as i128,
    )?;
    let max_sum = sums.iter().map(|s| s.abs()).max().unwrap_or(0);
    check_accumulator(
        k,
        depth,
        f.quant.zero_point,
        x.zero_point,
        max_sum,
        zero_product,
    )?;
    Ok(FoldedConv {
        geometry: g,
        filters: weights_i8(f),
        bias_term: bias_terms(op.bias.as_ref(), g.out_c, y),
        scale_ratio: x.scale * f.quant.scale / y.scale,
        filter_sums: sums.iter().map(|&s| s as i32).collect(),
        input_zero: x.zero_point,
        filter_zero: f.quant.zero_point,
        window_zero_product: zero_product,
        fused: fused(op.fused, y),
    })
}

fn fold_pool(op: &ShapedOp) -> FoldedPool {
    let g = geometry(op);
    let (x, y) = (op.input_quant, op.output_quant);
    FoldedPool {
        geometry: g,
        scale_ratio: x.scale / y.scale,
        inverse_area: 1.0 / g.window.area() as f64,
        input_zero: x.zero_point,
        output_zero: y.zero_point,
        fused: fused(op.fused, y),
    }
}

/// Folds each operator's constant terms. Pure: the same graph always yields
/// the same plan. No step carries a paging directive yet.
pub fn fold_constants(g: &Graph) -> Result<CompiledPlan> {
    let mut steps = Vec::with_capacity(g.ops.len());
    for (k, op) in g.ops.iter().enumerate() {
        let kernel = match op.kind {
            OpCode::FullyConnected => Kernel::FullyConnected(fold_fc(k, op)?),
            OpCode::Conv2d => Kernel::Conv2d(fold_conv(k, op)?),
            OpCode::DepthwiseConv2d => Kernel::DepthwiseConv2d(fold_conv(k, op)?),
            OpCode::AveragePool2d => Kernel::AveragePool2d(fold_pool(op)),
            OpCode::Reshape => Kernel::Reshape,
            OpCode::Softmax => Kernel::Softmax(FoldedSoftmax {
                row_len: *op.input_shape.last().expect("non-empty shape"),
                input_scale: op.input_quant.scale,
                output: op.output_quant,
            }),
        };
        steps.push(Step {
            kernel,
            input: TensorSpec {
                shape: op.input_shape.clone(),
                quant: op.input_quant,
            },
            output: TensorSpec {
                shape: op.output_shape.clone(),
                quant: op.output_quant,
            },
            paging: None,
        });
    }
    Ok(CompiledPlan {
        input: TensorSpec {
            shape: g.input_shape.clone(),
            quant: g.input_quant,
        },
        output: TensorSpec {
            shape: g.output_shape.clone(),
            quant: g.output_quant,
        },
        steps,
    })
}

/// Runs one step into a freshly allocated output buffer.
pub fn run_step(index: usize, step: &Step, input: &[i8]) -> Result<Vec<i8>> {
    let mut out = vec![0i8; step.output.len()];
    let mut view = vec![0i8; step.view_len()];
    let res = match &step.kernel {
        Kernel::FullyConnected(fc) => match step.paging {
            Some(Paging { page_size }) => {
                let mut page = vec![0i8; fc.inner * page_size];
                kernels::fully_connected_paged(input, &fc.params(), page_size, &mut page, &mut out)
                    .map(|_| ())
            }
            None => kernels::fully_connected(input, &fc.params(), &mut out),
        },
        Kernel::Conv2d(c) => kernels::conv2d(input, &c.params(), &mut view, &mut out),
        Kernel::DepthwiseConv2d(c) => {
            kernels::depthwise_conv2d(input, &c.params(), &mut view, &mut out)
        }
        Kernel::AveragePool2d(p) => {
            kernels::average_pool2d(input, &p.params(), &mut view, &mut out)
        }
        Kernel::Reshape => kernels::reshape(input, &mut out),
        Kernel::Softmax(s) => kernels::softmax(input, &s.params(), &mut out),
    };
    res.map_err(|e| Error::kernel(index, e))?;
    Ok(out)
}

/// Runs the plan step by step. Each step takes the previous buffer and
/// hands back a new one; the consumed buffer is dropped immediately.
pub fn execute_plan(plan: &CompiledPlan, input: &[i8]) -> Result<Vec<i8>> {
    if input.len() != plan.input.len() {
        return Err(Error::Size {
            expected: plan.input.len(),
            actual: input.len(),
        });
    }
    let mut buffer = input.to_vec();
    for (k, step) in plan.steps.iter().enumerate() {
        buffer = run_step(k, step, &buffer)?;
    }
    Ok(buffer)
}

/// Like [`execute_plan`] but keeps every intermediate buffer: element 0 is
/// the input, element `k + 1` the output of step `k`.
pub fn execute_trace(plan: &CompiledPlan, input: &[i8]) -> Result<Vec<Vec<i8>>> {
    if input.len() != plan.input.len() {
        return Err(Error::Size {
            expected: plan.input.len(),
            actual: input.len(),
        });
    }
    let mut trace = vec![input.to_vec()];
    for (k, step) in plan.steps.iter().enumerate() {
        let next = run_step(k, step, trace.last().expect("non-empty trace"))?;
        trace.push(next);
    }
    Ok(trace)
}
