//! Typed internal representation: a [`ModelFile`] with every shape inferred
//! and every constant resolved.

use tinyaot_runtime::view::output_extent;
use tinyaot_runtime::{Padding, QuantParams, Window};

use crate::error::{Error, Result};
use crate::model::{validate_model, Activation, DType, ModelFile, OpCode, PaddingKind, Severity};

/// A resolved constant tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub quant: QuantParams,
    pub data: Vec<i32>,
}

/// Validated attributes of one operator.
#[derive(Debug, Clone, PartialEq)]
pub enum Attrs {
    FullyConnected,
    /// Conv2D / DepthwiseConv2D; the filter extent comes from the filter tensor.
    Conv {
        padding: Padding,
        stride_h: usize,
        stride_w: usize,
    },
    Pool(Window),
    Reshape {
        new_shape: Vec<usize>,
    },
    Softmax,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapedOp {
    pub kind: OpCode,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub input_quant: QuantParams,
    pub output_quant: QuantParams,
    /// Weights (FC) or filters (conv, depthwise).
    pub weights: Option<ConstTensor>,
    pub bias: Option<ConstTensor>,
    pub attrs: Attrs,
    pub fused: Activation,
}

impl ShapedOp {
    /// Sliding window of a conv, depthwise or pooling op.
    pub fn window(&self) -> Option<Window> {
        match &self.attrs {
            Attrs::Pool(w) => Some(*w),
            Attrs::Conv {
                padding,
                stride_h,
                stride_w,
            } => {
                let f = &self.weights.as_ref()?.shape;
                Some(Window {
                    filter_h: f[1],
                    filter_w: f[2],
                    stride_h: *stride_h,
                    stride_w: *stride_w,
                    padding: *padding,
                })
            }
            _ => None,
        }
    }

    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.output_shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    pub ops: Vec<ShapedOp>,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub input_quant: QuantParams,
    pub output_quant: QuantParams,
}

impl Graph {
    pub fn input_len(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_len(&self) -> usize {
        self.output_shape.iter().product()
    }
}

fn padding(kind: PaddingKind) -> Padding {
    match kind {
        PaddingKind::Same => Padding::Same,
        PaddingKind::Valid => Padding::Valid,
    }
}

/// Output shape of one operator.
///
/// `constants` holds the weight/filter shape first and the bias shape
/// second, when present.
pub fn infer_shapes(
    kind: OpCode,
    input_shape: &[usize],
    attrs: &Attrs,
    constants: &[&[usize]],
) -> Result<Vec<usize>> {
    let weights = constants.first().copied();
    let bias = constants.get(1).copied();
    let out = match (kind, attrs) {
        (OpCode::FullyConnected, Attrs::FullyConnected) => {
            let w = weights.ok_or_else(|| Error::shape(None, "FULLY_CONNECTED needs weights"))?;
            let [m, n] = input_shape else {
                return Err(Error::shape(
                    None,
                    format!("FULLY_CONNECTED input must be [rows, features], got {input_shape:?}"),
                ));
            };
            let [wn, p] = w else {
                return Err(Error::shape(
                    None,
                    format!("weights must be [n, p], got {w:?}"),
                ));
            };
            if wn != n {
                return Err(Error::shape(
                    None,
                    format!("input has {n} features but weights expect {wn}"),
                ));
            }
            vec![*m, *p]
        }
        (
            OpCode::Conv2d | OpCode::DepthwiseConv2d,
            Attrs::Conv {
                padding,
                stride_h,
                stride_w,
            },
        ) => {
            let (h, w, c) = spatial_input(kind, input_shape)?;
            let f = weights.ok_or_else(|| Error::shape(None, format!("{kind} needs filters")))?;
            let [fo, fh, fw, fc] = f else {
                return Err(Error::shape(
                    None,
                    format!("filters must be rank 4, got {f:?}"),
                ));
            };
            let out_c = if kind == OpCode::Conv2d {
                if *fc != c {
                    return Err(Error::shape(
                        None,
                        format!("filters have {fc} channels, input has {c}"),
                    ));
                }
                *fo
            } else {
                if *fo != 1 {
                    return Err(Error::shape(
                        None,
                        format!("depthwise filters must be [1, h, w, c], got {f:?}"),
                    ));
                }
                if *fc % c != 0 {
                    return Err(Error::shape(
                        None,
                        format!("depthwise filter channels {fc} are not a multiple of input channels {c}"),
                    ));
                }
                *fc
            };
            let window = Window {
                filter_h: *fh,
                filter_w: *fw,
                stride_h: *stride_h,
                stride_w: *stride_w,
                padding: *padding,
            };
            let (oh, ow) = window_output(&window, h, w)?;
            vec![1, oh, ow, out_c]
        }
        (OpCode::AveragePool2d, Attrs::Pool(window)) => {
            let (h, w, c) = spatial_input(kind, input_shape)?;
            let (oh, ow) = window_output(window, h, w)?;
            vec![1, oh, ow, c]
        }
        (OpCode::Reshape, Attrs::Reshape { new_shape }) => {
            let have: usize = input_shape.iter().product();
            let want: usize = new_shape.iter().product();
            if have != want {
                return Err(Error::shape(
                    None,
                    format!(
                        "cannot reshape {input_shape:?} ({have} elements) to {new_shape:?} ({want} elements)"
                    ),
                ));
            }
            new_shape.clone()
        }
        (OpCode::Softmax, Attrs::Softmax) => input_shape.to_vec(),
        (kind, attrs) => {
            return Err(Error::shape(
                None,
                format!("{kind} cannot take attributes {attrs:?}"),
            ))
        }
    };
    if let (Some(b), true) = (bias, kind.has_weights()) {
        let channels = *out.last().expect("non-empty output shape");
        if b.iter().product::<usize>() != channels {
            return Err(Error::shape(
                None,
                format!("bias shape {b:?} does not match {channels} output channels"),
            ));
        }
    }
    Ok(out)
}

fn spatial_input(kind: OpCode, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        [1, h, w, c] => Ok((*h, *w, *c)),
        _ => Err(Error::shape(
            None,
            format!("{kind} input must be [1, height, width, channels], got {shape:?}"),
        )),
    }
}

fn window_output(window: &Window, h: usize, w: usize) -> Result<(usize, usize)> {
    let oh = output_extent(h, window.filter_h, window.stride_h, window.padding);
    let ow = output_extent(w, window.filter_w, window.stride_w, window.padding);
    match (oh, ow) {
        (Some(oh), Some(ow)) => Ok((oh, ow)),
        _ => Err(Error::shape(
            None,
            format!(
                "{}x{} window does not fit a {h}x{w} input with VALID padding",
                window.filter_h, window.filter_w
            ),
        )),
    }
}

fn quant(t: &crate::model::Tensor) -> QuantParams {
    QuantParams::new(t.scale, t.zero_point as i32)
}

fn resolve(t: &crate::model::Tensor) -> ConstTensor {
    ConstTensor {
        name: t.name.clone(),
        shape: t.shape.clone(),
        dtype: t.dtype,
        quant: quant(t),
        data: t
            .data
            .as_ref()
            .map(|d| d.iter().map(|&v| v as i32).collect())
            .unwrap_or_default(),
    }
}

fn usize_attr(v: Option<i64>) -> usize {
    v.map(|v| v as usize).unwrap_or(1)
}

/// Builds the typed graph. The model is validated first; any error
/// diagnostic aborts the build.
pub fn build_graph(m: &ModelFile) -> Result<Graph> {
    if let Some(d) = validate_model(m)
        .into_iter()
        .find(|d| d.severity == Severity::Error)
    {
        return Err(Error::Format {
            path: d.json_path(),
            message: d.message,
        });
    }

    let mut ops = Vec::with_capacity(m.operators.len());
    for (k, node) in m.operators.iter().enumerate() {
        let input = &m.tensors[node.inputs[0]];
        let output = &m.tensors[node.output];
        let weights = node.inputs.get(1).map(|&i| resolve(&m.tensors[i]));
        let bias = node.inputs.get(2).map(|&i| resolve(&m.tensors[i]));
        let o = &node.options;
        let attrs = match node.op {
            OpCode::FullyConnected => Attrs::FullyConnected,
            OpCode::Conv2d | OpCode::DepthwiseConv2d => Attrs::Conv {
                padding: padding(o.padding.expect("validated")),
                stride_h: usize_attr(o.stride_h),
                stride_w: usize_attr(o.stride_w),
            },
            OpCode::AveragePool2d => Attrs::Pool(Window {
                filter_h: usize_attr(o.filter_h),
                filter_w: usize_attr(o.filter_w),
                stride_h: usize_attr(o.stride_h),
                stride_w: usize_attr(o.stride_w),
                padding: padding(o.padding.expect("validated")),
            }),
            OpCode::Reshape => Attrs::Reshape {
                new_shape: o
                    .new_shape
                    .as_ref()
                    .expect("validated")
                    .iter()
                    .map(|&d| d as usize)
                    .collect(),
            },
            OpCode::Softmax => Attrs::Softmax,
        };
        let constants: Vec<&[usize]> = weights
            .iter()
            .chain(bias.iter())
            .map(|t| t.shape.as_slice())
            .collect();
        let out_shape =
            infer_shapes(node.op, &input.shape, &attrs, &constants).map_err(|e| match e {
                Error::Shape { message, .. } => Error::shape(k, message),
                other => other,
            })?;
        if out_shape != output.shape {
            return Err(Error::shape(
                k,
                format!(
                    "output tensor '{}' declares shape {:?}, operator produces {out_shape:?}",
                    output.name, output.shape
                ),
            ));
        }
        if node.op == OpCode::Reshape {
            let (qi, qo) = (quant(input), quant(output));
            if qi != qo {
                return Err(Error::Unsupported {
                    op: k,
                    message: "RESHAPE must keep its input quantization".into(),
                });
            }
        }
        ops.push(ShapedOp {
            kind: node.op,
            input_shape: input.shape.clone(),
            output_shape: out_shape,
            input_quant: quant(input),
            output_quant: quant(output),
            weights,
            bias,
            attrs,
            fused: o.activation(),
        });
    }

    let input = &m.tensors[m.model_input];
    let output = &m.tensors[m.model_output];
    Ok(Graph {
        ops,
        input_shape: input.shape.clone(),
        output_shape: output.shape.clone(),
        input_quant: quant(input),
        output_quant: quant(output),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;

    fn conv(padding: Padding, stride: usize) -> Attrs {
        Attrs::Conv {
            padding,
            stride_h: stride,
            stride_w: stride,
        }
    }

    #[test]
    fn fully_connected_shape() {
        let out = infer_shapes(
            OpCode::FullyConnected,
            &[1, 16],
            &Attrs::FullyConnected,
            &[&[16, 16], &[16]],
        );
        assert_eq!(out.unwrap(), vec![1, 16]);
        let bad = infer_shapes(
            OpCode::FullyConnected,
            &[1, 15],
            &Attrs::FullyConnected,
            &[&[16, 16]],
        );
        assert!(matches!(bad, Err(Error::Shape { .. })));
    }

    #[test]
    fn conv_same_stride_two() {
        let out = infer_shapes(
            OpCode::Conv2d,
            &[1, 96, 96, 1],
            &conv(Padding::Same, 2),
            &[&[8, 3, 3, 1]],
        );
        assert_eq!(out.unwrap(), vec![1, 48, 48, 8]);
    }

    #[test]
    fn conv_extents_match_window_enumeration() {
        // Count output positions by enumerating window origins directly.
        for dim in 1..=9usize {
            for filter in 1..=4usize {
                for stride in 1..=3usize {
                    let valid = (0..dim)
                        .step_by(stride)
                        .filter(|&o| o + filter <= dim)
                        .count();
                    let same = (0..dim).step_by(stride).count();
                    let attrs_v = conv(Padding::Valid, stride);
                    let got = infer_shapes(
                        OpCode::Conv2d,
                        &[1, dim, 1, 1],
                        &attrs_v,
                        &[&[1, filter, 1, 1]],
                    );
                    if valid == 0 {
                        assert!(got.is_err());
                    } else {
                        assert_eq!(
                            got.unwrap()[1],
                            valid,
                            "valid dim={dim} f={filter} s={stride}"
                        );
                    }
                    let got = infer_shapes(
                        OpCode::Conv2d,
                        &[1, dim, 1, 1],
                        &conv(Padding::Same, stride),
                        &[&[1, filter, 1, 1]],
                    );
                    assert_eq!(
                        got.unwrap()[1],
                        same,
                        "same dim={dim} f={filter} s={stride}"
                    );
                }
            }
        }
    }

    #[test]
    fn depthwise_keeps_channels() {
        let out = infer_shapes(
            OpCode::DepthwiseConv2d,
            &[1, 4, 4, 3],
            &conv(Padding::Same, 1),
            &[&[1, 3, 3, 3]],
        );
        assert_eq!(out.unwrap(), vec![1, 4, 4, 3]);
        let out = infer_shapes(
            OpCode::DepthwiseConv2d,
            &[1, 49, 40, 1],
            &conv(Padding::Same, 2),
            &[&[1, 10, 8, 8]],
        );
        assert_eq!(out.unwrap(), vec![1, 25, 20, 8]);
        let bad = infer_shapes(
            OpCode::DepthwiseConv2d,
            &[1, 4, 4, 3],
            &conv(Padding::Same, 1),
            &[&[1, 3, 3, 4]],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn reshape_conserves_elements() {
        let ok = infer_shapes(
            OpCode::Reshape,
            &[1, 49, 40, 1],
            &Attrs::Reshape {
                new_shape: vec![1, 1960],
            },
            &[],
        );
        assert_eq!(ok.unwrap(), vec![1, 1960]);
        let bad = infer_shapes(
            OpCode::Reshape,
            &[1, 49, 40, 1],
            &Attrs::Reshape {
                new_shape: vec![1, 1961],
            },
            &[],
        );
        assert!(matches!(bad, Err(Error::Shape { .. })));
    }

    #[test]
    fn stride_one_same_preserves_spatial_dims() {
        for h in 1..8 {
            for f in 1..5 {
                let w = Window {
                    filter_h: f,
                    filter_w: f,
                    stride_h: 1,
                    stride_w: 1,
                    padding: Padding::Same,
                };
                let out = infer_shapes(
                    OpCode::AveragePool2d,
                    &[1, h, h + 1, 2],
                    &Attrs::Pool(w),
                    &[],
                )
                .unwrap();
                assert_eq!(out, vec![1, h, h + 1, 2]);
            }
        }
    }

    #[test]
    fn mismatched_declared_shape_names_operator() {
        let mut m = synth::sine_predictor(1);
        let out = m.operators[1].output;
        m.tensors[out].shape = vec![1, 15];
        match build_graph(&m) {
            Err(Error::Shape { op: Some(1), .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn build_is_deterministic() {
        let m = synth::mobilenet_mini(3);
        assert_eq!(build_graph(&m).unwrap(), build_graph(&m).unwrap());
    }

    #[test]
    fn consecutive_ops_agree_on_edges() {
        for m in [
            synth::sine_predictor(0),
            synth::tiny_conv(0),
            synth::mobilenet_mini(0),
        ] {
            let g = build_graph(&m).unwrap();
            for pair in g.ops.windows(2) {
                assert_eq!(pair[0].output_shape, pair[1].input_shape);
                assert_eq!(pair[0].output_quant, pair[1].input_quant);
            }
        }
    }
}
