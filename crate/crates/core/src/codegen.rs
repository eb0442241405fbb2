//! Source emission: turns a [`CompiledPlan`] into a self-contained Rust
//! module exposing `predict`, with every constant embedded as a literal.
//!
//! The emitted unit depends only on the runtime kernel crate. It declares
//! no inner attributes, so it can be pulled in with `include!`.

use std::fmt::{Display, Write};

use sha2::{Digest, Sha256};
use tinyaot_runtime::kernels::ConvGeometry;
use tinyaot_runtime::{Fused, Padding, QuantParams};

use crate::compile::{CompiledPlan, Kernel, Paging, Step};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmitOptions {
    /// Path under which the emitted code refers to the runtime crate.
    pub runtime_crate: String,
}

impl Default for EmitOptions {
    fn default() -> Self {
        EmitOptions {
            runtime_crate: "tinyaot_runtime".into(),
        }
    }
}

/// Hex SHA-256 of the plan's JSON serialization.
pub fn plan_digest(plan: &CompiledPlan) -> String {
    let bytes = serde_json::to_vec(plan).expect("plan serializes");
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

struct Out(String);

impl Out {
    fn line(&mut self, indent: usize, text: impl Display) {
        let _ = writeln!(self.0, "{:indent$}{text}", "", indent = indent * 4);
    }
}

fn real(v: f64) -> String {
    format!("{v:?}")
}

/// `static NAME: [T; N] = [...];`, 16 values per line.
fn array<T: Copy>(out: &mut Out, name: &str, ty: &str, values: &[T], fmt: impl Fn(T) -> String) {
    out.line(
        0,
        format_args!("static {name}: [{ty}; {}] = [", values.len()),
    );
    for chunk in values.chunks(16) {
        let row: Vec<String> = chunk.iter().map(|&v| fmt(v)).collect();
        out.line(1, format_args!("{},", row.join(", ")));
    }
    out.line(0, "];");
}

fn quant(q: QuantParams) -> String {
    format!(
        "rt::QuantParams {{ scale: {}, zero_point: {} }}",
        real(q.scale),
        q.zero_point
    )
}

fn fused(f: Fused) -> String {
    match f {
        Fused::None => "rt::Fused::None".into(),
        Fused::Relu { zero } => format!("rt::Fused::Relu {{ zero: {zero} }}"),
        Fused::Relu6 { zero, ceiling } => {
            format!("rt::Fused::Relu6 {{ zero: {zero}, ceiling: {ceiling} }}")
        }
    }
}

fn geometry(out: &mut Out, g: &ConvGeometry) {
    let w = g.window;
    let padding = match w.padding {
        Padding::Same => "Same",
        Padding::Valid => "Valid",
    };
    out.line(1, "geometry: rt::kernels::ConvGeometry {");
    out.line(
        2,
        format_args!(
            "in_h: {}, in_w: {}, in_c: {}, out_h: {}, out_w: {}, out_c: {},",
            g.in_h, g.in_w, g.in_c, g.out_h, g.out_w, g.out_c
        ),
    );
    out.line(2, "window: rt::Window {");
    out.line(
        3,
        format_args!(
            "filter_h: {}, filter_w: {}, stride_h: {}, stride_w: {}, padding: rt::Padding::{padding},",
            w.filter_h, w.filter_w, w.stride_h, w.stride_w
        ),
    );
    out.line(2, "},");
    out.line(1, "},");
}

fn emit_constants(out: &mut Out, k: usize, step: &Step) {
    let name = format!("OP{k}");
    match &step.kernel {
        Kernel::FullyConnected(fc) => {
            array(out, &format!("{name}_WEIGHTS"), "i8", &fc.weights, |v| {
                v.to_string()
            });
            array(
                out,
                &format!("{name}_BIAS_TERM"),
                "f64",
                &fc.bias_term,
                real,
            );
            array(
                out,
                &format!("{name}_WEIGHT_COL_SUMS"),
                "i32",
                &fc.weight_col_sums,
                |v| v.to_string(),
            );
            out.line(0, format_args!("static {name}: rt::kernels::FullyConnected<'static> = rt::kernels::FullyConnected {{"));
            out.line(
                1,
                format_args!(
                    "rows: {}, inner: {}, units: {},",
                    fc.rows, fc.inner, fc.units
                ),
            );
            out.line(1, format_args!("weights: &{name}_WEIGHTS,"));
            out.line(1, format_args!("bias_term: &{name}_BIAS_TERM,"));
            out.line(1, format_args!("scale_ratio: {},", real(fc.scale_ratio)));
            out.line(1, format_args!("weight_col_sums: &{name}_WEIGHT_COL_SUMS,"));
            out.line(
                1,
                format_args!(
                    "input_zero: {}, weight_zero: {}, n_zx_zw: {},",
                    fc.input_zero, fc.weight_zero, fc.n_zx_zw
                ),
            );
            out.line(1, format_args!("fused: {},", fused(fc.fused)));
            out.line(0, "};");
        }
        Kernel::Conv2d(c) | Kernel::DepthwiseConv2d(c) => {
            array(out, &format!("{name}_FILTERS"), "i8", &c.filters, |v| {
                v.to_string()
            });
            array(out, &format!("{name}_BIAS_TERM"), "f64", &c.bias_term, real);
            array(
                out,
                &format!("{name}_FILTER_SUMS"),
                "i32",
                &c.filter_sums,
                |v| v.to_string(),
            );
            out.line(0, format_args!("static {name}: rt::kernels::Convolution<'static> = rt::kernels::Convolution {{"));
            geometry(out, &c.geometry);
            out.line(1, format_args!("filters: &{name}_FILTERS,"));
            out.line(1, format_args!("bias_term: &{name}_BIAS_TERM,"));
            out.line(1, format_args!("scale_ratio: {},", real(c.scale_ratio)));
            out.line(1, format_args!("filter_sums: &{name}_FILTER_SUMS,"));
            out.line(
                1,
                format_args!(
                    "input_zero: {}, filter_zero: {}, window_zero_product: {},",
                    c.input_zero, c.filter_zero, c.window_zero_product
                ),
            );
            out.line(1, format_args!("fused: {},", fused(c.fused)));
            out.line(0, "};");
        }
        Kernel::AveragePool2d(p) => {
            out.line(
                0,
                format_args!(
                    "static {name}: rt::kernels::AveragePool = rt::kernels::AveragePool {{"
                ),
            );
            geometry(out, &p.geometry);
            out.line(1, format_args!("scale_ratio: {},", real(p.scale_ratio)));
            out.line(1, format_args!("inverse_area: {},", real(p.inverse_area)));
            out.line(
                1,
                format_args!(
                    "input_zero: {}, output_zero: {},",
                    p.input_zero, p.output_zero
                ),
            );
            out.line(1, format_args!("fused: {},", fused(p.fused)));
            out.line(0, "};");
        }
        Kernel::Reshape => return,
        Kernel::Softmax(s) => {
            out.line(
                0,
                format_args!("static {name}: rt::kernels::Softmax = rt::kernels::Softmax {{"),
            );
            out.line(
                1,
                format_args!(
                    "row_len: {}, input_scale: {}, output: {},",
                    s.row_len,
                    real(s.input_scale),
                    quant(s.output)
                ),
            );
            out.line(0, "};");
        }
    }
    out.line(0, "");
}

/// One step as a block consuming `x`; the last step is the tail expression.
fn emit_call(out: &mut Out, k: usize, step: &Step, last: bool) -> Result<()> {
    let len = step.output.len();
    out.line(1, if last { "{" } else { "let x = {" });
    out.line(2, format_args!("let mut y = [0i8; {len}];"));
    let view = step.view_len();
    match &step.kernel {
        Kernel::FullyConnected(fc) => match step.paging {
            Some(Paging { page_size }) => {
                if page_size == 0 || page_size > fc.units {
                    return Err(Error::Emit(format!(
                        "step {k}: page size {page_size} outside [1, {}]",
                        fc.units
                    )));
                }
                out.line(
                    2,
                    format_args!("let mut page = [0i8; {}];", fc.inner * page_size),
                );
                out.line(
                    2,
                    format_args!(
                        "rt::kernels::fully_connected_paged(&x, &OP{k}, {page_size}, &mut page, &mut y).unwrap();"
                    ),
                );
            }
            None => out.line(
                2,
                format_args!("rt::kernels::fully_connected(&x, &OP{k}, &mut y).unwrap();"),
            ),
        },
        Kernel::Conv2d(_) | Kernel::DepthwiseConv2d(_) | Kernel::AveragePool2d(_) => {
            let f = match step.kernel {
                Kernel::Conv2d(_) => "conv2d",
                Kernel::DepthwiseConv2d(_) => "depthwise_conv2d",
                _ => "average_pool2d",
            };
            out.line(2, format_args!("let mut view = [0i8; {view}];"));
            out.line(
                2,
                format_args!("rt::kernels::{f}(&x, &OP{k}, &mut view, &mut y).unwrap();"),
            );
        }
        Kernel::Reshape => out.line(2, "rt::kernels::reshape(&x, &mut y).unwrap();"),
        Kernel::Softmax(_) => out.line(
            2,
            format_args!("rt::kernels::softmax(&x, &OP{k}, &mut y).unwrap();"),
        ),
    }
    out.line(2, "y");
    out.line(1, if last { "}" } else { "};" });
    Ok(())
}

fn shape(s: &[usize]) -> String {
    let dims: Vec<String> = s.iter().map(|d| d.to_string()).collect();
    format!("[usize; {}] = [{}]", s.len(), dims.join(", "))
}

/// Emits the source unit for `plan`. The same plan always yields the same bytes.
pub fn emit_source(plan: &CompiledPlan, opts: &EmitOptions) -> Result<String> {
    let mut out = Out(String::new());
    let kinds: Vec<&str> = plan
        .steps
        .iter()
        .map(|s| s.kernel.op_code().name())
        .collect();
    out.line(0, "// Generated by tinyaot. Do not edit.");
    out.line(0, format_args!("// plan sha256: {}", plan_digest(plan)));
    out.line(0, format_args!("// steps: {}", kinds.join(" -> ")));
    out.line(0, "");
    out.line(0, format_args!("use {} as rt;", opts.runtime_crate));
    out.line(0, "");
    out.line(
        0,
        format_args!("pub const INPUT_LEN: usize = {};", plan.input.len()),
    );
    out.line(
        0,
        format_args!("pub const OUTPUT_LEN: usize = {};", plan.output.len()),
    );
    out.line(
        0,
        format_args!("pub const INPUT_SHAPE: {};", shape(&plan.input.shape)),
    );
    out.line(
        0,
        format_args!("pub const OUTPUT_SHAPE: {};", shape(&plan.output.shape)),
    );
    out.line(
        0,
        format_args!(
            "pub const INPUT_QUANT: rt::QuantParams = {};",
            quant(plan.input.quant)
        ),
    );
    out.line(
        0,
        format_args!(
            "pub const OUTPUT_QUANT: rt::QuantParams = {};",
            quant(plan.output.quant)
        ),
    );
    out.line(0, "");
    for (k, step) in plan.steps.iter().enumerate() {
        emit_constants(&mut out, k, step);
    }
    out.line(
        0,
        "pub fn predict(input: [i8; INPUT_LEN]) -> [i8; OUTPUT_LEN] {",
    );
    if plan.steps.is_empty() {
        out.line(1, "input");
    } else {
        out.line(1, "let x = input;");
    }
    for (k, step) in plan.steps.iter().enumerate() {
        emit_call(&mut out, k, step, k + 1 == plan.steps.len())?;
    }
    out.line(0, "}");
    Ok(out.0)
}

/// Number of kernel invocations in emitted source.
pub fn count_kernel_calls(source: &str) -> usize {
    const CALLS: [&str; 7] = [
        "fully_connected(",
        "fully_connected_paged(",
        "conv2d(",
        "depthwise_conv2d(",
        "average_pool2d(",
        "reshape(",
        "softmax(",
    ];
    source
        .lines()
        .filter(|l| {
            let l = l.trim_start();
            CALLS
                .iter()
                .any(|c| l.starts_with(&format!("rt::kernels::{c}")))
        })
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compile::fold_constants;
    use crate::graph::build_graph;
    use crate::synth;

    fn plan(m: &crate::model::ModelFile) -> CompiledPlan {
        fold_constants(&build_graph(m).unwrap()).unwrap()
    }

    #[test]
    fn sine_has_three_calls_and_no_operator_loop() {
        let src = emit_source(&plan(&synth::sine_predictor(0)), &EmitOptions::default()).unwrap();
        assert_eq!(count_kernel_calls(&src), 3);
        assert_eq!(src.matches("rt::kernels::fully_connected(").count(), 3);
        assert!(!src.contains("for "));
        assert!(!src.contains("while "));
        assert!(src.contains("pub fn predict(input: [i8; INPUT_LEN]) -> [i8; OUTPUT_LEN]"));
    }

    #[test]
    fn emission_is_deterministic() {
        let p = plan(&synth::mobilenet_mini(1));
        let a = emit_source(&p, &EmitOptions::default()).unwrap();
        let b = emit_source(&p, &EmitOptions::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(count_kernel_calls(&a), p.steps.len());
    }

    #[test]
    fn paged_call_names_page_size() {
        let p = plan(&synth::dense32(0)).page_all_fully_connected(4);
        let src = emit_source(&p, &EmitOptions::default()).unwrap();
        assert!(src.contains("rt::kernels::fully_connected_paged(&x, &OP0, 4, &mut page, &mut y)"));
        assert!(src.contains("let mut page = [0i8; 128];"));
    }

    #[test]
    fn invalid_paging_is_an_emit_error() {
        let mut p = plan(&synth::dense32(0));
        p.steps[0].paging = Some(Paging { page_size: 33 });
        assert!(matches!(
            emit_source(&p, &EmitOptions::default()),
            Err(Error::Emit(_))
        ));
    }

    #[test]
    fn real_literals_round_trip() {
        for v in [0.1, 1.0 / 3.0, 1e-9, 123456.789, -0.0, 5e300] {
            assert_eq!(real(v).parse::<f64>().unwrap().to_bits(), v.to_bits());
        }
    }

    #[test]
    fn runtime_path_is_configurable() {
        let p = plan(&synth::identity_reshape());
        let src = emit_source(
            &p,
            &EmitOptions {
                runtime_crate: "crate::rt".into(),
            },
        )
        .unwrap();
        assert!(src.contains("use crate::rt as rt;"));
        assert!(!src.contains("#!["));
    }
}
