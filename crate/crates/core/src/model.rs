//! The MFJ model container: a JSON rendering of a quantized operator chain.
//!
//! ```json
//! {"version":1,
//!  "tensors":[{"name":"x","shape":[1,16],"dtype":"i8","scale":0.05,"zero_point":-3}, ...],
//!  "operators":[{"op":"FULLY_CONNECTED","inputs":[0,1,2],"output":3,
//!                "options":{"fused_activation":"RELU"}}, ...],
//!  "model_input":0,"model_output":3}
//! ```
//!
//! Constant tensors (weights, filters, biases) carry a flat `data` array.
//! The canonical encoding is compact JSON with sorted keys and shortest
//! round-trip floats, followed by a newline.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DType {
    #[serde(rename = "i8")]
    I8,
    #[serde(rename = "i32")]
    I32,
}

impl DType {
    pub fn range(self) -> (i64, i64) {
        match self {
            DType::I8 => (i8::MIN as i64, i8::MAX as i64),
            DType::I32 => (i32::MIN as i64, i32::MAX as i64),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::I8 => "i8",
            DType::I32 => "i32",
        }
    }

    pub fn size_bytes(self) -> usize {
        match self {
            DType::I8 => 1,
            DType::I32 => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: DType,
    pub scale: f64,
    pub zero_point: i64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<Vec<i64>>,
}

impl Tensor {
    pub fn element_count(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_constant(&self) -> bool {
        self.data.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpCode {
    #[serde(rename = "FULLY_CONNECTED")]
    FullyConnected,
    #[serde(rename = "CONV_2D")]
    Conv2d,
    #[serde(rename = "DEPTHWISE_CONV_2D")]
    DepthwiseConv2d,
    #[serde(rename = "AVERAGE_POOL_2D")]
    AveragePool2d,
    #[serde(rename = "RESHAPE")]
    Reshape,
    #[serde(rename = "SOFTMAX")]
    Softmax,
}

impl OpCode {
    pub const ALL: [OpCode; 6] = [
        OpCode::FullyConnected,
        OpCode::Conv2d,
        OpCode::DepthwiseConv2d,
        OpCode::AveragePool2d,
        OpCode::Reshape,
        OpCode::Softmax,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpCode::FullyConnected => "FULLY_CONNECTED",
            OpCode::Conv2d => "CONV_2D",
            OpCode::DepthwiseConv2d => "DEPTHWISE_CONV_2D",
            OpCode::AveragePool2d => "AVERAGE_POOL_2D",
            OpCode::Reshape => "RESHAPE",
            OpCode::Softmax => "SOFTMAX",
        }
    }

    /// Operators whose inputs after the first are weights and an optional bias.
    pub fn has_weights(self) -> bool {
        matches!(
            self,
            OpCode::FullyConnected | OpCode::Conv2d | OpCode::DepthwiseConv2d
        )
    }
}

impl fmt::Display for OpCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Activation {
    #[default]
    #[serde(rename = "NONE")]
    None,
    #[serde(rename = "RELU")]
    Relu,
    #[serde(rename = "RELU6")]
    Relu6,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PaddingKind {
    #[serde(rename = "SAME")]
    Same,
    #[serde(rename = "VALID")]
    Valid,
}

/// Operator attributes. Which keys are required or allowed depends on the op.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Options {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fused_activation: Option<Activation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<PaddingKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride_h: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride_w: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_h: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter_w: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_shape: Option<Vec<i64>>,
}

impl Options {
    pub fn activation(&self) -> Activation {
        self.fused_activation.unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpNode {
    pub op: OpCode,
    pub inputs: Vec<usize>,
    pub output: usize,
    #[serde(default)]
    pub options: Options,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub version: u32,
    pub tensors: Vec<Tensor>,
    pub operators: Vec<OpNode>,
    pub model_input: usize,
    pub model_output: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Model,
    Tensor(usize),
    Operator(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub location: Location,
    pub message: String,
}

impl Diagnostic {
    fn error(location: Location, message: impl Into<String>) -> Self {
        Diagnostic {
            severity: Severity::Error,
            location,
            message: message.into(),
        }
    }

    /// JSON path of the offending element.
    pub fn json_path(&self) -> String {
        match self.location {
            Location::Model => "$".to_string(),
            Location::Tensor(i) => format!("tensors[{i}]"),
            Location::Operator(i) => format!("operators[{i}]"),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{level}: {}: {}", self.json_path(), self.message)
    }
}

/// Reads and validates an MFJ file.
pub fn load_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_model(&text)
}

/// Parses and validates MFJ text.
pub fn parse_model(text: &str) -> Result<ModelFile> {
    let mut de = serde_json::Deserializer::from_str(text);
    let model: ModelFile = serde_path_to_error::deserialize(&mut de).map_err(|e| {
        let path = e.path().to_string();
        Error::Format {
            path,
            message: e.into_inner().to_string(),
        }
    })?;
    de.end().map_err(|e| Error::Format {
        path: "$".into(),
        message: e.to_string(),
    })?;
    check_ranges(&model)?;
    let errors: Vec<_> = validate_model(&model)
        .into_iter()
        .filter(|d| d.severity == Severity::Error)
        .collect();
    if let Some(first) = errors.first() {
        let message = errors
            .iter()
            .map(|d| d.message.as_str())
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::Format {
            path: first.json_path(),
            message,
        });
    }
    Ok(model)
}

fn check_ranges(model: &ModelFile) -> Result<()> {
    for (i, t) in model.tensors.iter().enumerate() {
        let (lo, hi) = t.dtype.range();
        if let Some(&value) = t.data.iter().flatten().find(|&&v| v < lo || v > hi) {
            return Err(Error::Range {
                tensor: i,
                name: t.name.clone(),
                value,
                dtype: t.dtype.name(),
            });
        }
    }
    Ok(())
}

/// Canonical MFJ text: compact, sorted keys, trailing newline.
pub fn to_canonical_json(model: &ModelFile) -> String {
    // serde_json's Map is ordered by key unless `preserve_order` is enabled.
    let value = serde_json::to_value(model).expect("model serializes to JSON");
    let mut text = serde_json::to_string(&value).expect("JSON value serializes");
    text.push('\n');
    text
}

pub fn save_model(model: &ModelFile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_canonical_json(model)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Attr {
    FusedActivation,
    Padding,
    StrideH,
    StrideW,
    FilterH,
    FilterW,
    NewShape,
}

impl Attr {
    const ALL: [Attr; 7] = [
        Attr::FusedActivation,
        Attr::Padding,
        Attr::StrideH,
        Attr::StrideW,
        Attr::FilterH,
        Attr::FilterW,
        Attr::NewShape,
    ];

    fn key(self) -> &'static str {
        match self {
            Attr::FusedActivation => "fused_activation",
            Attr::Padding => "padding",
            Attr::StrideH => "stride_h",
            Attr::StrideW => "stride_w",
            Attr::FilterH => "filter_h",
            Attr::FilterW => "filter_w",
            Attr::NewShape => "new_shape",
        }
    }

    fn present(self, o: &Options) -> bool {
        match self {
            Attr::FusedActivation => o.fused_activation.is_some(),
            Attr::Padding => o.padding.is_some(),
            Attr::StrideH => o.stride_h.is_some(),
            Attr::StrideW => o.stride_w.is_some(),
            Attr::FilterH => o.filter_h.is_some(),
            Attr::FilterW => o.filter_w.is_some(),
            Attr::NewShape => o.new_shape.is_some(),
        }
    }
}

/// (required, optional) attribute sets per operator.
fn attribute_rules(op: OpCode) -> (&'static [Attr], &'static [Attr]) {
    use Attr::*;
    match op {
        OpCode::FullyConnected => (&[], &[FusedActivation]),
        OpCode::Conv2d | OpCode::DepthwiseConv2d => {
            (&[Padding, StrideH, StrideW], &[FusedActivation])
        }
        OpCode::AveragePool2d => (
            &[Padding, StrideH, StrideW, FilterH, FilterW],
            &[FusedActivation],
        ),
        OpCode::Reshape => (&[NewShape], &[]),
        OpCode::Softmax => (&[], &[]),
    }
}

/// Checks every structural invariant of a model. Returns one diagnostic per
/// violation; an empty list means the model is well formed.
pub fn validate_model(m: &ModelFile) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    let n_tensors = m.tensors.len();

    if m.version != FORMAT_VERSION {
        out.push(Diagnostic::error(
            Location::Model,
            format!(
                "unsupported version {}, expected {FORMAT_VERSION}",
                m.version
            ),
        ));
    }

    for (i, t) in m.tensors.iter().enumerate() {
        validate_tensor(i, t, &mut out);
    }

    // Which tensors may legally be i32: biases only.
    let mut bias_slot = vec![false; n_tensors];
    let mut used = vec![false; n_tensors];
    for (k, node) in m.operators.iter().enumerate() {
        validate_op(m, k, node, &mut out);
        for (slot, &t) in node.inputs.iter().enumerate() {
            if t < n_tensors {
                used[t] = true;
                if slot == 2 && node.op.has_weights() {
                    bias_slot[t] = true;
                }
            }
        }
        if node.output < n_tensors {
            used[node.output] = true;
        }
    }
    for (i, t) in m.tensors.iter().enumerate() {
        if t.dtype == DType::I32 && !bias_slot[i] {
            out.push(Diagnostic::error(
                Location::Tensor(i),
                format!("tensor '{}' is i32 but is not used as a bias", t.name),
            ));
        }
        if !used[i] && i != m.model_input && i != m.model_output {
            out.push(Diagnostic {
                severity: Severity::Warning,
                location: Location::Tensor(i),
                message: format!("tensor '{}' is never used", t.name),
            });
        }
    }

    validate_chain(m, &mut out);
    out
}

fn validate_tensor(i: usize, t: &Tensor, out: &mut Vec<Diagnostic>) {
    let loc = Location::Tensor(i);
    if t.shape.is_empty() || t.shape.contains(&0) {
        out.push(Diagnostic::error(
            loc,
            format!(
                "tensor '{}' has shape {:?}; dims must be positive",
                t.name, t.shape
            ),
        ));
    }
    if !(t.scale.is_finite() && t.scale > 0.0) {
        out.push(Diagnostic::error(
            loc,
            format!(
                "tensor '{}' has scale {}; must be positive and finite",
                t.name, t.scale
            ),
        ));
    }
    let (lo, hi) = t.dtype.range();
    if t.zero_point < lo || t.zero_point > hi {
        out.push(Diagnostic::error(
            loc,
            format!(
                "tensor '{}' zero point {} outside the {} range",
                t.name,
                t.zero_point,
                t.dtype.name()
            ),
        ));
    }
    if let Some(data) = &t.data {
        let expected = t.element_count();
        if data.len() != expected {
            out.push(Diagnostic::error(
                loc,
                format!(
                    "tensor '{}' data holds {} elements, shape {:?} needs {expected}",
                    t.name,
                    data.len(),
                    t.shape
                ),
            ));
        }
        if let Some(v) = data.iter().find(|&&v| v < lo || v > hi) {
            out.push(Diagnostic::error(
                loc,
                format!(
                    "tensor '{}' value {v} outside the {} range",
                    t.name,
                    t.dtype.name()
                ),
            ));
        }
    }
}

fn validate_op(m: &ModelFile, k: usize, node: &OpNode, out: &mut Vec<Diagnostic>) {
    let loc = Location::Operator(k);
    let n_tensors = m.tensors.len();
    let mut err = |msg: String| out.push(Diagnostic::error(loc, msg));

    let arity = if node.op.has_weights() { 2..=3 } else { 1..=1 };
    if !arity.contains(&node.inputs.len()) {
        err(format!(
            "{} takes {} inputs, got {}",
            node.op,
            if node.op.has_weights() { "2 or 3" } else { "1" },
            node.inputs.len()
        ));
    }
    let mut indices_ok = true;
    for &t in node.inputs.iter().chain(std::iter::once(&node.output)) {
        if t >= n_tensors {
            err(format!(
                "tensor index {t} out of range (model has {n_tensors})"
            ));
            indices_ok = false;
        }
    }
    if indices_ok {
        for (slot, &t) in node.inputs.iter().enumerate() {
            let tensor = &m.tensors[t];
            if slot == 0 && tensor.is_constant() {
                err(format!(
                    "activation input '{}' must not be constant",
                    tensor.name
                ));
            }
            if slot == 0 && tensor.dtype != DType::I8 {
                err(format!("activation input '{}' must be i8", tensor.name));
            }
            if slot > 0 && !tensor.is_constant() {
                err(format!(
                    "input {slot} ('{}') must be a constant tensor",
                    tensor.name
                ));
            }
            if slot == 1 && tensor.dtype != DType::I8 {
                err(format!("weights '{}' must be i8", tensor.name));
            }
        }
        let output = &m.tensors[node.output];
        if output.is_constant() {
            err(format!("output '{}' must not be constant", output.name));
        }
        if output.dtype != DType::I8 {
            err(format!("output '{}' must be i8", output.name));
        }
    }

    let (required, optional) = attribute_rules(node.op);
    for attr in Attr::ALL {
        let present = attr.present(&node.options);
        if required.contains(&attr) && !present {
            err(format!("{} requires option {}", node.op, attr.key()));
        } else if present && !required.contains(&attr) && !optional.contains(&attr) {
            // An explicit NONE is tolerated everywhere.
            if attr == Attr::FusedActivation && node.options.activation() == Activation::None {
                continue;
            }
            err(format!("option {} is not valid on {}", attr.key(), node.op));
        }
    }
    let o = &node.options;
    for (key, v) in [
        ("stride_h", o.stride_h),
        ("stride_w", o.stride_w),
        ("filter_h", o.filter_h),
        ("filter_w", o.filter_w),
    ] {
        if let Some(v) = v {
            if v <= 0 {
                err(format!("option {key} must be positive, got {v}"));
            }
        }
    }
    if let Some(shape) = &o.new_shape {
        if shape.is_empty() || shape.iter().any(|&d| d <= 0) {
            err(format!(
                "new_shape {shape:?} must be a non-empty list of positive dims"
            ));
        }
    }
}

fn validate_chain(m: &ModelFile, out: &mut Vec<Diagnostic>) {
    let n = m.tensors.len();
    let mut err = |msg: String| out.push(Diagnostic::error(Location::Model, msg));
    if m.model_input >= n || m.model_output >= n {
        err(format!(
            "model_input {} / model_output {} out of range (model has {n} tensors)",
            m.model_input, m.model_output
        ));
        return;
    }
    if m.tensors[m.model_input].is_constant() {
        err("model_input must not be a constant tensor".into());
    }
    if m.operators.is_empty() {
        err("model has no operators".into());
        return;
    }
    if !is_linear_chain(m) {
        err("operators do not form a single chain from model_input to model_output".into());
    }
}

/// Operator `k` consumes operator `k − 1`'s output (or the model input for
/// `k = 0`) and the last operator produces the model output.
pub fn is_linear_chain(m: &ModelFile) -> bool {
    let mut current = m.model_input;
    for node in &m.operators {
        match node.inputs.first() {
            Some(&t) if t == current => current = node.output,
            _ => return false,
        }
    }
    !m.operators.is_empty() && current == m.model_output
}
