//! Synthetic models with random weights and the topologies of the reference
//! networks, plus random single-operator models and random chains for
//! property testing. Everything is seeded and reproducible.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{Activation, DType, ModelFile, OpCode, OpNode, Options, PaddingKind, Tensor};

/// Incrementally builds a linear chain, choosing quantization parameters so
/// that intermediate activations use a sizeable part of the i8 range.
pub struct ChainBuilder {
    rng: ChaCha8Rng,
    tensors: Vec<Tensor>,
    operators: Vec<OpNode>,
    current: usize,
}

impl ChainBuilder {
    pub fn new(seed: u64, input_shape: &[usize]) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = rng.gen_range(0.005..0.1);
        let zero = rng.gen_range(-20..=20);
        Self::with_input(rng, input_shape, scale, zero)
    }

    fn with_input(rng: ChaCha8Rng, input_shape: &[usize], scale: f64, zero: i64) -> Self {
        let input = Tensor {
            name: "input".into(),
            shape: input_shape.to_vec(),
            dtype: DType::I8,
            scale,
            zero_point: zero,
            data: None,
        };
        ChainBuilder {
            rng,
            tensors: vec![input],
            operators: Vec::new(),
            current: 0,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.tensors[self.current].shape
    }

    fn scale(&self) -> f64 {
        self.tensors[self.current].scale
    }

    fn push(&mut self, t: Tensor) -> usize {
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    fn constant(&mut self, role: &str, shape: Vec<usize>) -> (usize, f64) {
        let k = self.operators.len();
        let n: usize = shape.iter().product();
        let scale = self.rng.gen_range(0.002..0.05);
        let zero = self.rng.gen_range(-10..=10);
        let data = (0..n).map(|_| self.rng.gen_range(-127..=127)).collect();
        let idx = self.push(Tensor {
            name: format!("op{k}_{role}"),
            shape,
            dtype: DType::I8,
            scale,
            zero_point: zero,
            data: Some(data),
        });
        (idx, scale)
    }

    /// i32 bias with the container convention `s_b = s_x·s_w`, `z_b = 0`.
    fn bias(&mut self, channels: usize, scale: f64, fan_in: usize) -> usize {
        let k = self.operators.len();
        let span = (fan_in as i64 * 2000).min(1 << 20);
        let data = (0..channels)
            .map(|_| self.rng.gen_range(-span..=span))
            .collect();
        self.push(Tensor {
            name: format!("op{k}_bias"),
            shape: vec![channels],
            dtype: DType::I32,
            scale,
            zero_point: 0,
            data: Some(data),
        })
    }

    fn activation_tensor(&mut self, shape: Vec<usize>, scale: f64, zero: i64) -> usize {
        let k = self.operators.len();
        self.push(Tensor {
            name: format!("op{k}_out"),
            shape,
            dtype: DType::I8,
            scale,
            zero_point: zero,
            data: None,
        })
    }

    fn out_zero(&mut self) -> i64 {
        self.rng.gen_range(-30..=30)
    }

    fn finish_op(&mut self, op: OpCode, mut inputs: Vec<usize>, output: usize, options: Options) {
        inputs.insert(0, self.current);
        self.operators.push(OpNode {
            op,
            inputs,
            output,
            options,
        });
        self.current = output;
    }

    fn weighted_output_scale(&mut self, w_scale: f64, fan_in: usize) -> f64 {
        self.scale() * w_scale * (fan_in as f64).sqrt() * self.rng.gen_range(90.0..170.0)
    }

    fn fused(act: Activation) -> Option<Activation> {
        match act {
            Activation::None => None,
            other => Some(other),
        }
    }

    pub fn fully_connected(&mut self, units: usize, act: Activation) -> &mut Self {
        let &[rows, n] = self.shape() else {
            panic!(
                "FULLY_CONNECTED needs a rank-2 input, have {:?}",
                self.shape()
            )
        };
        let (w, ws) = self.constant("weights", vec![n, units]);
        let b = self.bias(units, self.scale() * ws, n);
        let s = self.weighted_output_scale(ws, n);
        let z = self.out_zero();
        let y = self.activation_tensor(vec![rows, units], s, z);
        let options = Options {
            fused_activation: Self::fused(act),
            ..Default::default()
        };
        self.finish_op(OpCode::FullyConnected, vec![w, b], y, options);
        self
    }

    fn spatial(&self) -> (usize, usize, usize) {
        let &[1, h, w, c] = self.shape() else {
            panic!("expected [1, h, w, c], have {:?}", self.shape())
        };
        (h, w, c)
    }

    fn windowed_shape(
        &self,
        fh: usize,
        fw: usize,
        stride: usize,
        padding: PaddingKind,
        channels: usize,
    ) -> Vec<usize> {
        let (h, w, _) = self.spatial();
        let extent = |dim: usize, f: usize| match padding {
            PaddingKind::Same => dim.div_ceil(stride),
            PaddingKind::Valid => (dim + 1 - f).div_ceil(stride),
        };
        vec![1, extent(h, fh), extent(w, fw), channels]
    }

    fn window_options(stride: usize, padding: PaddingKind, act: Activation) -> Options {
        Options {
            fused_activation: Self::fused(act),
            padding: Some(padding),
            stride_h: Some(stride as i64),
            stride_w: Some(stride as i64),
            ..Default::default()
        }
    }

    pub fn conv2d(
        &mut self,
        filters: usize,
        fh: usize,
        fw: usize,
        stride: usize,
        padding: PaddingKind,
        act: Activation,
    ) -> &mut Self {
        let (_, _, c) = self.spatial();
        let out_shape = self.windowed_shape(fh, fw, stride, padding, filters);
        let (f, fs) = self.constant("filters", vec![filters, fh, fw, c]);
        let fan_in = fh * fw * c;
        let b = self.bias(filters, self.scale() * fs, fan_in);
        let s = self.weighted_output_scale(fs, fan_in);
        let z = self.out_zero();
        let y = self.activation_tensor(out_shape, s, z);
        self.finish_op(
            OpCode::Conv2d,
            vec![f, b],
            y,
            Self::window_options(stride, padding, act),
        );
        self
    }

    /// Depthwise convolution with `multiplier` output channels per input channel.
    pub fn depthwise_conv2d(
        &mut self,
        multiplier: usize,
        fh: usize,
        fw: usize,
        stride: usize,
        padding: PaddingKind,
        act: Activation,
    ) -> &mut Self {
        let (_, _, c) = self.spatial();
        let out_c = c * multiplier;
        let out_shape = self.windowed_shape(fh, fw, stride, padding, out_c);
        let (f, fs) = self.constant("filters", vec![1, fh, fw, out_c]);
        let fan_in = fh * fw;
        let b = self.bias(out_c, self.scale() * fs, fan_in);
        let s = self.weighted_output_scale(fs, fan_in);
        let z = self.out_zero();
        let y = self.activation_tensor(out_shape, s, z);
        self.finish_op(
            OpCode::DepthwiseConv2d,
            vec![f, b],
            y,
            Self::window_options(stride, padding, act),
        );
        self
    }

    pub fn average_pool2d(
        &mut self,
        fh: usize,
        fw: usize,
        stride: usize,
        padding: PaddingKind,
        act: Activation,
    ) -> &mut Self {
        let (_, _, c) = self.spatial();
        let out_shape = self.windowed_shape(fh, fw, stride, padding, c);
        let s = self.scale() * self.rng.gen_range(0.6..1.6);
        let z = self.out_zero();
        let y = self.activation_tensor(out_shape, s, z);
        let mut options = Self::window_options(stride, padding, act);
        options.filter_h = Some(fh as i64);
        options.filter_w = Some(fw as i64);
        self.finish_op(OpCode::AveragePool2d, vec![], y, options);
        self
    }

    pub fn reshape(&mut self, new_shape: &[usize]) -> &mut Self {
        let (s, z) = (self.scale(), self.tensors[self.current].zero_point);
        let y = self.activation_tensor(new_shape.to_vec(), s, z);
        let options = Options {
            new_shape: Some(new_shape.iter().map(|&d| d as i64).collect()),
            ..Default::default()
        };
        self.finish_op(OpCode::Reshape, vec![], y, options);
        self
    }

    /// Softmax with an output scale in [1/256, 1/32] and a zero point low
    /// enough that probability 1 stays representable.
    pub fn softmax(&mut self) -> &mut Self {
        let s = 1.0 / self.rng.gen_range(32..=256) as f64;
        let top = 127 - (1.0 / s).ceil() as i64;
        let z = self.rng.gen_range(-128..=top.max(-128));
        let shape = self.shape().to_vec();
        let y = self.activation_tensor(shape, s, z);
        self.finish_op(OpCode::Softmax, vec![], y, Options::default());
        self
    }

    pub fn build(&self) -> ModelFile {
        ModelFile {
            version: 1,
            tensors: self.tensors.clone(),
            operators: self.operators.clone(),
            model_input: 0,
            model_output: self.current,
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Three FullyConnected layers, 1 → 16 → 16 → 1, ReLU fused on the first two.
pub fn sine_predictor(seed: u64) -> ModelFile {
    ChainBuilder::new(seed, &[1, 1])
        .fully_connected(16, Activation::Relu)
        .fully_connected(16, Activation::Relu)
        .fully_connected(1, Activation::None)
        .build()
}

/// Speech-command topology: depthwise conv over a 49×40 spectrogram, then a
/// dense classifier over 4 classes.
pub fn tiny_conv(seed: u64) -> ModelFile {
    ChainBuilder::new(seed, &[1, 49, 40, 1])
        .depthwise_conv2d(8, 10, 8, 2, PaddingKind::Same, Activation::Relu)
        .reshape(&[1, 4000])
        .fully_connected(4, Activation::None)
        .softmax()
        .build()
}

/// A scaled-down person-detection style network: strided and pointwise
/// convolutions alternating with depthwise ones, global pooling, classifier.
pub fn mobilenet_mini(seed: u64) -> ModelFile {
    use Activation::Relu6;
    use PaddingKind::{Same, Valid};
    ChainBuilder::new(seed, &[1, 16, 16, 3])
        .conv2d(8, 3, 3, 2, Same, Relu6)
        .depthwise_conv2d(1, 3, 3, 1, Same, Relu6)
        .conv2d(16, 1, 1, 1, Same, Relu6)
        .depthwise_conv2d(1, 3, 3, 2, Same, Relu6)
        .conv2d(32, 1, 1, 1, Same, Relu6)
        .average_pool2d(4, 4, 1, Valid, Activation::None)
        .conv2d(2, 1, 1, 1, Same, Activation::None)
        .reshape(&[1, 2])
        .softmax()
        .build()
}

/// A single 32 → 32 FullyConnected layer.
pub fn dense32(seed: u64) -> ModelFile {
    dense(seed, 32, 32)
}

pub fn dense(seed: u64, inputs: usize, units: usize) -> ModelFile {
    ChainBuilder::new(seed, &[1, inputs])
        .fully_connected(units, Activation::None)
        .build()
}

/// `[1, 3] → [3]` with unit quantization.
pub fn identity_reshape() -> ModelFile {
    let mut b = ChainBuilder::with_input(ChaCha8Rng::seed_from_u64(0), &[1, 3], 1.0, 0);
    b.reshape(&[3]);
    b.build()
}

fn random_activation(rng: &mut ChaCha8Rng) -> Activation {
    *[Activation::None, Activation::Relu, Activation::Relu6]
        .choose(rng)
        .expect("non-empty")
}

fn random_padding(rng: &mut ChaCha8Rng) -> PaddingKind {
    if rng.gen_bool(0.5) {
        PaddingKind::Same
    } else {
        PaddingKind::Valid
    }
}

/// Random window that fits an `h × w` input under the chosen padding.
fn random_window(rng: &mut ChaCha8Rng, h: usize, w: usize) -> (usize, usize, usize, PaddingKind) {
    let padding = random_padding(rng);
    let fh = rng.gen_range(1..=h.min(4));
    let fw = rng.gen_range(1..=w.min(4));
    let stride = rng.gen_range(1..=2);
    (fh, fw, stride, padding)
}

fn random_dims(rng: &mut ChaCha8Rng) -> (usize, usize, usize) {
    (
        rng.gen_range(1..=8),
        rng.gen_range(1..=8),
        rng.gen_range(1..=4),
    )
}

/// Applies one random operator of `kind` to the builder's current tensor.
/// The current shape must suit the kind: rank 2 for FullyConnected,
/// `[1, h, w, c]` for windowed ops.
fn push_random(b: &mut ChainBuilder, kind: OpCode) {
    let rng_act = |b: &mut ChainBuilder| random_activation(b.rng());
    match kind {
        OpCode::FullyConnected => {
            let units = b.rng().gen_range(1..=8);
            let act = rng_act(b);
            b.fully_connected(units, act);
        }
        OpCode::Conv2d => {
            let (h, w, _) = b.spatial();
            let (fh, fw, s, p) = random_window(b.rng(), h, w);
            let filters = b.rng().gen_range(1..=4);
            let act = rng_act(b);
            b.conv2d(filters, fh, fw, s, p, act);
        }
        OpCode::DepthwiseConv2d => {
            let (h, w, _) = b.spatial();
            let (fh, fw, s, p) = random_window(b.rng(), h, w);
            let mult = b.rng().gen_range(1..=2);
            let act = rng_act(b);
            b.depthwise_conv2d(mult, fh, fw, s, p, act);
        }
        OpCode::AveragePool2d => {
            let (h, w, _) = b.spatial();
            let (fh, fw, s, p) = random_window(b.rng(), h, w);
            let act = rng_act(b);
            b.average_pool2d(fh, fw, s, p, act);
        }
        OpCode::Reshape => {
            let n: usize = b.shape().iter().product();
            let target = if b.shape().len() == 4 {
                vec![1, n]
            } else {
                vec![1, 1, n, 1]
            };
            b.reshape(&target);
        }
        OpCode::Softmax => {
            b.softmax();
        }
    }
}

/// A model holding exactly one operator of `kind`, with dims ≤ 8.
pub fn random_single_op(kind: OpCode, seed: u64) -> ModelFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, c) = random_dims(&mut rng);
    let shape = match kind {
        OpCode::FullyConnected => vec![rng.gen_range(1..=3), rng.gen_range(1..=8)],
        OpCode::Softmax if rng.gen_bool(0.5) => vec![rng.gen_range(1..=3), rng.gen_range(1..=8)],
        _ => vec![1, h, w, c],
    };
    let mut b = ChainBuilder::new(rng.gen(), &shape);
    push_random(&mut b, kind);
    b.build()
}

/// A random linear chain of 2–6 operators with every dim ≤ 8.
pub fn random_chain(seed: u64) -> ModelFile {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = rng.gen_range(2..=6);
    let (h, w, c) = random_dims(&mut rng);
    let start = if rng.gen_bool(0.7) {
        vec![1, h, w, c]
    } else {
        vec![1, rng.gen_range(1..=8)]
    };
    let mut b = ChainBuilder::new(rng.gen(), &start);
    for _ in 0..len {
        let spatial = b.shape().len() == 4;
        let small = b.shape().iter().product::<usize>() <= 8;
        let choices: &[OpCode] = match (spatial, small) {
            (true, true) => &[
                OpCode::Conv2d,
                OpCode::DepthwiseConv2d,
                OpCode::AveragePool2d,
                OpCode::Softmax,
                OpCode::Reshape,
            ],
            // Flattening would produce a dim above 8.
            (true, false) => &[
                OpCode::Conv2d,
                OpCode::DepthwiseConv2d,
                OpCode::AveragePool2d,
                OpCode::Softmax,
            ],
            _ => &[OpCode::FullyConnected, OpCode::Softmax, OpCode::Reshape],
        };
        let kind = *choices.choose(b.rng()).expect("non-empty");
        // Keep spatial channel counts small so dims stay ≤ 8.
        if spatial && kind == OpCode::DepthwiseConv2d && b.spatial().2 > 4 {
            push_random(&mut b, OpCode::AveragePool2d);
        } else {
            push_random(&mut b, kind);
        }
    }
    b.build()
}
