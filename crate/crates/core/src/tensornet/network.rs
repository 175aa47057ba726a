use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{self, ActShape, Conv2d, Dense, Layer};
use super::tensor::{ImageTensor, Shape3};
use crate::{Error, Result};

/// Fixture architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    /// Two conv blocks (16, 32 channels), dense 128, dense classes.
    CnnA,
    /// CNN-A with a third conv block (64 channels).
    CnnB,
}

impl Architecture {
    pub fn name(&self) -> &'static str {
        match self {
            Architecture::CnnA => "cnn-a",
            Architecture::CnnB => "cnn-b",
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cnn-a" => Ok(Architecture::CnnA),
            "cnn-b" => Ok(Architecture::CnnB),
            other => Err(Error::invalid(format!("unknown architecture {other:?}"))),
        }
    }
}

/// Layered feed-forward classifier ending in a softmax output.
///
/// The embedding layer is the activation feeding the final dense layer, i.e.
/// the network with its output layer detached.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input: Shape3,
    layers: Vec<Layer>,
    shapes: Vec<ActShape>,
    embedding_layer: usize,
}

/// Per-layer parameter gradients, aligned with [`Network::layers`].
#[derive(Debug, Clone)]
pub(crate) struct ParamGrads {
    pub(crate) layers: Vec<Option<(Vec<f32>, Vec<f32>)>>,
}

/// Activations recorded during a forward pass for backpropagation.
pub(crate) struct Tape {
    /// `acts[i]` is the input of layer `i`; the last entry is the logits.
    acts: Vec<Vec<f32>>,
    pool_args: Vec<Option<Vec<u32>>>,
}

impl Tape {
    pub(crate) fn logits(&self) -> &[f32] {
        self.acts.last().expect("tape holds the input")
    }
}

impl Network {
    /// Validates a layer stack against an input shape.
    pub fn new(input: Shape3, layers: Vec<Layer>) -> Result<Self> {
        if input.is_empty() {
            return Err(Error::InvalidNetwork("empty input shape".into()));
        }
        let mut shapes = vec![ActShape::Spatial(input)];
        for (i, layer) in layers.iter().enumerate() {
            let next = layer
                .output_shape(shapes[i])
                .map_err(|e| Error::InvalidNetwork(format!("layer {i}: {e}")))?;
            shapes.push(next);
            match layer {
                Layer::Conv2d(c) => {
                    if c.weight.len() != c.out_channels * c.in_channels * c.kernel * c.kernel
                        || c.bias.len() != c.out_channels
                        || c.kernel == 0
                    {
                        return Err(Error::InvalidNetwork(format!(
                            "layer {i}: conv2d parameter sizes do not match its shape"
                        )));
                    }
                }
                Layer::Dense(d) => {
                    if d.weight.len() != d.inputs * d.outputs || d.bias.len() != d.outputs {
                        return Err(Error::InvalidNetwork(format!(
                            "layer {i}: dense parameter sizes do not match its shape"
                        )));
                    }
                }
                _ => {}
            }
        }
        let softmax_count = layers.iter().filter(|l| matches!(l, Layer::Softmax)).count();
        if softmax_count != 1 || !matches!(layers.last(), Some(Layer::Softmax)) {
            return Err(Error::InvalidNetwork(
                "exactly one softmax output layer is required, at the end".into(),
            ));
        }
        let n = layers.len();
        if n < 2 || !matches!(layers[n - 2], Layer::Dense(_)) {
            return Err(Error::InvalidNetwork(
                "the softmax output must follow a dense layer".into(),
            ));
        }
        Ok(Self {
            input,
            layers,
            shapes,
            embedding_layer: n - 2,
        })
    }

    /// Fixture architecture with Glorot-uniform weights and zero biases.
    pub fn fixture(arch: Architecture, input: Shape3, classes: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let channels: &[usize] = match arch {
            Architecture::CnnA => &[16, 32],
            Architecture::CnnB => &[16, 32, 64],
        };
        let mut layers = Vec::new();
        let mut in_c = input.channels;
        let (mut h, mut w) = (input.height, input.width);
        for &out_c in channels {
            layers.push(Layer::Conv2d(conv_init(&mut rng, in_c, out_c, 3, 1)));
            layers.push(Layer::Relu);
            layers.push(Layer::MaxPool2x2);
            in_c = out_c;
            h /= 2;
            w /= 2;
        }
        layers.push(Layer::Flatten);
        layers.push(Layer::Dense(dense_init(&mut rng, in_c * h * w, 128)));
        layers.push(Layer::Relu);
        layers.push(Layer::Dense(dense_init(&mut rng, 128, classes)));
        layers.push(Layer::Softmax);
        Self::new(input, layers)
    }

    pub fn input_shape(&self) -> Shape3 {
        self.input
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn class_count(&self) -> usize {
        self.shapes.last().expect("validated").len()
    }

    pub fn embedding_width(&self) -> usize {
        self.shapes[self.embedding_layer].len()
    }

    /// Index of the layer whose input is the embedding (the final dense layer).
    pub fn embedding_layer(&self) -> usize {
        self.embedding_layer
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub(crate) fn check_input(&self, x: &ImageTensor) -> Result<()> {
        if x.shape() != self.input {
            return Err(Error::ShapeMismatch {
                expected: self.input.to_string(),
                actual: x.shape().to_string(),
            });
        }
        Ok(())
    }

    pub(crate) fn check_batch(&self, batch: &[f32]) -> Result<usize> {
        let p = self.input.len();
        if batch.is_empty() || batch.len() % p != 0 {
            return Err(Error::ShapeMismatch {
                expected: format!("a positive multiple of {p} values"),
                actual: format!("{} values", batch.len()),
            });
        }
        Ok(batch.len() / p)
    }

    /// Runs layers `[0, end)` on a batch.
    fn run_prefix(&self, batch: &[f32], end: usize) -> Vec<f32> {
        let mut act = batch.to_vec();
        for (i, layer) in self.layers[..end].iter().enumerate() {
            act = self.apply(i, layer, &act).0;
        }
        act
    }

    fn apply(&self, i: usize, layer: &Layer, act: &[f32]) -> (Vec<f32>, Option<Vec<u32>>) {
        let spatial = |shape: ActShape| match shape {
            ActShape::Spatial(s) => s,
            ActShape::Flat(_) => unreachable!("validated spatial input"),
        };
        match layer {
            Layer::Conv2d(c) => (c.forward(act, spatial(self.shapes[i])), None),
            Layer::Relu => (layers::relu_forward(act), None),
            Layer::MaxPool2x2 => {
                let (out, arg) = layers::maxpool_forward(act, spatial(self.shapes[i]));
                (out, Some(arg))
            }
            Layer::Flatten | Layer::Softmax => (act.to_vec(), None),
            Layer::Dense(d) => (d.forward(act), None),
        }
    }

    /// Logits for a flat batch of images, `batch × classes` row-major.
    pub fn forward_batch(&self, batch: &[f32]) -> Result<Vec<f32>> {
        self.check_batch(batch)?;
        Ok(self.run_prefix(batch, self.layers.len()))
    }

    /// Pre-softmax logits for one image.
    pub fn forward(&self, x: &ImageTensor) -> Result<Vec<f32>> {
        self.check_input(x)?;
        self.forward_batch(x.data())
    }

    /// Embeddings and logits for a batch: `(batch × width, batch × classes)`.
    pub fn embed_and_logits_batch(&self, batch: &[f32]) -> Result<(Vec<f32>, Vec<f32>)> {
        self.check_batch(batch)?;
        let emb = self.run_prefix(batch, self.embedding_layer);
        let mut act = emb.clone();
        for (i, layer) in self.layers.iter().enumerate().skip(self.embedding_layer) {
            act = self.apply(i, layer, &act).0;
        }
        Ok((emb, act))
    }

    /// Activations of the embedding layer (output layer detached).
    pub fn penultimate_embedding(&self, x: &ImageTensor) -> Result<Vec<f32>> {
        self.check_input(x)?;
        Ok(self.run_prefix(x.data(), self.embedding_layer))
    }

    /// Softmax confidences and arg-max label (lowest index wins ties).
    pub fn predict(&self, x: &ImageTensor) -> Result<Prediction> {
        let logits = self.forward(x)?;
        Ok(Prediction::from_logits(&logits))
    }

    pub fn predict_batch(&self, batch: &[f32]) -> Result<Vec<Prediction>> {
        let logits = self.forward_batch(batch)?;
        Ok(logits
            .chunks(self.class_count())
            .map(Prediction::from_logits)
            .collect())
    }

    pub(crate) fn forward_tape(&self, batch: &[f32]) -> Tape {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut pool_args = Vec::with_capacity(self.layers.len());
        acts.push(batch.to_vec());
        for (i, layer) in self.layers.iter().enumerate() {
            let (out, arg) = self.apply(i, layer, &acts[i]);
            acts.push(out);
            pool_args.push(arg);
        }
        Tape { acts, pool_args }
    }

    /// Backpropagates `grad_logits` through the tape, returning the input
    /// gradient and, when requested, parameter gradients.
    pub(crate) fn backward(
        &self,
        tape: &Tape,
        grad_logits: Vec<f32>,
        want_params: bool,
    ) -> (Vec<f32>, Option<ParamGrads>) {
        let mut grads = want_params.then(|| ParamGrads {
            layers: self
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Conv2d(c) => Some((vec![0.0; c.weight.len()], vec![0.0; c.bias.len()])),
                    Layer::Dense(d) => Some((vec![0.0; d.weight.len()], vec![0.0; d.bias.len()])),
                    _ => None,
                })
                .collect(),
        });
        let mut g = grad_logits;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &tape.acts[i];
            let slot = grads
                .as_mut()
                .and_then(|pg| pg.layers[i].as_mut())
                .map(|(w, b)| (w.as_mut_slice(), b.as_mut_slice()));
            g = match layer {
                Layer::Conv2d(c) => {
                    let ActShape::Spatial(s) = self.shapes[i] else {
                        unreachable!("validated spatial input")
                    };
                    c.backward(input, s, &g, slot)
                }
                Layer::Relu => layers::relu_backward(&tape.acts[i + 1], &g),
                Layer::MaxPool2x2 => {
                    let ActShape::Spatial(s) = self.shapes[i] else {
                        unreachable!("validated spatial input")
                    };
                    let arg = tape.pool_args[i].as_ref().expect("pool indices recorded");
                    layers::maxpool_backward(arg, s, &g)
                }
                Layer::Flatten | Layer::Softmax => g,
                Layer::Dense(d) => d.backward(input, &g, slot),
            };
        }
        (g, grads)
    }

    /// Exact gradient of the cross-entropy loss with respect to the input.
    pub fn input_gradient(&self, x: &ImageTensor, label: usize) -> Result<Vec<f32>> {
        self.check_input(x)?;
        self.input_gradient_batch(x.data(), &[label])
    }

    /// Per-sample input gradients for a batch (each of its own sample's loss).
    pub fn input_gradient_batch(&self, batch: &[f32], labels: &[usize]) -> Result<Vec<f32>> {
        let n = self.check_batch(batch)?;
        if labels.len() != n {
            return Err(Error::invalid(format!(
                "{} labels for a batch of {n}",
                labels.len()
            )));
        }
        let k = self.class_count();
        if let Some(&y) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::invalid(format!("label {y} out of range for {k} classes")));
        }
        let tape = self.forward_tape(batch);
        let grad = softmax_xent_grad(tape.logits(), labels, k, 1.0);
        Ok(self.backward(&tape, grad, false).0)
    }

    pub(crate) fn apply_sgd(&mut self, grads: &ParamGrads, learning_rate: f32) {
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            let Some((gw, gb)) = g else { continue };
            let (w, b) = match layer {
                Layer::Conv2d(c) => (&mut c.weight, &mut c.bias),
                Layer::Dense(d) => (&mut d.weight, &mut d.bias),
                _ => continue,
            };
            for (p, d) in w.iter_mut().zip(gw) {
                *p -= learning_rate * d;
            }
            for (p, d) in b.iter_mut().zip(gb) {
                *p -= learning_rate * d;
            }
        }
    }
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<f32> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n)
        .map(|_| rng.random_range(-limit..limit) as f32)
        .collect()
}

fn conv_init(rng: &mut ChaCha8Rng, in_c: usize, out_c: usize, k: usize, padding: usize) -> Conv2d {
    Conv2d {
        in_channels: in_c,
        out_channels: out_c,
        kernel: k,
        padding,
        weight: glorot(rng, in_c * k * k, out_c * k * k, out_c * in_c * k * k),
        bias: vec![0.0; out_c],
    }
}

fn dense_init(rng: &mut ChaCha8Rng, inputs: usize, outputs: usize) -> Dense {
    Dense {
        inputs,
        outputs,
        weight: glorot(rng, inputs, outputs, inputs * outputs),
        bias: vec![0.0; outputs],
    }
}

/// Class label and softmax confidences of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub label: usize,
    pub confidences: Vec<f64>,
}

impl Prediction {
    pub fn from_logits(logits: &[f32]) -> Self {
        let confidences = softmax(logits);
        Self {
            label: argmax(&confidences),
            confidences,
        }
    }
}

/// First index of the maximum value.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Numerically stable softmax evaluated in `f64`.
pub fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let exps: Vec<f64> = logits.iter().map(|&v| (v as f64 - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `−log softmax(logits)[label]`.
pub fn softmax_cross_entropy(logits: &[f32], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::invalid(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let log_sum = logits
        .iter()
        .map(|&v| (v as f64 - max).exp())
        .sum::<f64>()
        .ln()
        + max;
    Ok((log_sum - logits[label] as f64).max(0.0))
}

/// `scale · (softmax − onehot)` for every row of a logits batch.
pub(crate) fn softmax_xent_grad(logits: &[f32], labels: &[usize], k: usize, scale: f64) -> Vec<f32> {
    let mut grad = Vec::with_capacity(logits.len());
    for (row, &y) in logits.chunks(k).zip(labels) {
        for (j, p) in softmax(row).into_iter().enumerate() {
            let t = if j == y { 1.0 } else { 0.0 };
            grad.push(((p - t) * scale) as f32);
        }
    }
    grad
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_net(input: Shape3, outputs: usize, weight: Vec<f32>, bias: Vec<f32>) -> Network {
        let dense = Dense {
            inputs: input.len(),
            outputs,
            weight,
            bias,
        };
        Network::new(input, vec![Layer::Flatten, Layer::Dense(dense), Layer::Softmax]).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let mut net = Network::fixture(Architecture::CnnA, Shape3::cifar(), 10, 0).unwrap();
        for layer in net.layers_mut() {
            match layer {
                Layer::Conv2d(c) => c.weight.fill(0.0),
                Layer::Dense(d) => d.weight.fill(0.0),
                _ => {}
            }
        }
        let x = ImageTensor::new(vec![0.5; Shape3::cifar().len()], Shape3::cifar()).unwrap();
        let logits = net.forward(&x).unwrap();
        assert_eq!(logits, vec![0.0; 10]);
        let pred = net.predict(&x).unwrap();
        assert_eq!(pred.label, 0);
        assert!(pred.confidences.iter().all(|&p| (p - 0.1).abs() < 1e-12));
    }

    #[test]
    fn identity_dense() {
        let net = dense_net(Shape3::new(1, 1, 1), 1, vec![1.0], vec![0.0]);
        let x = ImageTensor::new(vec![0.7], Shape3::new(1, 1, 1)).unwrap();
        assert_eq!(net.forward(&x).unwrap(), vec![0.7]);
    }

    #[test]
    fn cross_entropy_examples() {
        assert!((softmax_cross_entropy(&[0.0; 10], 4).unwrap() - 10f64.ln()).abs() < 1e-12);
        let mut big = [0.0f32; 10];
        big[2] = 1000.0;
        assert!(softmax_cross_entropy(&big, 2).unwrap() < 1e-12);
        let v = softmax_cross_entropy(&[1.0, 2.0, 3.0], 0).unwrap();
        assert!((v - 2.4076).abs() < 1e-4, "{v}");
        assert!(softmax_cross_entropy(&[1.0, 2.0], 2).is_err());
    }

    #[test]
    fn prediction_from_logits() {
        let p = Prediction::from_logits(&[0.0, 10.0]);
        assert_eq!(p.label, 1);
        assert!((p.confidences[0] - 4.5398e-5).abs() < 1e-8);
        assert!((p.confidences[1] - 0.999955).abs() < 1e-6);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn fixture_shapes_and_embedding() {
        let a = Network::fixture(Architecture::CnnA, Shape3::cifar(), 10, 1).unwrap();
        let b = Network::fixture(Architecture::CnnB, Shape3::cifar(), 10, 1).unwrap();
        assert_eq!(a.embedding_width(), 128);
        assert_eq!(b.embedding_width(), 128);
        assert_eq!(a.layers().len(), 11);
        assert_eq!(b.layers().len(), 14);
        match &a.layers()[7] {
            Layer::Dense(d) => assert_eq!(d.inputs, 2048),
            other => panic!("unexpected {}", other.kind_name()),
        }
        match &b.layers()[10] {
            Layer::Dense(d) => assert_eq!(d.inputs, 1024),
            other => panic!("unexpected {}", other.kind_name()),
        }
        let x = ImageTensor::new(
            (0..Shape3::cifar().len()).map(|i| (i % 17) as f32 / 16.0).collect(),
            Shape3::cifar(),
        )
        .unwrap();
        let e1 = a.penultimate_embedding(&x).unwrap();
        assert_eq!(e1, a.penultimate_embedding(&x).unwrap());
        assert!(e1.iter().all(|&v| v >= 0.0));
        // The embedding fed through the output layer reproduces the logits.
        let (emb, logits) = a.embed_and_logits_batch(x.data()).unwrap();
        assert_eq!(emb, e1);
        assert_eq!(logits, a.forward(&x).unwrap());
        let Layer::Dense(out) = &a.layers()[a.embedding_layer()] else {
            panic!("final layer is dense")
        };
        for (k, &l) in logits.iter().enumerate() {
            let manual: f64 = out.bias[k] as f64
                + emb.iter().zip(&out.weight[k * 128..(k + 1) * 128]).map(|(&e, &w)| e as f64 * w as f64).sum::<f64>();
            assert!((manual - l as f64).abs() < 1e-4);
        }
    }

    #[test]
    fn rejects_bad_inputs_and_stacks() {
        let net = Network::fixture(Architecture::CnnA, Shape3::cifar(), 10, 1).unwrap();
        let small = ImageTensor::zeros(Shape3::new(3, 16, 16));
        assert!(matches!(net.forward(&small), Err(Error::ShapeMismatch { .. })));
        assert!(net.forward_batch(&[0.0; 5]).is_err());
        assert!(net.input_gradient_batch(&vec![0.0; Shape3::cifar().len()], &[10]).is_err());
        let s = Shape3::new(1, 2, 2);
        assert!(Network::new(s, vec![Layer::Flatten, Layer::Softmax]).is_err());
        let d = Dense { inputs: 4, outputs: 2, weight: vec![0.0; 8], bias: vec![0.0; 2] };
        assert!(Network::new(s, vec![Layer::Flatten, Layer::Dense(d.clone())]).is_err());
        assert!(Network::new(s, vec![Layer::Dense(d.clone()), Layer::Softmax]).is_err());
        let bad = Dense { weight: vec![0.0; 7], ..d };
        assert!(Network::new(s, vec![Layer::Flatten, Layer::Dense(bad), Layer::Softmax]).is_err());
    }

    #[test]
    fn dense_gradient_closed_form() {
        // dL/dx = Wᵀ (softmax(Wx + b) − onehot(y))
        let w = vec![0.3f32, -0.2, 0.5, 0.1];
        let b = vec![0.05f32, -0.1];
        let shape = Shape3::new(1, 1, 2);
        let net = dense_net(shape, 2, w.clone(), b.clone());
        let x = [0.4f32, 0.9];
        let z = [
            w[0] * x[0] + w[1] * x[1] + b[0],
            w[2] * x[0] + w[3] * x[1] + b[1],
        ];
        let p = softmax(&z);
        for y in 0..2 {
            let r = [p[0] - (y == 0) as u8 as f64, p[1] - (y == 1) as u8 as f64];
            let want = [
                w[0] as f64 * r[0] + w[2] as f64 * r[1],
                w[1] as f64 * r[0] + w[3] as f64 * r[1],
            ];
            let got = net.input_gradient(&ImageTensor::new(x.to_vec(), shape).unwrap(), y).unwrap();
            for k in 0..2 {
                assert!((got[k] as f64 - want[k]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn batch_gradients_are_per_sample() {
        let net = Network::fixture(Architecture::CnnA, Shape3::cifar(), 10, 4).unwrap();
        let p = Shape3::cifar().len();
        let a: Vec<f32> = (0..p).map(|i| (i % 13) as f32 / 12.0).collect();
        let b: Vec<f32> = (0..p).map(|i| (i % 7) as f32 / 6.0).collect();
        let both = [a.clone(), b.clone()].concat();
        let g = net.input_gradient_batch(&both, &[3, 8]).unwrap();
        assert_eq!(&g[..p], net.input_gradient_batch(&a, &[3]).unwrap().as_slice());
        assert_eq!(&g[p..], net.input_gradient_batch(&b, &[8]).unwrap().as_slice());
    }
}
