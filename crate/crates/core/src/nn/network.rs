use rand::Rng;

use super::layer::{BatchNorm2d, Cache, Conv2d, Layer, Linear, MaxPool2d, Mode};
use crate::error::{Error, Result};
use crate::rng::{self, tag};
use crate::tensor::Tensor;

/// An ordered stack of layers with a fixed per-sample input shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    input_shape: Vec<usize>,
    classes: usize,
    layers: Vec<Layer>,
}

/// Everything the forward pass leaves behind: the input of every layer, the
/// per-layer caches and the final logits.
#[derive(Clone, Debug)]
pub struct Trace {
    pub inputs: Vec<Tensor>,
    pub caches: Vec<Cache>,
    pub logits: Tensor,
    pub mode: Mode,
}

/// Parameter gradients, laid out like `Layer::params` for every layer.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Vec<Vec<f32>>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            layers: net
                .layers
                .iter()
                .map(|l| l.params().iter().map(|p| vec![0.0; p.len()]).collect())
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (pa, pb) in a.iter_mut().zip(b) {
                for (x, y) in pa.iter_mut().zip(pb) {
                    *x += y;
                }
            }
        }
    }
}

impl Network {
    pub fn new(input_shape: Vec<usize>, classes: usize, layers: Vec<Layer>) -> Result<Self> {
        let net = Network {
            input_shape,
            classes,
            layers,
        };
        net.layer_shapes()?;
        Ok(net)
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Per-sample shape entering each layer, followed by the output shape.
    pub fn layer_shapes(&self) -> Result<Vec<Vec<usize>>> {
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer
                .output_shape(shapes.last().expect("non-empty"))
                .map_err(|msg| Error::Layer {
                    layer: i,
                    kind: layer.kind().name(),
                    msg,
                })?;
            shapes.push(next);
        }
        let out = shapes.last().expect("non-empty");
        if out != &[self.classes] {
            return Err(Error::Shape(format!(
                "network output {out:?} does not match {} classes",
                self.classes
            )));
        }
        Ok(shapes)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Adds a batch axis to a single sample, or checks an existing one.
    pub fn batched(&self, input: &Tensor) -> Result<Tensor> {
        if input.shape() == self.input_shape.as_slice() {
            let mut shape = vec![1];
            shape.extend_from_slice(&self.input_shape);
            return input.clone().reshape(&shape);
        }
        if input.shape().len() == self.input_shape.len() + 1
            && input.shape()[1..] == self.input_shape[..]
        {
            return Ok(input.clone());
        }
        let kind = self
            .layers
            .first()
            .map(|l| l.kind().name())
            .unwrap_or("input");
        Err(Error::Layer {
            layer: 0,
            kind,
            msg: format!(
                "expected input {:?} (optionally batched), got {:?}",
                self.input_shape,
                input.shape()
            ),
        })
    }

    pub fn forward(&self, batch: &Tensor, mode: Mode) -> Result<Trace> {
        let x = self.batched(batch)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut current = x;
        for layer in &self.layers {
            let (next, cache) = layer.forward(&current, mode);
            inputs.push(current);
            caches.push(cache);
            current = next;
        }
        Ok(Trace {
            inputs,
            caches,
            logits: current,
            mode,
        })
    }

    /// Inference-mode logits, shape `[B, classes]`.
    pub fn logits(&self, batch: &Tensor) -> Result<Tensor> {
        Ok(self.forward(batch, Mode::Eval)?.logits)
    }

    pub fn predict(&self, batch: &Tensor) -> Result<Vec<usize>> {
        Ok(self.logits(batch)?.argmax_rows())
    }

    /// Backpropagates `grad_logits` through a trace of this network.
    /// Returns parameter gradients and the gradient with respect to the input.
    pub fn backward(&self, trace: &Trace, grad_logits: &Tensor) -> (Gradients, Tensor) {
        let mut grads = Gradients::zeros_like(self);
        let mut g = grad_logits.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            g = layer
                .backward(
                    &trace.inputs[i],
                    &trace.caches[i],
                    &g,
                    &mut grads.layers[i],
                    true,
                )
                .expect("input gradient requested");
        }
        (grads, g)
    }

    /// Parameter-only backward pass; skips the input gradient of the first layer.
    pub fn backward_params(&self, trace: &Trace, grad_logits: &Tensor) -> Gradients {
        let mut grads = Gradients::zeros_like(self);
        let mut g = grad_logits.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            match layer.backward(
                &trace.inputs[i],
                &trace.caches[i],
                &g,
                &mut grads.layers[i],
                i > 0,
            ) {
                Some(next) => g = next,
                None => break,
            }
        }
        grads
    }

    /// Folds the batch statistics of a training-mode trace into the running
    /// statistics of every batch-norm layer.
    pub fn update_running_stats(&mut self, trace: &Trace) {
        for (layer, cache) in self.layers.iter_mut().zip(&trace.caches) {
            if let (
                Layer::BatchNorm2d(bn),
                Cache::BatchNorm {
                    batch_mean,
                    batch_var,
                    count,
                    mode: Mode::Train,
                    ..
                },
            ) = (layer, cache)
            {
                let m = bn.momentum;
                let n = *count as f32;
                let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
                for ch in 0..bn.channels {
                    bn.running_mean[ch] = (1.0 - m) * bn.running_mean[ch] + m * batch_mean[ch];
                    bn.running_var[ch] =
                        (1.0 - m) * bn.running_var[ch] + m * batch_var[ch] * unbias;
                }
            }
        }
    }

    /// Stable digest of all parameters and running statistics, used to prove
    /// which weight snapshot an attribution was computed against.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |vals: &[f32]| {
            for v in vals {
                for byte in v.to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        };
        for layer in &self.layers {
            for p in layer.params() {
                feed(p);
            }
            if let Layer::BatchNorm2d(bn) = layer {
                feed(&bn.running_mean);
                feed(&bn.running_var);
            }
        }
        h
    }
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let classes = *logits.shape().last().unwrap_or(&0);
    let b = logits.batch();
    if labels.len() != b {
        return Err(Error::Shape(format!(
            "{} labels for a batch of {b}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidArgument(format!(
            "label {bad} outside [0, {classes})"
        )));
    }
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0f64;
    for (s, &label) in labels.iter().enumerate() {
        let row = logits.sample(s);
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let sum: f64 = row.iter().map(|&v| ((v - max) as f64).exp()).sum();
        let lse = max as f64 + sum.ln();
        total += lse - row[label] as f64;
        let g = grad.sample_mut(s);
        for (j, gv) in g.iter_mut().enumerate() {
            let p = ((row[j] as f64) - lse).exp();
            *gv = ((p - if j == label { 1.0 } else { 0.0 }) / b as f64) as f32;
        }
    }
    Ok((total / b as f64, grad))
}

fn kaiming_uniform(rng: &mut impl Rng, fan_in: usize, n: usize) -> Vec<f32> {
    let bound = (6.0 / fan_in as f64).sqrt() as f32;
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

fn init_linear(rng: &mut impl Rng, in_features: usize, out_features: usize) -> Linear {
    Linear {
        in_features,
        out_features,
        weight: kaiming_uniform(rng, in_features, in_features * out_features),
        bias: vec![0.0; out_features],
    }
}

fn init_conv(rng: &mut impl Rng, cin: usize, cout: usize, k: usize, pad: usize) -> Conv2d {
    let mut c = Conv2d::zeros(cin, cout, k, 1, pad);
    c.weight = kaiming_uniform(rng, cin * k * k, c.weight.len());
    c
}

/// Two conv→BN→ReLU→pool blocks (8 and 16 channels) and a linear head.
pub fn build_small_cnn(input: [usize; 3], classes: usize, seed: u64) -> Result<Network> {
    build_small_cnn_with(input, classes, [8, 16], seed)
}

pub fn build_small_cnn_with(
    input: [usize; 3],
    classes: usize,
    widths: [usize; 2],
    seed: u64,
) -> Result<Network> {
    let [c, h, w] = input;
    if h < 8 || w < 8 {
        return Err(Error::InvalidArgument(format!(
            "small CNN needs H, W >= 8, got {h}x{w}"
        )));
    }
    if classes == 0 || c == 0 {
        return Err(Error::InvalidArgument("channels and classes must be > 0".into()));
    }
    let mut rng = rng::stream(&[seed, tag::INIT]);
    let pool = MaxPool2d { kernel: 2, stride: 2 };
    let flat = widths[1] * (h / 4) * (w / 4);
    let layers = vec![
        Layer::Conv2d(init_conv(&mut rng, c, widths[0], 3, 1)),
        Layer::BatchNorm2d(BatchNorm2d::new(widths[0])),
        Layer::Relu,
        Layer::MaxPool2d(pool),
        Layer::Conv2d(init_conv(&mut rng, widths[0], widths[1], 3, 1)),
        Layer::BatchNorm2d(BatchNorm2d::new(widths[1])),
        Layer::Relu,
        Layer::MaxPool2d(pool),
        Layer::Flatten,
        Layer::Linear(init_linear(&mut rng, flat, classes)),
    ];
    Network::new(input.to_vec(), classes, layers)
}

/// Widths of the shared per-point MLP and of the classifier head.
#[derive(Clone, Debug, PartialEq)]
pub struct PointNetWidths {
    pub point_mlp: Vec<usize>,
    pub head: Vec<usize>,
}

impl Default for PointNetWidths {
    fn default() -> Self {
        PointNetWidths {
            point_mlp: vec![16, 32, 64],
            head: vec![32],
        }
    }
}

/// Shared per-point MLP, global max pool over points and an MLP classifier.
pub fn build_pointnet_lite(points: usize, classes: usize, seed: u64) -> Result<Network> {
    build_pointnet_lite_with(points, classes, &PointNetWidths::default(), seed)
}

pub fn build_pointnet_lite_with(
    points: usize,
    classes: usize,
    widths: &PointNetWidths,
    seed: u64,
) -> Result<Network> {
    if points < 64 {
        return Err(Error::InvalidArgument(format!(
            "PointNet-lite needs at least 64 points, got {points}"
        )));
    }
    if classes == 0 || widths.point_mlp.is_empty() {
        return Err(Error::InvalidArgument(
            "classes and point-MLP widths must be non-empty".into(),
        ));
    }
    let mut rng = rng::stream(&[seed, tag::INIT]);
    let mut layers = Vec::new();
    let mut width = 3;
    for &w in &widths.point_mlp {
        layers.push(Layer::SharedPointMlp(init_linear(&mut rng, width, w)));
        layers.push(Layer::Relu);
        width = w;
    }
    layers.push(Layer::GlobalMaxPool);
    for &w in &widths.head {
        layers.push(Layer::Linear(init_linear(&mut rng, width, w)));
        layers.push(Layer::Relu);
        width = w;
    }
    layers.push(Layer::Linear(init_linear(&mut rng, width, classes)));
    Network::new(vec![points, 3], classes, layers)
}
