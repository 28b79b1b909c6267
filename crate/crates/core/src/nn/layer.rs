//! Layer definitions with batched forward and backward passes.
//!
//! Every tensor handed to a layer carries a leading batch dimension. Per-sample
//! layouts are:
//!
//! | layer            | input        | output         |
//! |------------------|--------------|----------------|
//! | `Linear`         | `[in]`       | `[out]`        |
//! | `SharedPointMlp` | `[N, in]`    | `[N, out]`     |
//! | `Conv2d`         | `[C, H, W]`  | `[O, H', W']`  |
//! | `BatchNorm2d`    | `[C, ...]`   | same           |
//! | `MaxPool2d`      | `[C, H, W]`  | `[C, H', W']`  |
//! | `GlobalMaxPool`  | `[N, C]`     | `[C]`          |
//! | `Flatten`        | any          | `[prod]`       |

use serde::{Deserialize, Serialize};

use super::gemm::gemm;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    /// Batch statistics in batch norm; running statistics are updated by the trainer.
    Train,
    /// Running statistics in batch norm.
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    Linear,
    Conv2d,
    BatchNorm2d,
    Relu,
    MaxPool2d,
    GlobalMaxPool,
    Flatten,
    SharedPointMlp,
}

impl LayerKind {
    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Linear => "Linear",
            LayerKind::Conv2d => "Conv2d",
            LayerKind::BatchNorm2d => "BatchNorm2d",
            LayerKind::Relu => "ReLU",
            LayerKind::MaxPool2d => "MaxPool2d",
            LayerKind::GlobalMaxPool => "GlobalMaxPool",
            LayerKind::Flatten => "Flatten",
            LayerKind::SharedPointMlp => "SharedPointMlp",
        }
    }

    /// Layers that carry a weight matrix and take part in LRP rule assignment.
    pub fn is_parametrized(self) -> bool {
        matches!(
            self,
            LayerKind::Linear | LayerKind::Conv2d | LayerKind::SharedPointMlp
        )
    }
}

/// Fully connected map. Weight is `out × in`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Linear {
    pub fn zeros(in_features: usize, out_features: usize) -> Self {
        Linear {
            in_features,
            out_features,
            weight: vec![0.0; in_features * out_features],
            bias: vec![0.0; out_features],
        }
    }
}

/// 2D convolution. Weight is `out × in × k × k`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv2d {
    pub fn zeros(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: vec![0.0; out_channels * in_channels * kernel * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    fn out_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let ph = h + 2 * self.padding;
        let pw = w + 2 * self.padding;
        if self.stride == 0 || ph < self.kernel || pw < self.kernel {
            return None;
        }
        Some((
            (ph - self.kernel) / self.stride + 1,
            (pw - self.kernel) / self.stride + 1,
        ))
    }
}

/// Per-channel batch normalization over the leading (channel) axis of each sample.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub eps: f32,
    pub momentum: f32,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            channels,
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            eps: 1e-5,
            momentum: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaxPool2d {
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Linear(Linear),
    Conv2d(Conv2d),
    BatchNorm2d(BatchNorm2d),
    Relu,
    MaxPool2d(MaxPool2d),
    GlobalMaxPool,
    Flatten,
    /// The same `Linear` map applied to every point (row) of an `[N, in]` input.
    SharedPointMlp(Linear),
}

/// Forward-pass state needed by the backward pass and by LRP.
#[derive(Clone, Debug, Default)]
pub enum Cache {
    #[default]
    None,
    /// Flat per-sample input index of each pooled output element.
    Winners(Vec<u32>),
    BatchNorm {
        xhat: Vec<f32>,
        inv_std: Vec<f32>,
        batch_mean: Vec<f32>,
        batch_var: Vec<f32>,
        /// Elements per channel that entered the batch statistics.
        count: usize,
        mode: Mode,
    },
}

impl Layer {
    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Linear(_) => LayerKind::Linear,
            Layer::Conv2d(_) => LayerKind::Conv2d,
            Layer::BatchNorm2d(_) => LayerKind::BatchNorm2d,
            Layer::Relu => LayerKind::Relu,
            Layer::MaxPool2d(_) => LayerKind::MaxPool2d,
            Layer::GlobalMaxPool => LayerKind::GlobalMaxPool,
            Layer::Flatten => LayerKind::Flatten,
            Layer::SharedPointMlp(_) => LayerKind::SharedPointMlp,
        }
    }

    /// Per-sample output shape, or a diagnostic if `input` is incompatible.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>, String> {
        match self {
            Layer::Linear(l) => {
                if input != [l.in_features] {
                    return Err(format!("expected input [{}], got {input:?}", l.in_features));
                }
                check_params(l.weight.len(), l.in_features * l.out_features, "weight")?;
                check_params(l.bias.len(), l.out_features, "bias")?;
                Ok(vec![l.out_features])
            }
            Layer::SharedPointMlp(l) => {
                if input.len() != 2 || input[1] != l.in_features {
                    return Err(format!(
                        "expected input [N, {}], got {input:?}",
                        l.in_features
                    ));
                }
                check_params(l.weight.len(), l.in_features * l.out_features, "weight")?;
                check_params(l.bias.len(), l.out_features, "bias")?;
                Ok(vec![input[0], l.out_features])
            }
            Layer::Conv2d(c) => {
                if input.len() != 3 || input[0] != c.in_channels {
                    return Err(format!(
                        "expected input [{}, H, W], got {input:?}",
                        c.in_channels
                    ));
                }
                check_params(
                    c.weight.len(),
                    c.out_channels * c.in_channels * c.kernel * c.kernel,
                    "weight",
                )?;
                check_params(c.bias.len(), c.out_channels, "bias")?;
                let (ho, wo) = c
                    .out_hw(input[1], input[2])
                    .ok_or_else(|| format!("kernel {} does not fit {input:?}", c.kernel))?;
                Ok(vec![c.out_channels, ho, wo])
            }
            Layer::BatchNorm2d(bn) => {
                if input.first() != Some(&bn.channels) {
                    return Err(format!(
                        "expected {} channels on the leading axis, got {input:?}",
                        bn.channels
                    ));
                }
                for (name, v) in [
                    ("gamma", &bn.gamma),
                    ("beta", &bn.beta),
                    ("running_mean", &bn.running_mean),
                    ("running_var", &bn.running_var),
                ] {
                    check_params(v.len(), bn.channels, name)?;
                }
                if bn.eps.is_nan() || bn.eps <= 0.0 {
                    return Err("batch-norm stabilizer must be > 0".into());
                }
                Ok(input.to_vec())
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool2d(p) => {
                if input.len() != 3 || p.kernel == 0 || p.stride == 0 {
                    return Err(format!("expected input [C, H, W], got {input:?}"));
                }
                if input[1] < p.kernel || input[2] < p.kernel {
                    return Err(format!("pool {} does not fit {input:?}", p.kernel));
                }
                Ok(vec![
                    input[0],
                    (input[1] - p.kernel) / p.stride + 1,
                    (input[2] - p.kernel) / p.stride + 1,
                ])
            }
            Layer::GlobalMaxPool => {
                if input.len() != 2 || input[0] == 0 {
                    return Err(format!("expected input [N, C], got {input:?}"));
                }
                Ok(vec![input[1]])
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Trainable parameter blobs in a fixed order (weight, bias / gamma, beta).
    pub fn params(&self) -> Vec<&[f32]> {
        match self {
            Layer::Linear(l) | Layer::SharedPointMlp(l) => vec![&l.weight, &l.bias],
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            Layer::BatchNorm2d(bn) => vec![&bn.gamma, &bn.beta],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f32]> {
        match self {
            Layer::Linear(l) | Layer::SharedPointMlp(l) => vec![&mut l.weight, &mut l.bias],
            Layer::Conv2d(c) => vec![&mut c.weight, &mut c.bias],
            Layer::BatchNorm2d(bn) => vec![&mut bn.gamma, &mut bn.beta],
            _ => Vec::new(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Batched forward pass. `x` must already have a valid per-sample shape.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> (Tensor, Cache) {
        let b = x.batch();
        let sample_shape = &x.shape()[1..];
        let out_shape = self
            .output_shape(sample_shape)
            .expect("network shapes are validated before the forward pass");
        let mut full_shape = vec![b];
        full_shape.extend_from_slice(&out_shape);
        match self {
            Layer::Linear(l) | Layer::SharedPointMlp(l) => (
                linear_forward(l, x.data(), &l.weight, Some(&l.bias), &full_shape),
                Cache::None,
            ),
            Layer::Conv2d(c) => (
                conv_forward(c, x, &c.weight, Some(&c.bias), &full_shape),
                Cache::None,
            ),
            Layer::BatchNorm2d(bn) => batchnorm_forward(bn, x, mode),
            Layer::Relu => (x.map(|v| v.max(0.0)), Cache::None),
            Layer::MaxPool2d(p) => maxpool_forward(p, x, &full_shape),
            Layer::GlobalMaxPool => global_maxpool_forward(x, &full_shape),
            Layer::Flatten => (
                x.clone().reshape(&full_shape).expect("same element count"),
                Cache::None,
            ),
        }
    }

    /// Batched backward pass. Accumulates parameter gradients into `grads`
    /// (one buffer per blob of [`Layer::params`]) and returns the input gradient
    /// when `need_input_grad` is set.
    pub fn backward(
        &self,
        x: &Tensor,
        cache: &Cache,
        grad_out: &Tensor,
        grads: &mut [Vec<f32>],
        need_input_grad: bool,
    ) -> Option<Tensor> {
        match self {
            Layer::Linear(l) | Layer::SharedPointMlp(l) => {
                let rows = x.len() / l.in_features;
                let (gw, rest) = grads.split_at_mut(1);
                gemm(
                    l.out_features,
                    rows,
                    l.in_features,
                    grad_out.data(),
                    true,
                    x.data(),
                    false,
                    &mut gw[0],
                    1.0,
                );
                let gb = &mut rest[0];
                for row in grad_out.data().chunks(l.out_features) {
                    for (g, &d) in gb.iter_mut().zip(row) {
                        *g += d;
                    }
                }
                need_input_grad.then(|| linear_backward_input(l, grad_out, &l.weight, x.shape()))
            }
            Layer::Conv2d(c) => {
                let (ckk, p) = conv_dims(c, x.shape());
                let mut cols = vec![0.0; ckk * p];
                let (gw, rest) = grads.split_at_mut(1);
                for s in 0..x.batch() {
                    im2col(c, x.sample(s), x.shape(), &mut cols);
                    let dy = grad_out.sample(s);
                    gemm(c.out_channels, p, ckk, dy, false, &cols, true, &mut gw[0], 1.0);
                    for (o, g) in rest[0].iter_mut().enumerate() {
                        *g += dy[o * p..(o + 1) * p].iter().sum::<f32>();
                    }
                }
                need_input_grad.then(|| conv_backward_input(c, grad_out, &c.weight, x.shape()))
            }
            Layer::BatchNorm2d(bn) => Some(batchnorm_backward(bn, x, cache, grad_out, grads))
                .filter(|_| need_input_grad),
            Layer::Relu => need_input_grad.then(|| {
                let mut g = grad_out.clone();
                for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
                    if xv <= 0.0 {
                        *gv = 0.0;
                    }
                }
                g
            }),
            Layer::MaxPool2d(_) | Layer::GlobalMaxPool => need_input_grad.then(|| {
                let Cache::Winners(idx) = cache else {
                    panic!("pooling backward without winner cache");
                };
                scatter_winners(idx, grad_out, x.shape())
            }),
            Layer::Flatten => need_input_grad.then(|| {
                grad_out
                    .clone()
                    .reshape(x.shape())
                    .expect("same element count")
            }),
        }
    }
}

fn check_params(got: usize, want: usize, name: &str) -> Result<(), String> {
    if got != want {
        return Err(format!("{name} has {got} values, expected {want}"));
    }
    Ok(())
}

/// `y = x · Wᵀ (+ b)` over every row of `x`; `weight` may differ from the
/// layer's own (LRP evaluates modified weights through the same path).
pub(crate) fn linear_forward(
    l: &Linear,
    x: &[f32],
    weight: &[f32],
    bias: Option<&[f32]>,
    out_shape: &[usize],
) -> Tensor {
    let rows = x.len() / l.in_features;
    let mut y = vec![0.0; rows * l.out_features];
    gemm(rows, l.in_features, l.out_features, x, false, weight, true, &mut y, 0.0);
    if let Some(b) = bias {
        for row in y.chunks_mut(l.out_features) {
            for (v, &bv) in row.iter_mut().zip(b) {
                *v += bv;
            }
        }
    }
    Tensor::new(out_shape.to_vec(), y).expect("linear output shape")
}

/// `dx = dy · W`, shaped like `in_shape`.
pub(crate) fn linear_backward_input(
    l: &Linear,
    grad_out: &Tensor,
    weight: &[f32],
    in_shape: &[usize],
) -> Tensor {
    let rows = grad_out.len() / l.out_features;
    let mut dx = vec![0.0; rows * l.in_features];
    gemm(
        rows,
        l.out_features,
        l.in_features,
        grad_out.data(),
        false,
        weight,
        false,
        &mut dx,
        0.0,
    );
    Tensor::new(in_shape.to_vec(), dx).expect("linear input shape")
}

/// `(C·k·k, H'·W')` for a batched conv input shape.
fn conv_dims(c: &Conv2d, in_shape: &[usize]) -> (usize, usize) {
    let (ho, wo) = c.out_hw(in_shape[2], in_shape[3]).expect("validated");
    (c.in_channels * c.kernel * c.kernel, ho * wo)
}

fn im2col(c: &Conv2d, x: &[f32], in_shape: &[usize], cols: &mut [f32]) {
    let (h, w) = (in_shape[2], in_shape[3]);
    let (ho, wo) = c.out_hw(h, w).expect("validated");
    let k = c.kernel;
    let p = ho * wo;
    for ch in 0..c.in_channels {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..ho {
                    let iy = (oy * c.stride + ki) as isize - c.padding as isize;
                    let line = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * c.stride + kj) as isize - c.padding as isize;
                        *v = if ix < 0 || ix >= w as isize {
                            0.0
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(c: &Conv2d, cols: &[f32], in_shape: &[usize], dx: &mut [f32]) {
    let (h, w) = (in_shape[2], in_shape[3]);
    let (ho, wo) = c.out_hw(h, w).expect("validated");
    let k = c.kernel;
    let p = ho * wo;
    dx.fill(0.0);
    for ch in 0..c.in_channels {
        let plane = &mut dx[ch * h * w..(ch + 1) * h * w];
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..ho {
                    let iy = (oy * c.stride + ki) as isize - c.padding as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..wo {
                        let ix = (ox * c.stride + kj) as isize - c.padding as isize;
                        if ix >= 0 && ix < w as isize {
                            plane[iy as usize * w + ix as usize] += src[oy * wo + ox];
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_forward(
    c: &Conv2d,
    x: &Tensor,
    weight: &[f32],
    bias: Option<&[f32]>,
    out_shape: &[usize],
) -> Tensor {
    let (ckk, p) = conv_dims(c, x.shape());
    let mut cols = vec![0.0; ckk * p];
    let mut y = Tensor::zeros(out_shape);
    for s in 0..x.batch() {
        im2col(c, x.sample(s), x.shape(), &mut cols);
        let ys = y.sample_mut(s);
        gemm(c.out_channels, ckk, p, weight, false, &cols, false, ys, 0.0);
        if let Some(b) = bias {
            for (o, &bv) in b.iter().enumerate() {
                for v in &mut ys[o * p..(o + 1) * p] {
                    *v += bv;
                }
            }
        }
    }
    y
}

pub(crate) fn conv_backward_input(
    c: &Conv2d,
    grad_out: &Tensor,
    weight: &[f32],
    in_shape: &[usize],
) -> Tensor {
    let (ckk, p) = conv_dims(c, in_shape);
    let mut dcols = vec![0.0; ckk * p];
    let mut dx = Tensor::zeros(in_shape);
    for s in 0..grad_out.batch() {
        gemm(
            ckk,
            c.out_channels,
            p,
            weight,
            true,
            grad_out.sample(s),
            false,
            &mut dcols,
            0.0,
        );
        col2im(c, &dcols, in_shape, dx.sample_mut(s));
    }
    dx
}

fn batchnorm_forward(bn: &BatchNorm2d, x: &Tensor, mode: Mode) -> (Tensor, Cache) {
    let b = x.batch();
    let c = bn.channels;
    let spatial = x.sample_len() / c;
    let count = b * spatial;
    let (mean, var) = match mode {
        Mode::Train => {
            let mut mean = vec![0.0f64; c];
            let mut sq = vec![0.0f64; c];
            for s in 0..b {
                let xs = x.sample(s);
                for ch in 0..c {
                    for &v in &xs[ch * spatial..(ch + 1) * spatial] {
                        mean[ch] += v as f64;
                        sq[ch] += (v as f64) * (v as f64);
                    }
                }
            }
            let n = count as f64;
            let mean: Vec<f64> = mean.iter().map(|m| m / n).collect();
            let var: Vec<f64> = sq
                .iter()
                .zip(&mean)
                .map(|(s, m)| (s / n - m * m).max(0.0))
                .collect();
            (
                mean.iter().map(|&m| m as f32).collect::<Vec<_>>(),
                var.iter().map(|&v| v as f32).collect::<Vec<_>>(),
            )
        }
        Mode::Eval => (bn.running_mean.clone(), bn.running_var.clone()),
    };
    let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + bn.eps).sqrt()).collect();
    let mut xhat = vec![0.0; x.len()];
    let mut y = Tensor::zeros(x.shape());
    for s in 0..b {
        let xs = x.sample(s);
        let off = s * x.sample_len();
        let ys = y.sample_mut(s);
        for ch in 0..c {
            for i in ch * spatial..(ch + 1) * spatial {
                let h = (xs[i] - mean[ch]) * inv_std[ch];
                xhat[off + i] = h;
                ys[i] = bn.gamma[ch] * h + bn.beta[ch];
            }
        }
    }
    (
        y,
        Cache::BatchNorm {
            xhat,
            inv_std,
            batch_mean: mean,
            batch_var: var,
            count,
            mode,
        },
    )
}

fn batchnorm_backward(
    bn: &BatchNorm2d,
    x: &Tensor,
    cache: &Cache,
    grad_out: &Tensor,
    grads: &mut [Vec<f32>],
) -> Tensor {
    let Cache::BatchNorm {
        xhat,
        inv_std,
        count,
        mode,
        ..
    } = cache
    else {
        panic!("batch-norm backward without its cache");
    };
    let c = bn.channels;
    let spatial = x.sample_len() / c;
    let mut dgamma = vec![0.0f64; c];
    let mut dbeta = vec![0.0f64; c];
    for s in 0..x.batch() {
        let dy = grad_out.sample(s);
        let off = s * x.sample_len();
        for ch in 0..c {
            for i in ch * spatial..(ch + 1) * spatial {
                dgamma[ch] += (dy[i] * xhat[off + i]) as f64;
                dbeta[ch] += dy[i] as f64;
            }
        }
    }
    for ch in 0..c {
        grads[0][ch] += dgamma[ch] as f32;
        grads[1][ch] += dbeta[ch] as f32;
    }
    let mut dx = Tensor::zeros(x.shape());
    let n = *count as f32;
    for s in 0..x.batch() {
        let dy = grad_out.sample(s);
        let off = s * x.sample_len();
        let dxs = dx.sample_mut(s);
        for ch in 0..c {
            let scale = bn.gamma[ch] * inv_std[ch];
            for i in ch * spatial..(ch + 1) * spatial {
                dxs[i] = match mode {
                    Mode::Eval => scale * dy[i],
                    Mode::Train => {
                        scale / n
                            * (n * dy[i]
                                - dbeta[ch] as f32
                                - xhat[off + i] * dgamma[ch] as f32)
                    }
                };
            }
        }
    }
    dx
}

fn maxpool_forward(p: &MaxPool2d, x: &Tensor, out_shape: &[usize]) -> (Tensor, Cache) {
    let (c, h, w) = (x.shape()[1], x.shape()[2], x.shape()[3]);
    let (ho, wo) = (out_shape[2], out_shape[3]);
    let mut y = Tensor::zeros(out_shape);
    let mut winners = Vec::with_capacity(y.len());
    for s in 0..x.batch() {
        let xs = x.sample(s);
        let ys = y.sample_mut(s);
        for ch in 0..c {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = usize::MAX;
                    for ki in 0..p.kernel {
                        for kj in 0..p.kernel {
                            let idx = ch * h * w + (oy * p.stride + ki) * w + ox * p.stride + kj;
                            if best == usize::MAX || xs[idx] > xs[best] {
                                best = idx;
                            }
                        }
                    }
                    ys[(ch * ho + oy) * wo + ox] = xs[best];
                    winners.push(best as u32);
                }
            }
        }
    }
    (y, Cache::Winners(winners))
}

fn global_maxpool_forward(x: &Tensor, out_shape: &[usize]) -> (Tensor, Cache) {
    let (n, c) = (x.shape()[1], x.shape()[2]);
    let mut y = Tensor::zeros(out_shape);
    let mut winners = vec![0u32; x.batch() * c];
    for s in 0..x.batch() {
        let xs = x.sample(s);
        let ys = y.sample_mut(s);
        let ws = &mut winners[s * c..(s + 1) * c];
        ys.copy_from_slice(&xs[..c]);
        for point in 1..n {
            let row = &xs[point * c..(point + 1) * c];
            for ch in 0..c {
                if row[ch] > ys[ch] {
                    ys[ch] = row[ch];
                    ws[ch] = point as u32;
                }
            }
        }
        for (ch, wv) in ws.iter_mut().enumerate() {
            *wv = *wv * c as u32 + ch as u32;
        }
    }
    (y, Cache::Winners(winners))
}

/// Routes each pooled value back to its winning input position.
pub(crate) fn scatter_winners(winners: &[u32], out: &Tensor, in_shape: &[usize]) -> Tensor {
    let mut dx = Tensor::zeros(in_shape);
    let per = out.sample_len();
    for s in 0..out.batch() {
        let src = out.sample(s);
        let dst = dx.sample_mut(s);
        for (j, &v) in src.iter().enumerate() {
            dst[winners[s * per + j] as usize] += v;
        }
    }
    dx
}
