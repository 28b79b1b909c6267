use std::sync::Arc;

use super::rules::{Composite, LrpRule};
use crate::error::{Error, Result};
use crate::nn::layer::{
    conv_backward_input, conv_forward, linear_backward_input, linear_forward, scatter_winners,
};
use crate::nn::{Cache, Conv2d, Layer, Linear, Mode, Network};
use crate::tensor::Tensor;

/// Stabilizer used by the γ and box rules.
const STABILIZER: f32 = 1e-6;

/// Result of one relevance pass over a batch.
#[derive(Clone, Debug)]
pub struct RelevanceRecord {
    /// Relevance arriving at the input of each layer; entry 0 is the model input.
    /// Layers that pass relevance through unchanged share one buffer.
    pub layer_relevances: Vec<Arc<Tensor>>,
    /// Initial relevance over the logits: the target logit, zeros elsewhere.
    pub output_relevance: Tensor,
    pub targets: Vec<usize>,
    /// Target logit per sample (pre-softmax).
    pub scores: Vec<f32>,
    pub logits: Tensor,
}

impl RelevanceRecord {
    /// Input relevance, same shape as the (batched) model input.
    pub fn input(&self) -> &Tensor {
        &self.layer_relevances[0]
    }

    /// Relevance at the output of layer `i`.
    pub fn output_of(&self, i: usize) -> &Tensor {
        self.layer_relevances
            .get(i + 1)
            .map(|r| r.as_ref())
            .unwrap_or(&self.output_relevance)
    }

    pub fn pixel_relevance(&self) -> Result<Tensor> {
        pixel_relevance(self.input())
    }

    pub fn point_relevance(&self) -> Result<Tensor> {
        point_relevance(self.input())
    }
}

enum Affine<'a> {
    Dense(&'a Linear),
    Conv(&'a Conv2d),
}

impl Affine<'_> {
    fn weight(&self) -> &[f32] {
        match self {
            Affine::Dense(l) => &l.weight,
            Affine::Conv(c) => &c.weight,
        }
    }

    /// Bias-free forward with substitute weights.
    fn forward(&self, x: &Tensor, w: &[f32], out_shape: &[usize]) -> Tensor {
        match self {
            Affine::Dense(l) => linear_forward(l, x.data(), w, None, out_shape),
            Affine::Conv(c) => conv_forward(c, x, w, None, out_shape),
        }
    }

    /// Transposed map of [`Affine::forward`].
    fn backward(&self, g: &Tensor, w: &[f32], in_shape: &[usize]) -> Tensor {
        match self {
            Affine::Dense(l) => linear_backward_input(l, g, w, in_shape),
            Affine::Conv(c) => conv_backward_input(c, g, w, in_shape),
        }
    }

    /// Broadcasts per-channel bounds to a batched input shape.
    fn broadcast(&self, bounds: &[f32], in_shape: &[usize], layer: usize) -> Result<Tensor> {
        let sample: &[usize] = &in_shape[1..];
        let per: usize = sample.iter().product();
        let channel_of: Box<dyn Fn(usize) -> usize> = match (self, bounds.len()) {
            (_, 1) => Box::new(|_| 0),
            (Affine::Conv(c), n) if n == c.in_channels => {
                let plane = per / c.in_channels;
                Box::new(move |i| i / plane)
            }
            (Affine::Dense(l), n) if n == l.in_features => {
                let width = l.in_features;
                Box::new(move |i| i % width)
            }
            _ => {
                return Err(Error::Config(format!(
                    "box bounds of length {} do not match the input channels of layer {layer}",
                    bounds.len()
                )))
            }
        };
        Ok(Tensor::from_fn(in_shape, |i| bounds[channel_of(i % per)]))
    }
}

fn stabilized_ratio(r: &Tensor, z: &Tensor, eps: f32) -> Tensor {
    let mut s = r.clone();
    for (sv, &zv) in s.data_mut().iter_mut().zip(z.data()) {
        let sign = if zv >= 0.0 { 1.0 } else { -1.0 };
        *sv /= zv + eps * sign;
    }
    s
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = a.clone();
    for (o, &bv) in out.data_mut().iter_mut().zip(b.data()) {
        *o *= bv;
    }
    out
}

fn affine_relevance(
    aff: &Affine,
    rule: &LrpRule,
    x: &Tensor,
    r_out: &Tensor,
    layer: usize,
) -> Result<Tensor> {
    let w = aff.weight();
    let out_shape = r_out.shape();
    let in_shape = x.shape();
    let rel = match rule {
        LrpRule::Epsilon { epsilon } => {
            let z = aff.forward(x, w, out_shape);
            let s = stabilized_ratio(r_out, &z, *epsilon);
            hadamard(x, &aff.backward(&s, w, in_shape))
        }
        LrpRule::Gamma { gamma } => {
            let wg: Vec<f32> = w.iter().map(|&v| v + gamma * v.max(0.0)).collect();
            let z = aff.forward(x, &wg, out_shape);
            let s = stabilized_ratio(r_out, &z, STABILIZER);
            hadamard(x, &aff.backward(&s, &wg, in_shape))
        }
        LrpRule::ZPlus => {
            let wp: Vec<f32> = w.iter().map(|&v| v.max(0.0)).collect();
            let xp = x.map(|v| v.max(0.0));
            let mut z = aff.forward(&xp, &wp, out_shape);
            // Inputs behind a ReLU are never negative; skip the x⁻w⁻ half then.
            let has_negative = x.data().iter().any(|&v| v < 0.0);
            let (wn, xn) = if has_negative {
                let wn: Vec<f32> = w.iter().map(|&v| v.min(0.0)).collect();
                let xn = x.map(|v| v.min(0.0));
                let zn = aff.forward(&xn, &wn, out_shape);
                for (a, b) in z.data_mut().iter_mut().zip(zn.data()) {
                    *a += b;
                }
                (wn, Some(xn))
            } else {
                (Vec::new(), None)
            };
            let mut s = r_out.clone();
            for (sv, &zv) in s.data_mut().iter_mut().zip(z.data()) {
                *sv = if zv > 0.0 { *sv / zv } else { 0.0 };
            }
            let mut rel = hadamard(&xp, &aff.backward(&s, &wp, in_shape));
            if let Some(xn) = xn {
                let neg = hadamard(&xn, &aff.backward(&s, &wn, in_shape));
                for (a, b) in rel.data_mut().iter_mut().zip(neg.data()) {
                    *a += b;
                }
            }
            rel
        }
        LrpRule::Flat => {
            let ones_w = vec![1.0; w.len()];
            let ones_x = Tensor::full(in_shape, 1.0);
            let fan_in = aff.forward(&ones_x, &ones_w, out_shape);
            let mut s = r_out.clone();
            for (sv, &n) in s.data_mut().iter_mut().zip(fan_in.data()) {
                *sv = if n > 0.0 { *sv / n } else { 0.0 };
            }
            aff.backward(&s, &ones_w, in_shape)
        }
        LrpRule::Box { low, high } => {
            let l = aff.broadcast(low, in_shape, layer)?;
            let h = aff.broadcast(high, in_shape, layer)?;
            let wp: Vec<f32> = w.iter().map(|&v| v.max(0.0)).collect();
            let wn: Vec<f32> = w.iter().map(|&v| v.min(0.0)).collect();
            let mut z = aff.forward(x, w, out_shape);
            let zl = aff.forward(&l, &wp, out_shape);
            let zh = aff.forward(&h, &wn, out_shape);
            for ((a, b), c) in z.data_mut().iter_mut().zip(zl.data()).zip(zh.data()) {
                *a -= b + c;
            }
            let s = stabilized_ratio(r_out, &z, STABILIZER);
            let mut rel = hadamard(x, &aff.backward(&s, w, in_shape));
            let rl = hadamard(&l, &aff.backward(&s, &wp, in_shape));
            let rh = hadamard(&h, &aff.backward(&s, &wn, in_shape));
            for ((a, b), c) in rel.data_mut().iter_mut().zip(rl.data()).zip(rh.data()) {
                *a -= b + c;
            }
            rel
        }
    };
    Ok(rel)
}

/// Layer-wise relevance propagation for a batch.
///
/// Relevance starts at each sample's target logit and is pushed back layer by
/// layer: parametrized layers use the rule resolved from `composite`, ReLU and
/// flatten pass relevance through unchanged, and pooling layers route it to the
/// winning input. The network must already be canonized.
pub fn attribute(
    net: &Network,
    input: &Tensor,
    targets: &[usize],
    composite: &Composite,
) -> Result<RelevanceRecord> {
    if let Some(i) = net
        .layers()
        .iter()
        .position(|l| matches!(l, Layer::BatchNorm2d(_)))
    {
        return Err(Error::InvalidArgument(format!(
            "batch norm at layer {i}: canonize the network before attribution"
        )));
    }
    let rules = composite.resolve(net)?;
    let trace = net.forward(input, Mode::Eval)?;
    let b = trace.logits.batch();
    if targets.len() != b {
        return Err(Error::Shape(format!("{} targets for a batch of {b}", targets.len())));
    }
    let classes = net.classes();
    if let Some(&t) = targets.iter().find(|&&t| t >= classes) {
        return Err(Error::InvalidArgument(format!("target class {t} outside [0, {classes})")));
    }

    let mut r0 = Tensor::zeros(trace.logits.shape());
    let mut scores = Vec::with_capacity(b);
    for (s, &t) in targets.iter().enumerate() {
        let score = trace.logits.sample(s)[t];
        r0.sample_mut(s)[t] = score;
        scores.push(score);
    }
    let output_relevance = r0.clone();

    let mut r = Arc::new(r0);
    let mut layer_relevances = vec![Arc::clone(&r); net.layers().len()];
    for (i, layer) in net.layers().iter().enumerate().rev() {
        let x = &trace.inputs[i];
        let next = match layer {
            Layer::Linear(l) | Layer::SharedPointMlp(l) => {
                let rule = rules[i].as_ref().ok_or(Error::MissingRule(i))?;
                affine_relevance(&Affine::Dense(l), rule, x, &r, i)?
            }
            Layer::Conv2d(c) => {
                let rule = rules[i].as_ref().ok_or(Error::MissingRule(i))?;
                affine_relevance(&Affine::Conv(c), rule, x, &r, i)?
            }
            Layer::Relu => {
                layer_relevances[i] = Arc::clone(&r);
                continue;
            }
            Layer::Flatten => r.as_ref().clone().reshape(x.shape())?,
            Layer::MaxPool2d(_) | Layer::GlobalMaxPool => {
                let Cache::Winners(w) = &trace.caches[i] else {
                    unreachable!("pooling layers always cache winners");
                };
                scatter_winners(w, &r, x.shape())
            }
            Layer::BatchNorm2d(_) => unreachable!("rejected above"),
        };
        if !next.is_finite() {
            return Err(Error::NonFiniteRelevance(i));
        }
        r = Arc::new(next);
        layer_relevances[i] = Arc::clone(&r);
    }

    Ok(RelevanceRecord {
        layer_relevances,
        output_relevance,
        targets: targets.to_vec(),
        scores,
        logits: trace.logits,
    })
}

/// Channel sum of an image relevance: `[B, C, H, W] → [B, H, W]` (or unbatched).
pub fn pixel_relevance(rel: &Tensor) -> Result<Tensor> {
    let shape = rel.shape();
    let (b, c, h, w) = match *shape {
        [c, h, w] => (1, c, h, w),
        [b, c, h, w] => (b, c, h, w),
        _ => {
            return Err(Error::Shape(format!(
                "pixel relevance needs [C, H, W] input relevance, got {shape:?}"
            )))
        }
    };
    let plane = h * w;
    let mut out = vec![0.0f32; b * plane];
    for s in 0..b {
        let src = &rel.data()[s * c * plane..(s + 1) * c * plane];
        let dst = &mut out[s * plane..(s + 1) * plane];
        for ch in 0..c {
            for (d, &v) in dst.iter_mut().zip(&src[ch * plane..(ch + 1) * plane]) {
                *d += v;
            }
        }
    }
    let out_shape = if shape.len() == 3 { vec![h, w] } else { vec![b, h, w] };
    Tensor::new(out_shape, out)
}

/// Coordinate sum of a point-cloud relevance: `[B, N, 3] → [B, N]` (or unbatched).
pub fn point_relevance(rel: &Tensor) -> Result<Tensor> {
    let shape = rel.shape();
    let ok = matches!(*shape, [_, 3] | [_, _, 3]);
    if !ok {
        return Err(Error::Shape(format!(
            "point relevance needs [N, 3] input relevance, got {shape:?}"
        )));
    }
    let data: Vec<f32> = rel.data().chunks(3).map(|p| p[0] + p[1] + p[2]).collect();
    Tensor::new(shape[..shape.len() - 1].to_vec(), data)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::lrp::{canonize, Purpose};
    use crate::nn::{build_pointnet_lite, build_small_cnn};

    fn single_rule(rule: LrpRule) -> Composite {
        Composite {
            purpose: Purpose::Evaluation,
            first: None,
            conv: None,
            dense: None,
            default: Some(rule),
            overrides: BTreeMap::new(),
        }
    }

    fn dense(weights: &[f32]) -> Network {
        let mut l = Linear::zeros(2, 2);
        l.weight[..2].copy_from_slice(weights);
        Network::new(vec![2], 2, vec![Layer::Linear(l)]).unwrap()
    }

    #[test]
    fn epsilon_splits_by_contribution() {
        let net = dense(&[1.0, 2.0]);
        let x = Tensor::new(vec![1, 2], vec![3.0, 1.0]).unwrap();
        let rec = attribute(&net, &x, &[0], &single_rule(LrpRule::Epsilon { epsilon: 1e-9 })).unwrap();
        assert_eq!(rec.scores, vec![5.0]);
        let r = rec.input().data();
        assert!((r[0] - 3.0).abs() < 1e-5 && (r[1] - 2.0).abs() < 1e-5, "{r:?}");
    }

    #[test]
    fn zplus_ignores_negative_contributions() {
        let net = dense(&[1.0, -2.0]);
        let x = Tensor::new(vec![1, 2], vec![3.0, 1.0]).unwrap();
        let rec = attribute(&net, &x, &[0], &single_rule(LrpRule::ZPlus)).unwrap();
        assert_eq!(rec.input().data(), &[1.0, 0.0]);
    }

    #[test]
    fn flat_spreads_uniformly() {
        let net = dense(&[1.0, 2.0]);
        let x = Tensor::new(vec![1, 2], vec![3.0, 1.0]).unwrap();
        let rec = attribute(&net, &x, &[0], &single_rule(LrpRule::Flat)).unwrap();
        assert_eq!(rec.input().data(), &[2.5, 2.5]);
    }

    #[test]
    fn epsilon_conserves_through_cnn() {
        let net = canonize(&build_small_cnn([1, 12, 12], 4, 3).unwrap()).unwrap();
        let x = Tensor::from_fn(&[3, 1, 12, 12], |i| ((i * 37 % 23) as f32 - 11.0) / 11.0);
        let rec = attribute(&net, &x, &[0, 1, 3], &single_rule(LrpRule::Epsilon { epsilon: 1e-6 })).unwrap();
        for s in 0..3 {
            let total: f64 = rec.input().sample(s).iter().map(|&v| v as f64).sum();
            let score = rec.scores[s] as f64;
            assert!((total - score).abs() <= 1e-3 * score.abs().max(1.0), "{total} vs {score}");
        }
    }

    #[test]
    fn batch_matches_single_samples() {
        let net = build_pointnet_lite(64, 3, 5).unwrap();
        let x = Tensor::from_fn(&[4, 64, 3], |i| ((i * 13 % 17) as f32 - 8.0) / 8.0);
        let targets = [2, 0, 1, 2];
        let composite = Composite::augmentation_zplus();
        let all = attribute(&net, &x, &targets, &composite).unwrap();
        for s in 0..4 {
            let one = attribute(&net, &x.select(&[s]), &targets[s..=s], &composite).unwrap();
            for (a, b) in one.input().data().iter().zip(all.input().sample(s)) {
                assert!((a - b).abs() <= 1e-5 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn relu_layers_share_relevance() {
        let net = build_pointnet_lite(64, 2, 0).unwrap();
        let x = Tensor::full(&[1, 64, 3], 0.5);
        let rec = attribute(&net, &x, &[1], &Composite::evaluation()).unwrap();
        let i = net.layers().iter().position(|l| matches!(l, Layer::Relu)).unwrap();
        assert!(Arc::ptr_eq(&rec.layer_relevances[i], &rec.layer_relevances[i + 1]));
    }

    #[test]
    fn rejects_uncanonized_and_bad_targets() {
        let net = build_small_cnn([1, 8, 8], 2, 0).unwrap();
        let x = Tensor::zeros(&[1, 1, 8, 8]);
        assert!(matches!(
            attribute(&net, &x, &[0], &Composite::default()),
            Err(Error::InvalidArgument(_))
        ));
        let net = canonize(&net).unwrap();
        assert!(attribute(&net, &x, &[2], &Composite::default()).is_err());
        assert!(matches!(attribute(&net, &x, &[0, 1], &Composite::default()), Err(Error::Shape(_))));
    }

    #[test]
    fn channel_and_coordinate_sums() {
        let rel = Tensor::from_fn(&[2, 2, 2], |i| i as f32);
        let px = pixel_relevance(&rel).unwrap();
        assert_eq!(px.shape(), &[2, 2]);
        assert_eq!(px.data(), &[4.0, 6.0, 8.0, 10.0]);
        let pts = Tensor::from_fn(&[1, 2, 3], |i| i as f32);
        let pr = point_relevance(&pts).unwrap();
        assert_eq!(pr.shape(), &[1, 2]);
        assert_eq!(pr.data(), &[3.0, 12.0]);
        assert!(point_relevance(&Tensor::zeros(&[2, 4])).is_err());
        assert!(pixel_relevance(&Tensor::zeros(&[4])).is_err());
    }
}
