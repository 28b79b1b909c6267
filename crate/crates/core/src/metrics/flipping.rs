//! Accuracy decay under ordered removal of pixels or points.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{accuracy, predict_batched, top_k, AccuracyMode};
use crate::error::{Error, Result};
use crate::nn::Network;
use crate::tensor::Tensor;

/// What one removal unit is and what it is replaced with.
#[derive(Clone, Debug, PartialEq)]
pub enum FlipUnit {
    /// A pixel across all channels of a `[C, H, W]` image, set to the
    /// per-channel `fill` (the dataset mean in normalized space).
    Pixel { fill: Vec<f32> },
    /// A point of an `[N, 3]` cloud, moved to the origin.
    Point,
}

impl FlipUnit {
    fn units(&self, sample_shape: &[usize]) -> Result<usize> {
        match (self, sample_shape) {
            (FlipUnit::Pixel { fill }, [c, h, w]) if fill.len() == *c => Ok(h * w),
            (FlipUnit::Point, [n, 3]) => Ok(*n),
            _ => Err(Error::Shape(format!(
                "flip unit {self:?} does not fit samples of shape {sample_shape:?}"
            ))),
        }
    }

    fn remove(&self, sample: &mut [f32], unit: usize, plane: usize) {
        match self {
            FlipUnit::Pixel { fill } => {
                for (c, &mu) in fill.iter().enumerate() {
                    sample[c * plane + unit] = mu;
                }
            }
            FlipUnit::Point => sample[3 * unit..3 * unit + 3].fill(0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlippingCurve {
    /// Units removed per step.
    pub step: usize,
    /// Units per sample.
    pub total: usize,
    /// `(fraction removed, accuracy)`, starting at fraction 0.
    pub points: Vec<(f64, f64)>,
}

impl FlippingCurve {
    /// Mean accuracy over all recorded fractions `<= max_fraction`.
    pub fn mean_accuracy_up_to(&self, max_fraction: f64) -> f64 {
        let acc: Vec<f64> = self
            .points
            .iter()
            .filter(|(f, _)| *f <= max_fraction + 1e-12)
            .map(|&(_, a)| a)
            .collect();
        acc.iter().sum::<f64>() / acc.len() as f64
    }
}

/// Removal order from most to least relevant; ties go to the lowest index.
pub fn descending_order(relevance: &[f32]) -> Vec<usize> {
    top_k(relevance, relevance.len())
}

/// A uniformly random removal order, the baseline for relevance orders.
pub fn random_order(n: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

/// Removes `step` units per sample at a time, following each sample's
/// `orders` entry, and records micro accuracy after every step.
pub fn flipping_curve(
    net: &Network,
    inputs: &Tensor,
    labels: &[usize],
    orders: &[Vec<usize>],
    unit: &FlipUnit,
    step: usize,
    batch_size: usize,
) -> Result<FlippingCurve> {
    let m = inputs.batch();
    let shape = &inputs.shape()[1..];
    let n = unit.units(shape)?;
    if step == 0 || n % step != 0 {
        return Err(Error::InvalidArgument(format!(
            "flipping step {step} must divide the {n} units per sample"
        )));
    }
    if labels.len() != m || orders.len() != m {
        return Err(Error::Shape(format!(
            "{m} samples, {} labels and {} removal orders",
            labels.len(),
            orders.len()
        )));
    }
    for (s, order) in orders.iter().enumerate() {
        let mut seen = vec![false; n];
        for &u in order {
            if u >= n || std::mem::replace(&mut seen[u], true) {
                return Err(Error::InvalidArgument(format!(
                    "removal order of sample {s} is not a permutation of 0..{n}"
                )));
            }
        }
        if order.len() != n {
            return Err(Error::InvalidArgument(format!(
                "removal order of sample {s} has {} entries, expected {n}",
                order.len()
            )));
        }
    }
    let plane = if shape.len() == 3 { shape[1] * shape[2] } else { 0 };

    let mut work = inputs.clone();
    let mut points = Vec::with_capacity(n / step + 1);
    for k in 0..=n / step {
        if k > 0 {
            for (s, order) in orders.iter().enumerate() {
                let sample = work.sample_mut(s);
                for &u in &order[(k - 1) * step..k * step] {
                    unit.remove(sample, u, plane);
                }
            }
        }
        let preds = predict_batched(net, &work, batch_size)?;
        let acc = accuracy(&preds, labels, AccuracyMode::Micro)?;
        points.push(((k * step) as f64 / n as f64, acc));
    }
    Ok(FlippingCurve { step, total: n, points })
}

fn orders_from(relevance: &Tensor, m: usize) -> Result<Vec<Vec<usize>>> {
    if relevance.batch() != m {
        return Err(Error::Shape(format!(
            "relevance for {} samples, {m} inputs",
            relevance.batch()
        )));
    }
    Ok((0..m).map(|s| descending_order(relevance.sample(s))).collect())
}

/// Point flipping: points removed from most to least relevant.
/// `relevance` is `[M, N]`.
pub fn point_flipping(
    net: &Network,
    clouds: &Tensor,
    labels: &[usize],
    relevance: &Tensor,
    step: usize,
    batch_size: usize,
) -> Result<FlippingCurve> {
    let orders = orders_from(relevance, clouds.batch())?;
    flipping_curve(net, clouds, labels, &orders, &FlipUnit::Point, step, batch_size)
}

/// Pixel flipping with per-channel `fill`. `relevance` is `[M, H, W]`.
pub fn pixel_flipping(
    net: &Network,
    images: &Tensor,
    labels: &[usize],
    relevance: &Tensor,
    fill: &[f32],
    step: usize,
    batch_size: usize,
) -> Result<FlippingCurve> {
    let orders = orders_from(relevance, images.batch())?;
    let unit = FlipUnit::Pixel { fill: fill.to_vec() };
    flipping_curve(net, images, labels, &orders, &unit, step, batch_size)
}
