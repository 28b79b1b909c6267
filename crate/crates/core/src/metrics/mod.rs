//! Accuracy, relevance rank accuracy, flipping curves and channel-relevance AUC.

pub mod channels;
pub mod csv;
pub mod flipping;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Network;
use crate::tensor::Tensor;

pub use channels::{
    auc, channel_relevance_auc, relative_auc_diff, ChannelMass, ChannelRelevanceProfile,
    ChannelSums, LayerProfile,
};
pub use flipping::{
    descending_order, flipping_curve, pixel_flipping, point_flipping, random_order, FlipUnit,
    FlippingCurve,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AccuracyMode {
    /// Correct predictions over all samples.
    Micro,
    /// Mean of per-class accuracies over the classes present in `labels`.
    Macro,
}

pub fn accuracy(predictions: &[usize], labels: &[usize], mode: AccuracyMode) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("accuracy of an empty set".into()));
    }
    match mode {
        AccuracyMode::Micro => {
            let correct = predictions.iter().zip(labels).filter(|(p, l)| p == l).count();
            Ok(correct as f64 / labels.len() as f64)
        }
        AccuracyMode::Macro => {
            let classes = labels.iter().max().map_or(0, |m| m + 1);
            let mut total = vec![0usize; classes];
            let mut correct = vec![0usize; classes];
            for (&p, &l) in predictions.iter().zip(labels) {
                total[l] += 1;
                if p == l {
                    correct[l] += 1;
                }
            }
            let per_class: Vec<f64> = total
                .iter()
                .zip(&correct)
                .filter(|(&t, _)| t > 0)
                .map(|(&t, &c)| c as f64 / t as f64)
                .collect();
            Ok(per_class.iter().sum::<f64>() / per_class.len() as f64)
        }
    }
}

/// Inference-mode predictions for a large set, `batch_size` samples at a time.
pub fn predict_batched(net: &Network, inputs: &Tensor, batch_size: usize) -> Result<Vec<usize>> {
    let m = inputs.batch();
    let step = batch_size.max(1);
    let mut out = Vec::with_capacity(m);
    for start in (0..m).step_by(step) {
        let idx: Vec<usize> = (start..(start + step).min(m)).collect();
        out.extend(net.predict(&inputs.select(&idx))?);
    }
    Ok(out)
}

/// Binary `H × W` segmentation mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundTruthMask {
    pub height: usize,
    pub width: usize,
    pub mask: Vec<bool>,
}

impl GroundTruthMask {
    pub fn new(height: usize, width: usize, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != height * width {
            return Err(Error::Shape(format!(
                "{} mask entries for {height}x{width}",
                mask.len()
            )));
        }
        Ok(GroundTruthMask { height, width, mask })
    }

    pub fn positives(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Indices of the `k` largest values; ties go to the lowest index.
pub fn top_k(values: &[f32], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    // Adding +0.0 folds -0.0 into 0.0 so signed zeros tie.
    idx.sort_by(|&a, &b| (values[b] + 0.0).total_cmp(&(values[a] + 0.0)).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Relevance rank accuracy: share of the `K = |GT|` most relevant pixels that
/// fall inside the mask.
pub fn rra(map: &[f32], gt: &GroundTruthMask) -> Result<f64> {
    if map.len() != gt.mask.len() {
        return Err(Error::Shape(format!(
            "relevance map of {} values for a {}x{} mask",
            map.len(),
            gt.height,
            gt.width
        )));
    }
    if let Some(i) = map.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("relevance map entry {i}")));
    }
    let k = gt.positives();
    if k == 0 {
        return Err(Error::InvalidArgument("ground-truth mask is empty".into()));
    }
    let hits = top_k(map, k).into_iter().filter(|&i| gt.mask[i]).count();
    Ok(hits as f64 / k as f64)
}
