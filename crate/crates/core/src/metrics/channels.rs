//! How concentrated relevance is across the channels of each layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lrp::{attribute, Composite, RelevanceRecord};
use crate::nn::{Layer, Network};
use crate::tensor::Tensor;

/// Which relevance counts towards a channel's share.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMass {
    #[default]
    Positive,
    Signed,
}

/// Per-channel relevance totals at the output of every parametrized layer.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChannelSums {
    /// `(layer index, per-channel sum)`.
    pub layers: Vec<(usize, Vec<f64>)>,
}

fn channel_layout(layer: &Layer, shape: &[usize]) -> Option<(usize, usize)> {
    // (channels, inner stride) for a batched relevance tensor.
    match (layer, shape) {
        (Layer::Conv2d(_), [_, c, h, w]) => Some((*c, h * w)),
        (Layer::Linear(_), [_, f]) => Some((*f, 1)),
        (Layer::SharedPointMlp(_), [_, _, f]) => Some((*f, 1)),
        _ => None,
    }
}

impl ChannelSums {
    pub fn accumulate(&mut self, net: &Network, record: &RelevanceRecord, mass: ChannelMass) -> Result<()> {
        let mut slot = 0;
        for (i, layer) in net.layers().iter().enumerate() {
            if !layer.kind().is_parametrized() {
                continue;
            }
            let rel: &Tensor = record.output_of(i);
            let (c, stride) = channel_layout(layer, rel.shape()).ok_or_else(|| {
                Error::Shape(format!(
                    "unexpected relevance shape {:?} at layer {i}",
                    rel.shape()
                ))
            })?;
            if slot == self.layers.len() {
                self.layers.push((i, vec![0.0; c]));
            }
            let sums = &mut self.layers[slot].1;
            for (j, &v) in rel.data().iter().enumerate() {
                let v = match mass {
                    ChannelMass::Positive => v.max(0.0),
                    ChannelMass::Signed => v,
                };
                sums[(j / stride) % c] += v as f64;
            }
            slot += 1;
        }
        Ok(())
    }

    pub fn profile(&self, net: &Network) -> ChannelRelevanceProfile {
        let layers = self
            .layers
            .iter()
            .map(|(i, sums)| {
                let mut sorted = sums.clone();
                sorted.sort_by(|a, b| b.total_cmp(a));
                let first = sorted.first().copied().unwrap_or(0.0);
                let (normalized, auc_value) = if first > 0.0 {
                    let n: Vec<f64> = sorted.iter().map(|v| v / first).collect();
                    let a = auc(&n);
                    (n, Some(a))
                } else {
                    (Vec::new(), None)
                };
                LayerProfile {
                    layer: *i,
                    kind: net.layers()[*i].kind().name().to_string(),
                    channels: sums.len(),
                    normalized,
                    auc: auc_value,
                }
            })
            .collect();
        ChannelRelevanceProfile { layers }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerProfile {
    pub layer: usize,
    pub kind: String,
    pub channels: usize,
    /// Channel shares sorted descending and divided by the largest; empty
    /// when the layer received no relevance.
    pub normalized: Vec<f64>,
    /// `None` when the layer's relevance is all zero.
    pub auc: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelRelevanceProfile {
    pub layers: Vec<LayerProfile>,
}

/// Trapezoidal area under `normalized` over channel positions spread evenly
/// on `[0, 1]`. A single channel has area 1.
pub fn auc(normalized: &[f64]) -> f64 {
    match normalized.len() {
        0 => 0.0,
        1 => normalized[0],
        n => {
            let dx = 1.0 / (n - 1) as f64;
            normalized.windows(2).map(|p| 0.5 * (p[0] + p[1]) * dx).sum()
        }
    }
}

/// Attributes every sample against its label and builds the profile.
/// The network must already be canonized.
pub fn channel_relevance_auc(
    net: &Network,
    inputs: &Tensor,
    labels: &[usize],
    composite: &Composite,
    mass: ChannelMass,
    batch_size: usize,
) -> Result<ChannelRelevanceProfile> {
    let m = inputs.batch();
    if labels.len() != m {
        return Err(Error::Shape(format!("{} labels for {m} samples", labels.len())));
    }
    let step = batch_size.max(1);
    let mut sums = ChannelSums::default();
    for start in (0..m).step_by(step) {
        let idx: Vec<usize> = (start..(start + step).min(m)).collect();
        let record = attribute(net, &inputs.select(&idx), &labels[start..start + idx.len()], composite)?;
        sums.accumulate(net, &record, mass)?;
    }
    Ok(sums.profile(net))
}

/// `(auc − baseline) / baseline` per layer; `None` where either side is missing.
pub fn relative_auc_diff(
    profile: &ChannelRelevanceProfile,
    baseline: &ChannelRelevanceProfile,
) -> Vec<(usize, Option<f64>)> {
    profile
        .layers
        .iter()
        .map(|lp| {
            let base = baseline.layers.iter().find(|b| b.layer == lp.layer).and_then(|b| b.auc);
            let diff = match (lp.auc, base) {
                (Some(a), Some(b)) if b != 0.0 => Some((a - b) / b),
                _ => None,
            };
            (lp.layer, diff)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::build_pointnet_lite;

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[1.0]), 1.0);
        assert!((auc(&[1.0, 0.5, 0.5]) - 0.625).abs() < 1e-12);
    }

    #[test]
    fn profile_sorted_and_missing_layers() {
        let net = build_pointnet_lite(64, 3, 0).unwrap();
        let sums = ChannelSums {
            layers: vec![(0, vec![2.0, 4.0, 2.0]), (2, vec![0.0; 4])],
        };
        let p = sums.profile(&net);
        assert_eq!(p.layers[0].normalized, vec![1.0, 0.5, 0.5]);
        assert!((p.layers[0].auc.unwrap() - 0.625).abs() < 1e-12);
        assert_eq!(p.layers[1].auc, None);
        let diff = relative_auc_diff(&p, &p);
        assert_eq!(diff[0], (0, Some(0.0)));
        assert_eq!(diff[1], (2, None));
    }

    #[test]
    fn profile_on_a_network() {
        let net = build_pointnet_lite(64, 3, 4).unwrap();
        let x = Tensor::from_fn(&[5, 64, 3], |i| ((i * 29 % 17) as f32 - 8.0) / 8.0);
        let p = channel_relevance_auc(&net, &x, &[0, 1, 2, 0, 1], &Composite::evaluation(), ChannelMass::Positive, 2)
            .unwrap();
        let param_layers = net.layers().iter().filter(|l| l.kind().is_parametrized()).count();
        assert_eq!(p.layers.len(), param_layers);
        for lp in &p.layers {
            if let Some(a) = lp.auc {
                assert_eq!(lp.normalized[0], 1.0);
                assert!(lp.normalized.windows(2).all(|w| w[0] >= w[1]));
                assert!(a > 0.0 && a <= 1.0);
            }
        }
    }
}
