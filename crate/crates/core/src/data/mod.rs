//! Datasets: image loaders, synthetic point clouds, splits and normalization.

pub mod cloud_io;
pub mod idx;
pub mod shapes;
pub mod split;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use idx::{decode_cifar10, decode_idx_images, decode_idx_labels, load_cifar10, load_idx};
pub use shapes::{generate_shapes, sample_surface, Primitive, ShapeConfig};
pub use split::stratified_split;

/// Labelled images `[M, C, H, W]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageSet {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl ImageSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> ImageSet {
        ImageSet {
            images: self.images.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    pub fn channels(&self) -> usize {
        self.images.shape()[1]
    }

    /// Applies `(x − μ_c) / σ_c` per channel.
    pub fn standardize(&mut self, stats: &ChannelStats) -> Result<()> {
        let c = self.channels();
        if stats.mean.len() != c {
            return Err(Error::Shape(format!(
                "statistics for {} channels, images have {c}",
                stats.mean.len()
            )));
        }
        let plane = self.images.sample_len() / c;
        for (i, v) in self.images.data_mut().iter_mut().enumerate() {
            let ch = (i / plane) % c;
            *v = (*v - stats.mean[ch]) / stats.std[ch];
        }
        Ok(())
    }
}

/// Per-channel mean and standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl ChannelStats {
    /// Population statistics over every pixel of `set`. A channel with zero
    /// spread gets σ = 1 so standardization stays finite.
    pub fn fit(set: &ImageSet) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::InvalidArgument("statistics of an empty image set".into()));
        }
        let c = set.channels();
        let plane = set.images.sample_len() / c;
        let mut sum = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        for (i, &v) in set.images.data().iter().enumerate() {
            let ch = (i / plane) % c;
            sum[ch] += v as f64;
            sq[ch] += (v as f64) * (v as f64);
        }
        let n = (set.len() * plane) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n - m * m).max(0.0);
                if var > 0.0 { var.sqrt() as f32 } else { 1.0 }
            })
            .collect();
        Ok(ChannelStats {
            mean: mean.into_iter().map(|m| m as f32).collect(),
            std,
        })
    }

    /// The per-channel mean expressed in standardized space (always 0).
    pub fn standardized_mean(&self) -> Vec<f32> {
        vec![0.0; self.mean.len()]
    }
}

/// A standardized train/test pair sharing training-split statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageDataset {
    pub train: ImageSet,
    pub test: ImageSet,
    pub stats: ChannelStats,
}

impl ImageDataset {
    /// Stratified split of raw `[0, 1]` images, then standardization of both
    /// parts with statistics fitted on the training part only.
    pub fn prepare(raw: &ImageSet, train_fraction: f64, seed: u64) -> Result<Self> {
        let (train_idx, test_idx) = stratified_split(&raw.labels, raw.classes, train_fraction, seed)?;
        let mut train = raw.subset(&train_idx);
        let mut test = raw.subset(&test_idx);
        let stats = ChannelStats::fit(&train)?;
        train.standardize(&stats)?;
        test.standardize(&stats)?;
        Ok(ImageDataset { train, test, stats })
    }
}

/// Labelled point clouds `[M, N, 3]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CloudDataset {
    pub clouds: Tensor,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl CloudDataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn points(&self) -> usize {
        self.clouds.shape()[1]
    }

    pub fn subset(&self, indices: &[usize]) -> CloudDataset {
        CloudDataset {
            clouds: self.clouds.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
        }
    }

    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<(CloudDataset, CloudDataset)> {
        let (a, b) = stratified_split(&self.labels, self.classes(), train_fraction, seed)?;
        Ok((self.subset(&a), self.subset(&b)))
    }
}

/// Moves the centroid to the origin and scales the farthest point to radius 1.
pub fn center_and_scale(cloud: &mut [f32]) {
    let n = (cloud.len() / 3).max(1) as f64;
    let mut c = [0.0f64; 3];
    for p in cloud.chunks(3) {
        for k in 0..3 {
            c[k] += p[k] as f64;
        }
    }
    let c = c.map(|v| (v / n) as f32);
    let mut r_max = 0.0f32;
    for p in cloud.chunks_mut(3) {
        for k in 0..3 {
            p[k] -= c[k];
        }
        r_max = r_max.max((p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt());
    }
    if r_max > 0.0 {
        cloud.iter_mut().for_each(|v| *v /= r_max);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_images_have_mean_half() {
        let set = ImageSet {
            images: Tensor::full(&[4, 1, 5, 5], 0.5),
            labels: vec![0, 1, 0, 1],
            classes: 2,
        };
        let stats = ChannelStats::fit(&set).unwrap();
        assert_eq!(stats.mean, vec![0.5]);
        assert_eq!(stats.std, vec![1.0]);
    }

    #[test]
    fn statistics_come_from_train_only() {
        let images = Tensor::from_fn(&[8, 1, 2, 2], |i| (i / 4) as f32 / 8.0);
        let raw = ImageSet { images, labels: vec![0, 1, 0, 1, 0, 1, 0, 1], classes: 2 };
        let ds = ImageDataset::prepare(&raw, 0.5, 3).unwrap();
        let refit = ChannelStats::fit(&ds.train).unwrap();
        assert!(refit.mean[0].abs() < 1e-6);
        assert!((refit.std[0] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn center_and_scale_unit_sphere() {
        let mut cloud = vec![1.0, 1.0, 1.0, 3.0, 1.0, 1.0, 2.0, 3.0, 1.0];
        center_and_scale(&mut cloud);
        let r: Vec<f32> = cloud.chunks(3).map(|p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()).collect();
        assert!((r.iter().cloned().fold(0.0, f32::max) - 1.0).abs() < 1e-6);
        let cx: f32 = cloud.chunks(3).map(|p| p[0]).sum();
        assert!(cx.abs() < 1e-6);
    }
}
