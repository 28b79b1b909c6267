//! Turns a dataset section of the config into train/test tensors.

use super::config::{ExperimentConfig, ImageSource, Task};
use crate::data::{generate_shapes, load_cifar10, load_idx, ChannelStats, ImageDataset, ImageSet};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::tensor::Tensor;

/// Train/test tensors for either task, plus what evaluation needs to know.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub train_x: Tensor,
    pub train_y: Vec<usize>,
    pub test_x: Tensor,
    pub test_y: Vec<usize>,
    pub classes: usize,
    pub class_names: Vec<String>,
    /// Image statistics from the training split (images only).
    pub stats: Option<ChannelStats>,
}

impl Prepared {
    pub fn input_shape(&self) -> &[usize] {
        &self.train_x.shape()[1..]
    }

    /// Per-channel occlusion value in standardized space (the dataset mean).
    pub fn fill(&self) -> Vec<f32> {
        self.stats.as_ref().map(ChannelStats::standardized_mean).unwrap_or_default()
    }

    /// Per-channel bounds of standardized pixel values (raw 0 and 1).
    pub fn pixel_bounds(&self) -> Option<(Vec<f32>, Vec<f32>)> {
        self.stats.as_ref().map(|s| {
            let low = s.mean.iter().zip(&s.std).map(|(m, sd)| -m / sd).collect();
            let high = s.mean.iter().zip(&s.std).map(|(m, sd)| (1.0 - m) / sd).collect();
            (low, high)
        })
    }
}

pub fn load_images(cfg: &ExperimentConfig) -> Result<ImageSet> {
    let mut raw = match &cfg.image.source {
        ImageSource::Idx { images, labels } => load_idx(images, labels)?,
        ImageSource::Cifar10 { batches } => {
            let paths: Vec<&std::path::Path> = batches.iter().map(|p| p.as_path()).collect();
            load_cifar10(&paths)?
        }
    };
    if let Some(limit) = cfg.image.limit {
        if limit == 0 {
            return Err(Error::Config("image limit must be >= 1".into()));
        }
        let idx: Vec<usize> = (0..limit.min(raw.len())).collect();
        raw = raw.subset(&idx);
    }
    Ok(raw)
}

pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    match cfg.task {
        Task::Image2d => {
            let raw = load_images(cfg)?;
            let ds = ImageDataset::prepare(&raw, cfg.image.train_fraction, cfg.image.split_seed)?;
            Ok(Prepared {
                classes: raw.classes,
                class_names: (0..raw.classes).map(|c| c.to_string()).collect(),
                train_x: ds.train.images,
                train_y: ds.train.labels,
                test_x: ds.test.images,
                test_y: ds.test.labels,
                stats: Some(ds.stats),
            })
        }
        Task::Points3d => {
            let p = &cfg.points;
            let train = generate_shapes(&p.primitives, p.train_per_class, p.points, &p.shape, p.data_seed)?;
            let test_seed = derive_seed(&[p.data_seed, 0x7e57]);
            let test = generate_shapes(&p.primitives, p.test_per_class, p.points, &p.shape, test_seed)?;
            Ok(Prepared {
                classes: train.classes(),
                class_names: train.class_names.clone(),
                train_x: train.clouds,
                train_y: train.labels,
                test_x: test.clouds,
                test_y: test.labels,
                stats: None,
            })
        }
    }
}
