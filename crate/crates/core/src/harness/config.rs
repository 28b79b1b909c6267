//! Experiment configuration: one TOML document, every field defaulted.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{AugmentConfig2D, AugmentConfig3D};
use crate::data::{Primitive, ShapeConfig};
use crate::error::{Error, IoContext, Result};
use crate::lrp::Composite;
use crate::metrics::ChannelMass;
use crate::nn::{
    build_pointnet_lite_with, build_small_cnn_with, Network, PointNetWidths, TrainConfig,
};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Image2d,
    Points3d,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentKind {
    None,
    /// Random erasing (images only).
    Random,
    #[default]
    Reldrop,
}

impl AugmentKind {
    pub fn name(self) -> &'static str {
        match self {
            AugmentKind::None => "none",
            AugmentKind::Random => "random",
            AugmentKind::Reldrop => "reldrop",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NetworkSpec {
    SmallCnn { widths: [usize; 2] },
    PointnetLite { point_mlp: Vec<usize>, head: Vec<usize> },
}

impl NetworkSpec {
    pub fn default_for(task: Task) -> Self {
        match task {
            Task::Image2d => NetworkSpec::SmallCnn { widths: [8, 16] },
            Task::Points3d => {
                let w = PointNetWidths::default();
                NetworkSpec::PointnetLite { point_mlp: w.point_mlp, head: w.head }
            }
        }
    }

    pub fn build(&self, input_shape: &[usize], classes: usize, seed: u64) -> Result<Network> {
        match (self, input_shape) {
            (NetworkSpec::SmallCnn { widths }, &[c, h, w]) => {
                build_small_cnn_with([c, h, w], classes, *widths, seed)
            }
            (NetworkSpec::PointnetLite { point_mlp, head }, &[n, 3]) => {
                let widths = PointNetWidths { point_mlp: point_mlp.clone(), head: head.clone() };
                build_pointnet_lite_with(n, classes, &widths, seed)
            }
            _ => Err(Error::Config(format!(
                "network {self:?} cannot take inputs of shape {input_shape:?}"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case", deny_unknown_fields)]
pub enum ImageSource {
    /// IDX image and label files, optionally gzip-compressed.
    Idx { images: PathBuf, labels: PathBuf },
    /// CIFAR-10 binary batch files.
    Cifar10 { batches: Vec<PathBuf> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImageDataSpec {
    pub source: ImageSource,
    /// Use only the first `limit` images.
    pub limit: Option<usize>,
    pub train_fraction: f64,
    pub split_seed: u64,
}

impl Default for ImageDataSpec {
    fn default() -> Self {
        ImageDataSpec {
            source: ImageSource::Idx {
                images: "data/mnist/mnist10k-images-idx3-ubyte.gz".into(),
                labels: "data/mnist/mnist10k-labels-idx1-ubyte.gz".into(),
            },
            limit: None,
            train_fraction: 0.7,
            split_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PointDataSpec {
    pub primitives: Vec<Primitive>,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub points: usize,
    pub shape: ShapeConfig,
    pub data_seed: u64,
}

impl Default for PointDataSpec {
    fn default() -> Self {
        PointDataSpec {
            primitives: Primitive::ALL.to_vec(),
            train_per_class: 40,
            test_per_class: 40,
            points: 1024,
            shape: ShapeConfig::default(),
            data_seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMetric {
    Accuracy,
    Rra,
    Flipping,
    Auc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSpec {
    pub suite: Vec<EvalMetric>,
    pub batch_size: usize,
    /// Units removed per flipping step; `None` picks 32 points or 16 pixels.
    pub flip_step: Option<usize>,
    /// Size of the fixed test subset used for flipping.
    pub flip_samples: usize,
    /// Also record a random-order flipping baseline.
    pub flip_random_baseline: bool,
    /// Test-set indices rendered as heatmaps.
    pub heatmap_samples: Vec<usize>,
    /// Raw-intensity threshold for the image foreground mask used by RRA.
    pub rra_threshold: f32,
    pub auc_samples: usize,
    pub auc_mass: ChannelMass,
    /// Record clean training-set accuracy after every epoch.
    pub train_accuracy: bool,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            suite: vec![EvalMetric::Accuracy, EvalMetric::Rra, EvalMetric::Flipping, EvalMetric::Auc],
            batch_size: 128,
            flip_step: None,
            flip_samples: 512,
            flip_random_baseline: true,
            heatmap_samples: vec![0, 1, 2, 3],
            rra_threshold: 0.5,
            auc_samples: 256,
            auc_mass: ChannelMass::Positive,
            train_accuracy: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub task: Task,
    /// Defaults by task when absent.
    pub network: Option<NetworkSpec>,
    pub train: Option<TrainConfig>,
    pub augmentation: AugmentKind,
    pub augment2d: AugmentConfig2D,
    pub augment3d: AugmentConfig3D,
    /// Composite used to attribute training batches; defaults by task.
    pub composite: Option<Composite>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    /// Write per-occlusion audit CSVs.
    pub audit: bool,
    /// Save a checkpoint at the end of each run.
    pub checkpoint: bool,
    pub image: ImageDataSpec,
    pub points: PointDataSpec,
    pub eval: EvalSpec,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            task: Task::Image2d,
            network: None,
            train: None,
            augmentation: AugmentKind::Reldrop,
            augment2d: AugmentConfig2D::default(),
            augment3d: AugmentConfig3D::default(),
            composite: None,
            seeds: vec![0],
            out_dir: "runs".into(),
            audit: false,
            checkpoint: true,
            image: ImageDataSpec::default(),
            points: PointDataSpec::default(),
            eval: EvalSpec::default(),
        }
    }
}

impl ExperimentConfig {
    /// Parses a config document. Partial `[train]` and `[composite]` tables
    /// are laid over the defaults of the document's task, not the image ones.
    pub fn from_toml(text: &str) -> Result<Self> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let task: Task = match doc.get("task") {
            Some(v) => v.clone().try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?,
            None => Task::default(),
        };
        let defaults = ExperimentConfig { task, ..Default::default() }.resolve();
        let defaults = toml::Table::try_from(&defaults).map_err(|e| Error::Config(e.to_string()))?;
        for key in ["train", "composite"] {
            if let Some(toml::Value::Table(partial)) = doc.get(key) {
                let Some(toml::Value::Table(base)) = defaults.get(key) else { continue };
                let mut merged = base.clone();
                // A different tagged variant replaces the default wholesale.
                for (k, v) in partial {
                    match (merged.get_mut(k), v) {
                        (Some(toml::Value::Table(b)), toml::Value::Table(p))
                            if b.get("kind") == p.get("kind") || p.get("kind").is_none() =>
                        {
                            b.extend(p.clone());
                        }
                        _ => {
                            merged.insert(k.clone(), v.clone());
                        }
                    }
                }
                doc.insert(key.to_string(), toml::Value::Table(merged));
            }
        }
        doc.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).io_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text)
    }

    /// Fills every task-dependent default in place.
    pub fn resolve(mut self) -> Self {
        let task = self.task;
        self.network.get_or_insert_with(|| NetworkSpec::default_for(task));
        self.train.get_or_insert_with(|| match task {
            Task::Image2d => TrainConfig::default(),
            Task::Points3d => TrainConfig::point_cloud_defaults(),
        });
        self.composite.get_or_insert_with(|| match task {
            Task::Image2d => Composite::augmentation_epsilon(0.001),
            Task::Points3d => Composite::augmentation_zplus(),
        });
        self.eval.flip_step.get_or_insert(match task {
            Task::Image2d => 16,
            Task::Points3d => 32,
        });
        self
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn train_config(&self) -> TrainConfig {
        self.train.clone().unwrap_or_else(|| self.clone().resolve().train.expect("resolved"))
    }

    pub fn network_spec(&self) -> NetworkSpec {
        self.network.clone().unwrap_or_else(|| NetworkSpec::default_for(self.task))
    }

    pub fn composite(&self) -> Composite {
        self.composite.clone().unwrap_or_else(|| self.clone().resolve().composite.expect("resolved"))
    }

    pub fn flip_step(&self) -> usize {
        self.eval.flip_step.unwrap_or(match self.task {
            Task::Image2d => 16,
            Task::Points3d => 32,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!("invalid experiment name {:?}", self.name)));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds list is empty".into()));
        }
        self.train_config().validate()?;
        self.augment2d.validate()?;
        self.augment3d.validate()?;
        if self.task == Task::Points3d && self.augmentation == AugmentKind::Random {
            return Err(Error::Config(
                "random erasing applies to images; use reldrop with alpha = 1 for random point dropout".into(),
            ));
        }
        match (self.task, self.network_spec()) {
            (Task::Image2d, NetworkSpec::SmallCnn { .. }) | (Task::Points3d, NetworkSpec::PointnetLite { .. }) => {}
            (task, net) => {
                return Err(Error::Config(format!("network {net:?} does not fit task {task:?}")));
            }
        }
        if self.eval.batch_size == 0 {
            return Err(Error::Config("eval batch size must be >= 1".into()));
        }
        if self.eval.flip_samples == 0 {
            return Err(Error::Config("flip_samples must be >= 1".into()));
        }
        Ok(())
    }
}
