//! Minimal trainable network engine.

pub mod checkpoint;
pub(crate) mod gemm;
pub mod layer;
pub mod network;
pub mod train;

pub use layer::{BatchNorm2d, Cache, Conv2d, Layer, LayerKind, Linear, MaxPool2d, Mode};
pub use network::{
    build_pointnet_lite, build_pointnet_lite_with, build_small_cnn, build_small_cnn_with,
    softmax_cross_entropy, Gradients, Network, PointNetWidths, Trace,
};
pub use train::{Optimizer, Schedule, TrainConfig, Trainer};
