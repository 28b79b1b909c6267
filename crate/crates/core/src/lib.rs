//! Attribution-guided input occlusion for images and point clouds.
//!
//! The crate bundles everything needed to study relevance-driven dropout at desk
//! scale:
//!
//! - [`tensor`] and [`nn`]: a small dense-tensor network engine (linear, conv,
//!   batch-norm, pooling, shared per-point MLPs) with SGD training and
//!   checkpointing.
//! - [`lrp`]: layer-wise relevance propagation with per-layer rule composites
//!   and batch-norm canonization.
//! - [`augment`]: relevance-centred block occlusion and random erasing for
//!   images, and the α/β blended point dropout for point clouds.
//! - [`metrics`]: micro/macro accuracy, relevance rank accuracy, pixel/point
//!   flipping curves and channel-relevance AUC profiles.
//! - [`data`]: IDX/CIFAR loaders, a synthetic shape point-cloud generator and
//!   stratified splits.
//! - [`harness`]: config-driven training runs, parameter grids and evaluation
//!   sweeps that emit CSV/PPM artifacts.

pub mod augment;
pub mod data;
pub mod error;
pub mod harness;
pub mod lrp;
pub mod metrics;
pub mod nn;
pub mod rng;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
