//! Training-time occlusion for images and point clouds.

pub mod image;
pub mod points;

pub use image::{
    apply_random_erasing, apply_reldrop_2d, centroid, normalize_relevance_2d, occlude, sample_region,
    AugmentConfig2D, BoundaryMode, OcclusionRegion, RelevanceMap2D,
};
pub use points::{
    apply_mask, apply_reldrop_3d, make_mask_3d, mask_with_noise, normalize_relevance_3d,
    AugmentConfig3D, PointMask,
};
