//! Relevance-guided point dropping for point clouds.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig3D {
    /// Weight of uniform noise against normalized relevance.
    pub alpha: f32,
    /// Drop threshold offset: a point is dropped when its score reaches `1 − β`.
    pub beta: f32,
}

impl Default for AugmentConfig3D {
    fn default() -> Self {
        AugmentConfig3D { alpha: 0.5, beta: 0.15 }
    }
}

impl AugmentConfig3D {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {v}")));
            }
        }
        Ok(())
    }
}

/// Min-max normalization to `[0, 1]`; a constant vector maps to 0.5.
pub fn normalize_relevance_3d(raw: &[f32]) -> Result<Vec<f32>> {
    if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("point relevance entry {i}")));
    }
    let lo = raw.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = raw.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    if raw.is_empty() || hi == lo {
        return Ok(vec![0.5; raw.len()]);
    }
    let span = hi - lo;
    Ok(raw.iter().map(|&v| ((v - lo) / span).clamp(0.0, 1.0)).collect())
}

/// Keep flags per point (`true` = keep).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PointMask(pub Vec<bool>);

impl PointMask {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dropped(&self) -> usize {
        self.0.iter().filter(|&&k| !k).count()
    }

    pub fn dropped_indices(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &k)| !k)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Score `α·v + (1 − α)·R` for one point.
pub fn drop_score(cfg: &AugmentConfig3D, noise: f32, relevance: f32) -> f64 {
    let a = cfg.alpha as f64;
    a * noise as f64 + (1.0 - a) * relevance as f64
}

/// Mask for given noise values; a point is dropped iff its score is `>= 1 − β`.
pub fn mask_with_noise(cfg: &AugmentConfig3D, normalized: &[f32], noise: &[f32]) -> Result<PointMask> {
    if normalized.len() != noise.len() {
        return Err(Error::Shape(format!(
            "{} relevance values and {} noise values",
            normalized.len(),
            noise.len()
        )));
    }
    let threshold = 1.0 - cfg.beta as f64;
    Ok(PointMask(
        normalized
            .iter()
            .zip(noise)
            .map(|(&r, &v)| drop_score(cfg, v, r) < threshold)
            .collect(),
    ))
}

/// Draws `v ~ U(0, 1)` per point and builds the keep mask.
pub fn make_mask_3d(cfg: &AugmentConfig3D, normalized: &[f32], rng: &mut impl Rng) -> PointMask {
    let noise: Vec<f32> = (0..normalized.len()).map(|_| rng.random::<f32>()).collect();
    mask_with_noise(cfg, normalized, &noise).expect("noise drawn per point")
}

/// Moves every dropped point of an `N × 3` cloud to the origin, in place.
pub fn apply_mask(cloud: &mut [f32], mask: &PointMask) -> Result<()> {
    if cloud.len() != mask.len() * 3 {
        return Err(Error::Shape(format!(
            "cloud of {} floats for a mask over {} points",
            cloud.len(),
            mask.len()
        )));
    }
    for (p, &keep) in cloud.chunks_mut(3).zip(&mask.0) {
        if !keep {
            p.fill(0.0);
        }
    }
    Ok(())
}

/// Normalizes `raw` relevance, draws a mask, and drops points in place.
pub fn apply_reldrop_3d(
    cloud: &mut [f32],
    raw: &[f32],
    cfg: &AugmentConfig3D,
    rng: &mut impl Rng,
) -> Result<PointMask> {
    let normalized = normalize_relevance_3d(raw)?;
    let mask = make_mask_3d(cfg, &normalized, rng);
    apply_mask(cloud, &mask)?;
    Ok(mask)
}
