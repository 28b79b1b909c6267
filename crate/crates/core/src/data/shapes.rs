//! Synthetic labelled point clouds sampled from geometric primitives.

use std::f32::consts::PI;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{center_and_scale, CloudDataset};
use crate::error::{Error, Result};
use crate::rng::{stream, tag};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Primitive {
    Sphere,
    Cube,
    Cone,
    Torus,
    Cylinder,
    Plane,
    Capsule,
    Pyramid,
}

impl Primitive {
    pub const ALL: [Primitive; 8] = [
        Primitive::Sphere,
        Primitive::Cube,
        Primitive::Cone,
        Primitive::Torus,
        Primitive::Cylinder,
        Primitive::Plane,
        Primitive::Capsule,
        Primitive::Pyramid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Sphere => "sphere",
            Primitive::Cube => "cube",
            Primitive::Cone => "cone",
            Primitive::Torus => "torus",
            Primitive::Cylinder => "cylinder",
            Primitive::Plane => "plane",
            Primitive::Capsule => "capsule",
            Primitive::Pyramid => "pyramid",
        }
    }
}

impl FromStr for Primitive {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Primitive::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown primitive kind {s:?}")))
    }
}

/// Per-sample variation applied on top of the canonical surfaces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapeConfig {
    /// Standard deviation of the Gaussian point jitter.
    pub jitter: f32,
    /// Each axis is stretched by a factor drawn from `U(1 − s, 1 + s)`.
    pub scale_jitter: f32,
    /// Fraction of points replaced by uniform noise in the bounding cube.
    pub outliers: f32,
    /// Upper bound of the surface share cut away by a random plane, drawn
    /// per cloud from `U(0, cutout)` (partial observations).
    pub cutout: f32,
    /// Center each cloud and scale it into the unit sphere.
    pub normalize: bool,
}

impl Default for ShapeConfig {
    fn default() -> Self {
        ShapeConfig {
            jitter: 0.01,
            scale_jitter: 0.0,
            outliers: 0.0,
            cutout: 0.0,
            normalize: true,
        }
    }
}

impl ShapeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.jitter >= 0.0) || !(0.0..1.0).contains(&self.scale_jitter) || !(0.0..=1.0).contains(&self.outliers)
            || !(0.0..0.9).contains(&self.cutout)
        {
            return Err(Error::Config(format!("invalid shape config {self:?}")));
        }
        Ok(())
    }
}

type P3 = [f32; 3];

fn lerp3(a: P3, b: P3, c: P3, rng: &mut impl Rng) -> P3 {
    let r1 = rng.random::<f32>().sqrt();
    let r2 = rng.random::<f32>();
    let (wa, wb, wc) = (1.0 - r1, r1 * (1.0 - r2), r1 * r2);
    [0, 1, 2].map(|k| wa * a[k] + wb * b[k] + wc * c[k])
}

fn disc(r: f32, z: f32, rng: &mut impl Rng) -> P3 {
    let rho = r * rng.random::<f32>().sqrt();
    let t = 2.0 * PI * rng.random::<f32>();
    [rho * t.cos(), rho * t.sin(), z]
}

fn unit_sphere(rng: &mut impl Rng) -> P3 {
    loop {
        let v: P3 = [0; 3].map(|_| StandardNormal.sample(rng));
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-6 {
            return v.map(|x| x / n);
        }
    }
}

/// Picks an index with probability proportional to `weights`.
fn pick(weights: &[f32], rng: &mut impl Rng) -> usize {
    let total: f32 = weights.iter().sum();
    let mut u = rng.random::<f32>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

/// One point uniformly distributed over the canonical surface of `kind`.
///
/// Canonical sizes: unit-radius sphere, unit-edge cube, cylinder and cone of
/// radius 0.5 and height 1, torus with radii 0.6/0.2, unit square plane,
/// capsule of radius 0.3 with a 0.8 shaft, square pyramid of base 1 and
/// height 1. All are centred on the origin with `z` as the up axis.
pub fn sample_surface(kind: Primitive, rng: &mut impl Rng) -> P3 {
    match kind {
        Primitive::Sphere => unit_sphere(rng),
        Primitive::Cube => {
            let face = rng.random_range(0..6);
            let (a, b) = (rng.random::<f32>() - 0.5, rng.random::<f32>() - 0.5);
            let s = if face % 2 == 0 { 0.5 } else { -0.5 };
            match face / 2 {
                0 => [s, a, b],
                1 => [a, s, b],
                _ => [a, b, s],
            }
        }
        Primitive::Cylinder => {
            let (r, h) = (0.5f32, 1.0f32);
            match pick(&[2.0 * PI * r * h, PI * r * r, PI * r * r], rng) {
                0 => {
                    let t = 2.0 * PI * rng.random::<f32>();
                    [r * t.cos(), r * t.sin(), h * (rng.random::<f32>() - 0.5)]
                }
                1 => disc(r, 0.5 * h, rng),
                _ => disc(r, -0.5 * h, rng),
            }
        }
        Primitive::Cone => {
            let (r, h) = (0.5f32, 1.0f32);
            let slant = (r * r + h * h).sqrt();
            if pick(&[PI * r * slant, PI * r * r], rng) == 0 {
                // Distance from the apex with density proportional to radius.
                let s = rng.random::<f32>().sqrt();
                let t = 2.0 * PI * rng.random::<f32>();
                [r * s * t.cos(), r * s * t.sin(), 0.5 * h - h * s]
            } else {
                disc(r, -0.5 * h, rng)
            }
        }
        Primitive::Torus => {
            let (big, small) = (0.6f32, 0.2f32);
            loop {
                let u = 2.0 * PI * rng.random::<f32>();
                let v = 2.0 * PI * rng.random::<f32>();
                if rng.random::<f32>() * (big + small) <= big + small * v.cos() {
                    let ring = big + small * v.cos();
                    return [ring * u.cos(), ring * u.sin(), small * v.sin()];
                }
            }
        }
        Primitive::Plane => [rng.random::<f32>() - 0.5, rng.random::<f32>() - 0.5, 0.0],
        Primitive::Capsule => {
            let (r, shaft) = (0.3f32, 0.8f32);
            if pick(&[2.0 * PI * r * shaft, 4.0 * PI * r * r], rng) == 0 {
                let t = 2.0 * PI * rng.random::<f32>();
                [r * t.cos(), r * t.sin(), shaft * (rng.random::<f32>() - 0.5)]
            } else {
                let p = unit_sphere(rng);
                let z = r * p[2] + if p[2] >= 0.0 { 0.5 * shaft } else { -0.5 * shaft };
                [r * p[0], r * p[1], z]
            }
        }
        Primitive::Pyramid => {
            let apex = [0.0, 0.0, 0.5];
            let c = [[-0.5, -0.5, -0.5], [0.5, -0.5, -0.5], [0.5, 0.5, -0.5], [-0.5, 0.5, -0.5]];
            let side = 0.5 * (1.0f32 + 0.25).sqrt();
            match pick(&[1.0, side, side, side, side], rng) {
                0 => [rng.random::<f32>() - 0.5, rng.random::<f32>() - 0.5, -0.5],
                f => lerp3(apex, c[f - 1], c[f % 4], rng),
            }
        }
    }
}

/// One cloud of `n` points: surface samples (optionally with a planar cut),
/// random axis stretch, rotation about the up axis, outliers, Gaussian jitter,
/// then optional normalization.
pub fn sample_cloud(kind: Primitive, n: usize, cfg: &ShapeConfig, rng: &mut impl Rng) -> Vec<f32> {
    let s = cfg.scale_jitter;
    let scale: P3 = [0; 3].map(|_| rng.random_range(1.0 - s..=1.0 + s));
    let angle = 2.0 * PI * rng.random::<f32>();
    let (sin, cos) = angle.sin_cos();
    let noise = Normal::new(0.0, cfg.jitter).expect("validated jitter");

    let cut = if cfg.cutout > 0.0 { rng.random_range(0.0..cfg.cutout) } else { 0.0 };
    let candidates = ((n as f32) / (1.0 - cut)).ceil() as usize;
    let mut surface: Vec<P3> = (0..candidates).map(|_| sample_surface(kind, rng)).collect();
    if candidates > n {
        // Drop the points farthest along a random direction.
        let d = unit_sphere(rng);
        let along = |p: &P3| p[0] * d[0] + p[1] * d[1] + p[2] * d[2];
        surface.sort_by(|a, b| along(a).total_cmp(&along(b)));
        surface.truncate(n);
        surface.shuffle(rng);
    }

    let mut out = Vec::with_capacity(3 * n);
    for q in surface {
        let p = if rng.random::<f32>() < cfg.outliers {
            [0; 3].map(|_| rng.random_range(-0.5f32..0.5))
        } else {
            [q[0] * scale[0], q[1] * scale[1], q[2] * scale[2]]
        };
        let rotated = [cos * p[0] - sin * p[1], sin * p[0] + cos * p[1], p[2]];
        out.extend(rotated.map(|v| v + noise.sample(rng)));
    }
    if cfg.normalize {
        center_and_scale(&mut out);
    }
    out
}

/// `per_class` clouds of `n` points for each primitive in `classes`, with
/// classes interleaved round-robin. Every cloud has its own seeded stream,
/// so the result depends only on the arguments.
pub fn generate_shapes(
    classes: &[Primitive],
    per_class: usize,
    n: usize,
    cfg: &ShapeConfig,
    seed: u64,
) -> Result<CloudDataset> {
    if n < 64 {
        return Err(Error::InvalidArgument(format!("need at least 64 points per cloud, got {n}")));
    }
    if classes.len() < 2 {
        return Err(Error::InvalidArgument("need at least two classes".into()));
    }
    cfg.validate()?;
    let mut data = Vec::with_capacity(classes.len() * per_class * n * 3);
    let mut labels = Vec::with_capacity(classes.len() * per_class);
    for i in 0..per_class {
        for (c, &kind) in classes.iter().enumerate() {
            let mut rng = stream(&[seed, tag::DATA, c as u64, i as u64]);
            data.extend(sample_cloud(kind, n, cfg, &mut rng));
            labels.push(c);
        }
    }
    Ok(CloudDataset {
        clouds: Tensor::new(vec![labels.len(), n, 3], data)?,
        labels,
        class_names: classes.iter().map(|k| k.name().to_string()).collect(),
    })
}
