//! Block occlusion for images: relevance-centred and random erasing.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// What to do when a sampled block does not fit around its centre.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryMode {
    /// Resample until the centred block lies inside the image; clip after
    /// `max_attempts` failures.
    #[default]
    Clip,
    /// Resample until `x_cen + W_O <= W` and `y_cen + H_O <= H` (corner test),
    /// then clip the centred block to the image.
    CornerFit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig2D {
    /// Probability of occluding a given sample.
    pub p: f32,
    /// Occluded area fraction is drawn from `U(s_low, s_high)`.
    pub s_low: f32,
    pub s_high: f32,
    /// Aspect ratio `H_O / W_O` is drawn from `U(r_low, 1 / r_low)`.
    pub r_low: f32,
    pub boundary: BoundaryMode,
    pub max_attempts: usize,
}

impl Default for AugmentConfig2D {
    fn default() -> Self {
        AugmentConfig2D {
            p: 0.5,
            s_low: 0.02,
            s_high: 0.4,
            r_low: 0.3,
            boundary: BoundaryMode::Clip,
            max_attempts: 64,
        }
    }
}

impl AugmentConfig2D {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::Config(format!("p must be in [0, 1], got {}", self.p)));
        }
        if !(self.s_low > 0.0 && self.s_low <= self.s_high && self.s_high <= 1.0) {
            return Err(Error::Config(format!(
                "need 0 < s_low <= s_high <= 1, got [{}, {}]",
                self.s_low, self.s_high
            )));
        }
        if !(self.r_low > 0.0 && self.r_low <= 1.0) {
            return Err(Error::Config(format!("r_low must be in (0, 1], got {}", self.r_low)));
        }
        if self.max_attempts == 0 {
            return Err(Error::Config("max_attempts must be >= 1".into()));
        }
        Ok(())
    }
}

/// Raw `H × W` pixel relevance and its `[0, 1]` normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct RelevanceMap2D {
    pub height: usize,
    pub width: usize,
    pub raw: Vec<f32>,
    pub normalized: Vec<f32>,
}

impl RelevanceMap2D {
    pub fn new(raw: Vec<f32>, height: usize, width: usize) -> Result<Self> {
        if raw.len() != height * width {
            return Err(Error::Shape(format!(
                "{} relevance values for a {height}x{width} map",
                raw.len()
            )));
        }
        let normalized = normalize_relevance_2d(&raw)?;
        Ok(RelevanceMap2D {
            height,
            width,
            raw,
            normalized,
        })
    }

    pub fn centroid(&self) -> (usize, usize) {
        centroid(&self.normalized, self.width)
    }
}

/// `(r + max|r|) / (2·max|r|)`; an all-zero map becomes uniformly 0.5.
pub fn normalize_relevance_2d(raw: &[f32]) -> Result<Vec<f32>> {
    if let Some(i) = raw.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("relevance map entry {i}")));
    }
    let m = raw.iter().fold(0.0f32, |acc, v| acc.max(v.abs()));
    if m == 0.0 {
        return Ok(vec![0.5; raw.len()]);
    }
    Ok(raw
        .iter()
        .map(|&v| ((v + m) / (2.0 * m)).clamp(0.0, 1.0))
        .collect())
}

/// Most relevant pixel as `(x, y)` with `x` indexing width; ties go to the
/// lowest row-major index.
pub fn centroid(normalized: &[f32], width: usize) -> (usize, usize) {
    let idx = crate::tensor::argmax(normalized);
    (idx % width, idx / width)
}

/// A sampled occlusion block, both as drawn and as applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcclusionRegion {
    pub x_cen: usize,
    pub y_cen: usize,
    /// Block size in pixels before clipping.
    pub width: usize,
    pub height: usize,
    /// Drawn area `S_O` (pixels) and aspect ratio `r_O`.
    pub area: f64,
    pub aspect: f64,
    /// Inclusive pixel bounds after clipping to the image.
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
    pub attempts: usize,
    pub clipped: bool,
}

impl OcclusionRegion {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..=self.x1).contains(&x) && (self.y0..=self.y1).contains(&y)
    }

    pub fn pixel_count(&self) -> usize {
        (self.x1 - self.x0 + 1) * (self.y1 - self.y0 + 1)
    }
}

struct Block {
    area: f64,
    aspect: f64,
    width: usize,
    height: usize,
}

fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.random::<f64>()
}

fn round_half_up(v: f64) -> usize {
    ((v + 0.5).floor() as usize).max(1)
}

fn draw_block(cfg: &AugmentConfig2D, h: usize, w: usize, rng: &mut impl Rng) -> Block {
    let s = (h * w) as f64;
    let area = uniform(rng, cfg.s_low as f64, cfg.s_high as f64) * s;
    let r_low = cfg.r_low as f64;
    let aspect = uniform(rng, r_low, 1.0 / r_low);
    Block {
        area,
        aspect,
        height: round_half_up((area * aspect).sqrt()),
        width: round_half_up((area / aspect).sqrt()),
    }
}

/// Start of a `len`-pixel span containing `centre`, centred on it.
fn span_start(centre: usize, len: usize) -> i64 {
    centre as i64 - (len / 2) as i64
}

fn place(block: &Block, centre: (usize, usize), h: usize, w: usize, attempts: usize) -> OcclusionRegion {
    let (xc, yc) = centre;
    let x0 = span_start(xc, block.width);
    let y0 = span_start(yc, block.height);
    let x1 = x0 + block.width as i64 - 1;
    let y1 = y0 + block.height as i64 - 1;
    let clipped = x0 < 0 || y0 < 0 || x1 >= w as i64 || y1 >= h as i64;
    OcclusionRegion {
        x_cen: xc,
        y_cen: yc,
        width: block.width,
        height: block.height,
        area: block.area,
        aspect: block.aspect,
        x0: x0.max(0) as usize,
        x1: x1.min(w as i64 - 1) as usize,
        y0: y0.max(0) as usize,
        y1: y1.min(h as i64 - 1) as usize,
        attempts,
        clipped,
    }
}

fn centred_fits(block: &Block, centre: (usize, usize), h: usize, w: usize) -> bool {
    let x0 = span_start(centre.0, block.width);
    let y0 = span_start(centre.1, block.height);
    x0 >= 0
        && y0 >= 0
        && x0 + block.width as i64 <= w as i64
        && y0 + block.height as i64 <= h as i64
}

/// Draws `(S_O, r_O)` and places the block around `centre`, resampling per
/// `cfg.boundary` and clipping after `cfg.max_attempts` failed fits.
pub fn sample_region(
    cfg: &AugmentConfig2D,
    h: usize,
    w: usize,
    centre: (usize, usize),
    rng: &mut impl Rng,
) -> OcclusionRegion {
    let mut last = None;
    for attempt in 1..=cfg.max_attempts {
        let block = draw_block(cfg, h, w, rng);
        let fits = match cfg.boundary {
            BoundaryMode::Clip => centred_fits(&block, centre, h, w),
            BoundaryMode::CornerFit => centre.0 + block.width <= w && centre.1 + block.height <= h,
        };
        if fits {
            return place(&block, centre, h, w, attempt);
        }
        last = Some(block);
    }
    place(&last.expect("max_attempts >= 1"), centre, h, w, cfg.max_attempts)
}

fn image_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::Shape(format!("expected a [C, H, W] image, got {shape:?}"))),
    }
}

/// Sets every pixel of `region` to the per-channel `fill` value.
pub fn occlude(image: &mut [f32], shape: &[usize], region: &OcclusionRegion, fill: &[f32]) -> Result<()> {
    let (c, h, w) = image_dims(shape)?;
    if fill.len() != c || image.len() != c * h * w {
        return Err(Error::Shape(format!(
            "fill of {} channels for image {shape:?}",
            fill.len()
        )));
    }
    for (ch, &mu) in fill.iter().enumerate() {
        for y in region.y0..=region.y1 {
            let row = &mut image[(ch * h + y) * w..(ch * h + y + 1) * w];
            row[region.x0..=region.x1].fill(mu);
        }
    }
    Ok(())
}

/// Relevance-centred occlusion of one `[C, H, W]` image, in place.
///
/// With probability `1 − p` nothing happens and `None` is returned. Otherwise a
/// block is centred on the most relevant pixel and filled with `fill`.
pub fn apply_reldrop_2d(
    image: &mut [f32],
    shape: &[usize],
    map: &RelevanceMap2D,
    cfg: &AugmentConfig2D,
    fill: &[f32],
    rng: &mut impl Rng,
) -> Result<Option<OcclusionRegion>> {
    let (_, h, w) = image_dims(shape)?;
    if map.height != h || map.width != w {
        return Err(Error::Shape(format!(
            "relevance map {}x{} for a {h}x{w} image",
            map.height, map.width
        )));
    }
    if rng.random::<f64>() >= cfg.p as f64 {
        return Ok(None);
    }
    let region = sample_region(cfg, h, w, map.centroid(), rng);
    occlude(image, shape, &region, fill)?;
    Ok(Some(region))
}

/// Random erasing: same block distribution as [`apply_reldrop_2d`] but the
/// block is placed uniformly over all positions where it fits entirely.
pub fn apply_random_erasing(
    image: &mut [f32],
    shape: &[usize],
    cfg: &AugmentConfig2D,
    fill: &[f32],
    rng: &mut impl Rng,
) -> Result<Option<OcclusionRegion>> {
    let (_, h, w) = image_dims(shape)?;
    if rng.random::<f64>() >= cfg.p as f64 {
        return Ok(None);
    }
    let mut attempt = 0;
    let block = loop {
        attempt += 1;
        let mut block = draw_block(cfg, h, w, rng);
        if block.width <= w && block.height <= h {
            break block;
        }
        if attempt == cfg.max_attempts {
            block.width = block.width.min(w);
            block.height = block.height.min(h);
            break block;
        }
    };
    let x0 = rng.random_range(0..=w - block.width);
    let y0 = rng.random_range(0..=h - block.height);
    let centre = (x0 + block.width / 2, y0 + block.height / 2);
    let region = place(&block, centre, h, w, attempt);
    occlude(image, shape, &region, fill)?;
    Ok(Some(region))
}
