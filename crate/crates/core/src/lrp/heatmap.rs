//! Heatmap export: PPM (P6) rendering and raw little-endian `f32` dumps.

use std::path::Path;

use crate::error::{Error, IoContext, Result};

/// Symmetric blue–white–red colormap; `t` in `[-1, 1]`.
pub fn diverging_color(t: f32) -> [u8; 3] {
    let t = t.clamp(-1.0, 1.0);
    let fade = |v: f32| (255.0 * (1.0 - v)).round() as u8;
    if t >= 0.0 {
        [255, fade(t), fade(t)]
    } else {
        [fade(-t), fade(-t), 255]
    }
}

/// Renders an `h × w` map as binary PPM, scaled by the largest magnitude so
/// that zero is always white.
pub fn encode_ppm(map: &[f32], h: usize, w: usize) -> Result<Vec<u8>> {
    if map.len() != h * w {
        return Err(Error::Shape(format!("{} values for a {h}x{w} map", map.len())));
    }
    let scale = map.iter().fold(0.0f32, |m, v| m.max(v.abs()));
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for &v in map {
        let t = if scale > 0.0 { v / scale } else { 0.0 };
        out.extend_from_slice(&diverging_color(t));
    }
    Ok(out)
}

/// Header `(h, w)` as two little-endian `u32`, then `h·w` little-endian `f32`.
pub fn encode_raw(map: &[f32], h: usize, w: usize) -> Result<Vec<u8>> {
    if map.len() != h * w {
        return Err(Error::Shape(format!("{} values for a {h}x{w} map", map.len())));
    }
    let mut out = Vec::with_capacity(8 + 4 * map.len());
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    for v in map {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_raw(bytes: &[u8]) -> Result<(usize, usize, Vec<f32>)> {
    if bytes.len() < 8 {
        return Err(Error::Format { offset: 0, msg: "raw map header truncated".into() });
    }
    let h = u32::from_le_bytes(bytes[0..4].try_into().expect("4 bytes")) as usize;
    let w = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes")) as usize;
    if bytes.len() != 8 + 4 * h * w {
        return Err(Error::Format {
            offset: 8,
            msg: format!("expected {} payload bytes for {h}x{w}", 4 * h * w),
        });
    }
    let data = bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok((h, w, data))
}

pub fn write_ppm(path: &Path, map: &[f32], h: usize, w: usize) -> Result<()> {
    std::fs::write(path, encode_ppm(map, h, w)?).io_context(|| format!("writing {}", path.display()))
}

pub fn write_raw(path: &Path, map: &[f32], h: usize, w: usize) -> Result<()> {
    std::fs::write(path, encode_raw(map, h, w)?).io_context(|| format!("writing {}", path.display()))
}
