//! IDX (MNIST-style) and CIFAR-10 binary image loaders, gzip-aware.

use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::ImageSet;
use crate::error::{Error, IoContext, Result};
use crate::tensor::Tensor;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;
const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// Reads a file, transparently inflating gzip content.
pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).io_context(|| format!("reading {}", path.display()))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .io_context(|| format!("inflating {}", path.display()))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn be_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset: offset as u64,
            msg: "truncated header".into(),
        })
}

fn expect_magic(bytes: &[u8], magic: u32) -> Result<()> {
    let found = be_u32(bytes, 0)?;
    if found != magic {
        return Err(Error::Format {
            offset: 0,
            msg: format!("bad magic {found:#010x}, expected {magic:#010x}"),
        });
    }
    Ok(())
}

fn expect_len(bytes: &[u8], header: usize, body: usize) -> Result<()> {
    if bytes.len() != header + body {
        let offset = bytes.len().min(header + body);
        return Err(Error::Format {
            offset: offset as u64,
            msg: format!(
                "expected {} payload bytes after the header, found {}",
                body,
                bytes.len().saturating_sub(header)
            ),
        });
    }
    Ok(())
}

/// Decodes an IDX image file into `[M, 1, rows, cols]` with values in `[0, 1]`.
pub fn decode_idx_images(bytes: &[u8]) -> Result<Tensor> {
    expect_magic(bytes, IMAGE_MAGIC)?;
    let m = be_u32(bytes, 4)? as usize;
    let rows = be_u32(bytes, 8)? as usize;
    let cols = be_u32(bytes, 12)? as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::Format {
            offset: 8,
            msg: format!("degenerate image size {rows}x{cols}"),
        });
    }
    expect_len(bytes, 16, m * rows * cols)?;
    let data = bytes[16..].iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::new(vec![m, 1, rows, cols], data)
}

pub fn decode_idx_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    expect_magic(bytes, LABEL_MAGIC)?;
    let m = be_u32(bytes, 4)? as usize;
    expect_len(bytes, 8, m)?;
    Ok(bytes[8..].iter().map(|&b| b as usize).collect())
}

fn image_set(images: Tensor, labels: Vec<usize>, classes: usize) -> Result<ImageSet> {
    if images.batch() != labels.len() {
        return Err(Error::Shape(format!(
            "{} images but {} labels",
            images.batch(),
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::InvalidArgument(format!("label {bad} outside [0, {classes})")));
    }
    Ok(ImageSet { images, labels, classes })
}

/// Loads an IDX image/label pair. The class count is `max label + 1`.
pub fn load_idx(images: &Path, labels: &Path) -> Result<ImageSet> {
    let x = decode_idx_images(&read_bytes(images)?)?;
    let y = decode_idx_labels(&read_bytes(labels)?)?;
    let classes = y.iter().max().map_or(0, |m| m + 1);
    image_set(x, y, classes)
}

/// Decodes CIFAR-10 binary records (label byte, then R, G, B planes).
pub fn decode_cifar10(bytes: &[u8]) -> Result<ImageSet> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD) {
        return Err(Error::Format {
            offset: (bytes.len() - bytes.len() % CIFAR_RECORD) as u64,
            msg: format!("length {} is not a multiple of {CIFAR_RECORD}", bytes.len()),
        });
    }
    let m = bytes.len() / CIFAR_RECORD;
    let mut data = Vec::with_capacity(m * (CIFAR_RECORD - 1));
    let mut labels = Vec::with_capacity(m);
    for (i, rec) in bytes.chunks(CIFAR_RECORD).enumerate() {
        if rec[0] > 9 {
            return Err(Error::Format {
                offset: (i * CIFAR_RECORD) as u64,
                msg: format!("label byte {} outside 0..=9", rec[0]),
            });
        }
        labels.push(rec[0] as usize);
        data.extend(rec[1..].iter().map(|&b| b as f32 / 255.0));
    }
    image_set(Tensor::new(vec![m, 3, 32, 32], data)?, labels, 10)
}

/// Loads and concatenates CIFAR-10 batch files.
pub fn load_cifar10(paths: &[&Path]) -> Result<ImageSet> {
    let mut bytes = Vec::new();
    for p in paths {
        bytes.extend(read_bytes(p)?);
    }
    decode_cifar10(&bytes)
}

/// Encodes `[M, 1, H, W]` images in `[0, 1]` as an IDX image file.
pub fn encode_idx_images(images: &Tensor) -> Result<Vec<u8>> {
    let [m, 1, h, w] = *images.shape() else {
        return Err(Error::Shape(format!(
            "IDX images must be [M, 1, H, W], got {:?}",
            images.shape()
        )));
    };
    let mut out = Vec::with_capacity(16 + images.len());
    for v in [IMAGE_MAGIC, m as u32, h as u32, w as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend(images.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn encode_idx_labels(labels: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend(labels.iter().map(|&l| l as u8));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bad_magic_reports_offset_zero() {
        let bytes = [0, 0, 8, 1, 0, 0, 0, 0];
        match decode_idx_images(&bytes) {
            Err(Error::Format { offset: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_reports_end_offset() {
        let mut bytes = encode_idx_labels(&[1, 2, 3]);
        bytes.pop();
        match decode_idx_labels(&bytes) {
            Err(Error::Format { offset: 10, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn cifar_record_layout() {
        let mut rec = vec![7u8];
        rec.extend((0..3072).map(|i| (i / 1024) as u8 * 100));
        let set = decode_cifar10(&rec).unwrap();
        assert_eq!(set.images.shape(), &[1, 3, 32, 32]);
        assert_eq!(set.labels, vec![7]);
        assert_eq!(set.images.data()[1024], 100.0 / 255.0);
        rec[0] = 10;
        assert!(decode_cifar10(&rec).is_err());
        assert!(decode_cifar10(&rec[..100]).is_err());
    }
}
