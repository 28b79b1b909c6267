//! Little-endian binary point-cloud files.
//!
//! `<stem>.clouds`: `u32 M, u32 N, u32 3`, then `M·N·3` f32 values.
//! `<stem>.labels`: `u32 M`, then `M` u32 labels.
//! `<stem>.classes`: one class name per line.

use std::path::{Path, PathBuf};

use super::CloudDataset;
use crate::error::{Error, IoContext, Result};
use crate::tensor::Tensor;

fn le_u32(bytes: &[u8], offset: usize) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            offset: offset as u64,
            msg: "truncated header".into(),
        })
}

pub fn encode_clouds(clouds: &Tensor) -> Result<Vec<u8>> {
    let [m, n, 3] = *clouds.shape() else {
        return Err(Error::Shape(format!("clouds must be [M, N, 3], got {:?}", clouds.shape())));
    };
    let mut out = Vec::with_capacity(12 + 4 * clouds.len());
    for v in [m as u32, n as u32, 3] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in clouds.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_clouds(bytes: &[u8]) -> Result<Tensor> {
    let m = le_u32(bytes, 0)? as usize;
    let n = le_u32(bytes, 4)? as usize;
    let d = le_u32(bytes, 8)?;
    if d != 3 {
        return Err(Error::Format { offset: 8, msg: format!("point dimension {d}, expected 3") });
    }
    let body = &bytes[12..];
    if body.len() != 4 * m * n * 3 {
        return Err(Error::Format {
            offset: 12 + (body.len().min(4 * m * n * 3)) as u64,
            msg: format!("expected {} payload bytes, found {}", 4 * m * n * 3, body.len()),
        });
    }
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Tensor::new(vec![m, n, 3], data)
}

pub fn encode_labels(labels: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 4 * labels.len());
    out.extend_from_slice(&(labels.len() as u32).to_le_bytes());
    for &l in labels {
        out.extend_from_slice(&(l as u32).to_le_bytes());
    }
    out
}

pub fn decode_labels(bytes: &[u8]) -> Result<Vec<usize>> {
    let m = le_u32(bytes, 0)? as usize;
    if bytes.len() != 4 + 4 * m {
        return Err(Error::Format {
            offset: bytes.len().min(4 + 4 * m) as u64,
            msg: format!("expected {m} labels"),
        });
    }
    Ok(bytes[4..]
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
        .collect())
}

fn paths(stem: &Path) -> [PathBuf; 3] {
    ["clouds", "labels", "classes"].map(|ext| stem.with_extension(ext))
}

pub fn save(ds: &CloudDataset, stem: &Path) -> Result<()> {
    let [c, l, n] = paths(stem);
    std::fs::write(&c, encode_clouds(&ds.clouds)?).io_context(|| format!("writing {}", c.display()))?;
    std::fs::write(&l, encode_labels(&ds.labels)).io_context(|| format!("writing {}", l.display()))?;
    let mut names = ds.class_names.join("\n");
    names.push('\n');
    std::fs::write(&n, names).io_context(|| format!("writing {}", n.display()))?;
    Ok(())
}

pub fn load(stem: &Path) -> Result<CloudDataset> {
    let [c, l, n] = paths(stem);
    let clouds = decode_clouds(&std::fs::read(&c).io_context(|| format!("reading {}", c.display()))?)?;
    let labels = decode_labels(&std::fs::read(&l).io_context(|| format!("reading {}", l.display()))?)?;
    let class_names: Vec<String> = std::fs::read_to_string(&n)
        .io_context(|| format!("reading {}", n.display()))?
        .lines()
        .map(str::to_string)
        .collect();
    if labels.len() != clouds.batch() {
        return Err(Error::Shape(format!("{} clouds but {} labels", clouds.batch(), labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&x| x >= class_names.len()) {
        return Err(Error::InvalidArgument(format!("label {bad} without a class name")));
    }
    Ok(CloudDataset { clouds, labels, class_names })
}

/// `x,y,z,dropped` rows for one cloud, for external plotting.
pub fn points_csv(cloud: &[f32], dropped: &[bool]) -> String {
    let mut out = String::from("x,y,z,dropped\n");
    for (p, &d) in cloud.chunks(3).zip(dropped) {
        out.push_str(&format!("{},{},{},{}\n", p[0], p[1], p[2], d as u8));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_errors_have_offsets() {
        let mut bytes = encode_clouds(&Tensor::zeros(&[2, 4, 3])).unwrap();
        bytes[8] = 2;
        assert!(matches!(decode_clouds(&bytes), Err(Error::Format { offset: 8, .. })));
        bytes[8] = 3;
        bytes.truncate(20);
        assert!(matches!(decode_clouds(&bytes), Err(Error::Format { offset: 20, .. })));
    }
}
