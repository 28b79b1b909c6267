//! Binary network checkpoints.
//!
//! Layout (all integers `u32` little-endian, all parameters `f32` little-endian):
//!
//! ```text
//! "RDNN"  version
//! rank  dims[rank]  classes
//! layer_count
//! per layer: kind_tag  hyper_count  hyper[hyper_count]  blob_count  (len  f32[len])*
//! ```
//!
//! Hyperparameters per kind: `Linear`/`SharedPointMlp` → (in, out);
//! `Conv2d` → (in, out, kernel, stride, padding); `BatchNorm2d` → (channels);
//! `MaxPool2d` → (kernel, stride). Blobs: weight, bias for affine layers;
//! gamma, beta, running mean, running var, [eps, momentum] for batch norm.
//!
//! A JSON sidecar (`<file>.json`) describes the same network in readable form.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::layer::{BatchNorm2d, Conv2d, Layer, LayerKind, Linear, MaxPool2d};
use super::network::Network;
use crate::error::{Error, IoContext, Result};

pub const MAGIC: &[u8; 4] = b"RDNN";
pub const VERSION: u32 = 1;

fn kind_tag(kind: LayerKind) -> u32 {
    match kind {
        LayerKind::Linear => 0,
        LayerKind::Conv2d => 1,
        LayerKind::BatchNorm2d => 2,
        LayerKind::Relu => 3,
        LayerKind::MaxPool2d => 4,
        LayerKind::GlobalMaxPool => 5,
        LayerKind::Flatten => 6,
        LayerKind::SharedPointMlp => 7,
    }
}

fn hyper_and_blobs(layer: &Layer) -> (Vec<u32>, Vec<Vec<f32>>) {
    match layer {
        Layer::Linear(l) | Layer::SharedPointMlp(l) => (
            vec![l.in_features as u32, l.out_features as u32],
            vec![l.weight.clone(), l.bias.clone()],
        ),
        Layer::Conv2d(c) => (
            vec![
                c.in_channels as u32,
                c.out_channels as u32,
                c.kernel as u32,
                c.stride as u32,
                c.padding as u32,
            ],
            vec![c.weight.clone(), c.bias.clone()],
        ),
        Layer::BatchNorm2d(bn) => (
            vec![bn.channels as u32],
            vec![
                bn.gamma.clone(),
                bn.beta.clone(),
                bn.running_mean.clone(),
                bn.running_var.clone(),
                vec![bn.eps, bn.momentum],
            ],
        ),
        Layer::MaxPool2d(p) => (vec![p.kernel as u32, p.stride as u32], Vec::new()),
        Layer::Relu | Layer::GlobalMaxPool | Layer::Flatten => (Vec::new(), Vec::new()),
    }
}

pub fn encode(net: &Network) -> Vec<u8> {
    let mut out = Vec::new();
    let put = |v: u32, out: &mut Vec<u8>| out.extend_from_slice(&v.to_le_bytes());
    out.extend_from_slice(MAGIC);
    put(VERSION, &mut out);
    put(net.input_shape().len() as u32, &mut out);
    for &d in net.input_shape() {
        put(d as u32, &mut out);
    }
    put(net.classes() as u32, &mut out);
    put(net.layers().len() as u32, &mut out);
    for layer in net.layers() {
        put(kind_tag(layer.kind()), &mut out);
        let (hyper, blobs) = hyper_and_blobs(layer);
        put(hyper.len() as u32, &mut out);
        for h in hyper {
            put(h, &mut out);
        }
        put(blobs.len() as u32, &mut out);
        for blob in blobs {
            put(blob.len() as u32, &mut out);
            for v in blob {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn fail(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos as u64,
            msg: msg.into(),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self
            .bytes
            .get(self.pos..self.pos + 4)
            .ok_or_else(|| self.fail("unexpected end of checkpoint"))?;
        self.pos += 4;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    fn blob(&mut self) -> Result<Vec<f32>> {
        let len = self.u32()? as usize;
        let end = self.pos + len * 4;
        let b = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| self.fail(format!("parameter blob of {len} values truncated")))?;
        self.pos = end;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<Network> {
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(Error::Format {
            offset: 0,
            msg: "missing RDNN magic".into(),
        });
    }
    let mut c = Cursor { bytes, pos: 4 };
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            msg: format!("unsupported checkpoint version {version}"),
        });
    }
    let rank = c.u32()? as usize;
    let input_shape = (0..rank)
        .map(|_| c.u32().map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let classes = c.u32()? as usize;
    let count = c.u32()? as usize;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let at = c.pos;
        let tag = c.u32()?;
        let nh = c.u32()? as usize;
        let hyper = (0..nh)
            .map(|_| c.u32().map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let nb = c.u32()? as usize;
        let mut blobs = (0..nb).map(|_| c.blob()).collect::<Result<Vec<_>>>()?;
        let bad = |what: &str| Error::Format {
            offset: at as u64,
            msg: format!("layer tag {tag}: {what}"),
        };
        let mut take = |n: usize| -> Result<Vec<Vec<f32>>> {
            if blobs.len() != n {
                return Err(bad(&format!("expected {n} blobs, found {}", blobs.len())));
            }
            Ok(std::mem::take(&mut blobs))
        };
        let layer = match (tag, hyper.as_slice()) {
            (0 | 7, &[i, o]) => {
                let mut b = take(2)?;
                let l = Linear {
                    in_features: i,
                    out_features: o,
                    bias: b.pop().expect("2 blobs"),
                    weight: b.pop().expect("2 blobs"),
                };
                if tag == 0 {
                    Layer::Linear(l)
                } else {
                    Layer::SharedPointMlp(l)
                }
            }
            (1, &[i, o, k, s, p]) => {
                let mut b = take(2)?;
                Layer::Conv2d(Conv2d {
                    in_channels: i,
                    out_channels: o,
                    kernel: k,
                    stride: s,
                    padding: p,
                    bias: b.pop().expect("2 blobs"),
                    weight: b.pop().expect("2 blobs"),
                })
            }
            (2, &[ch]) => {
                let b = take(5)?;
                if b[4].len() != 2 {
                    return Err(bad("batch-norm settings blob must hold [eps, momentum]"));
                }
                Layer::BatchNorm2d(BatchNorm2d {
                    channels: ch,
                    gamma: b[0].clone(),
                    beta: b[1].clone(),
                    running_mean: b[2].clone(),
                    running_var: b[3].clone(),
                    eps: b[4][0],
                    momentum: b[4][1],
                })
            }
            (3, &[]) => {
                take(0)?;
                Layer::Relu
            }
            (4, &[k, s]) => {
                take(0)?;
                Layer::MaxPool2d(MaxPool2d { kernel: k, stride: s })
            }
            (5, &[]) => {
                take(0)?;
                Layer::GlobalMaxPool
            }
            (6, &[]) => {
                take(0)?;
                Layer::Flatten
            }
            _ => return Err(bad("unknown kind or wrong hyperparameter count")),
        };
        layers.push(layer);
    }
    if c.pos != bytes.len() {
        return Err(c.fail("trailing bytes after last layer"));
    }
    Network::new(input_shape, classes, layers)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerManifest {
    pub index: usize,
    pub kind: String,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    pub param_shapes: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format: String,
    pub version: u32,
    pub input_shape: Vec<usize>,
    pub classes: usize,
    pub param_count: usize,
    pub layers: Vec<LayerManifest>,
}

pub fn manifest(net: &Network) -> Result<CheckpointManifest> {
    let shapes = net.layer_shapes()?;
    let layers = net
        .layers()
        .iter()
        .enumerate()
        .map(|(i, layer)| {
            let param_shapes = match layer {
                Layer::Linear(l) | Layer::SharedPointMlp(l) => {
                    vec![vec![l.out_features, l.in_features], vec![l.out_features]]
                }
                Layer::Conv2d(c) => vec![
                    vec![c.out_channels, c.in_channels, c.kernel, c.kernel],
                    vec![c.out_channels],
                ],
                Layer::BatchNorm2d(bn) => vec![vec![bn.channels]; 4],
                _ => Vec::new(),
            };
            LayerManifest {
                index: i,
                kind: layer.kind().name().to_string(),
                input_shape: shapes[i].clone(),
                output_shape: shapes[i + 1].clone(),
                param_shapes,
            }
        })
        .collect();
    Ok(CheckpointManifest {
        format: "RDNN".into(),
        version: VERSION,
        input_shape: net.input_shape().to_vec(),
        classes: net.classes(),
        param_count: net.param_count(),
        layers,
    })
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes the binary checkpoint and its JSON sidecar; returns the sidecar path.
pub fn save(net: &Network, path: &Path) -> Result<PathBuf> {
    let mut f = std::fs::File::create(path).io_context(|| format!("creating {}", path.display()))?;
    f.write_all(&encode(net))
        .io_context(|| format!("writing {}", path.display()))?;
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(&manifest(net)?)?;
    std::fs::write(&side, text + "\n").io_context(|| format!("writing {}", side.display()))?;
    Ok(side)
}

pub fn load(path: &Path) -> Result<Network> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .io_context(|| format!("reading checkpoint {}", path.display()))?;
    decode(&bytes)
}
