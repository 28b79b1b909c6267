//! Evaluation sweeps over a trained checkpoint.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::artifacts::ArtifactDir;
use super::config::{EvalMetric, ExperimentConfig, Task};
use super::data::{prepare, Prepared};
use super::run::evaluate;
use crate::error::{Error, Result};
use crate::lrp::{attribute, canonize, heatmap, Composite};
use crate::metrics::{
    self, channel_relevance_auc, flipping_curve, random_order, relative_auc_diff, rra,
    ChannelRelevanceProfile, FlipUnit, FlippingCurve, GroundTruthMask,
};
use crate::nn::{checkpoint, Network};
use crate::rng::{stream, tag};
use crate::tensor::Tensor;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub micro_accuracy: Option<f64>,
    pub macro_accuracy: Option<f64>,
    pub rra: Option<Vec<f64>>,
    pub flipping: Option<FlippingCurve>,
    pub flipping_random: Option<FlippingCurve>,
    pub auc: Option<ChannelRelevanceProfile>,
    /// Per-layer relative AUC difference against a baseline model.
    pub auc_relative: Option<Vec<(usize, Option<f64>)>>,
    pub artifacts: Vec<PathBuf>,
}

fn first_n(x: &Tensor, y: &[usize], n: usize) -> (Tensor, Vec<usize>) {
    let idx: Vec<usize> = (0..n.min(x.batch())).collect();
    (x.select(&idx), y[..idx.len()].to_vec())
}

/// Relevance per pixel (`[M, H, W]`) or per point (`[M, N]`) for every
/// sample against its label.
pub fn unit_relevance(
    net: &Network,
    x: &Tensor,
    y: &[usize],
    composite: &Composite,
    task: Task,
    batch_size: usize,
) -> Result<Tensor> {
    let canon = canonize(net)?;
    let m = x.batch();
    let mut parts = Vec::new();
    for start in (0..m).step_by(batch_size.max(1)) {
        let idx: Vec<usize> = (start..(start + batch_size.max(1)).min(m)).collect();
        let record = attribute(&canon, &x.select(&idx), &y[start..start + idx.len()], composite)?;
        let rel = match task {
            Task::Image2d => record.pixel_relevance()?,
            Task::Points3d => record.point_relevance()?,
        };
        parts.extend(rel.data().iter().copied());
    }
    let mut shape = vec![m];
    shape.extend_from_slice(&match task {
        Task::Image2d => x.shape()[2..].to_vec(),
        Task::Points3d => vec![x.shape()[1]],
    });
    Tensor::new(shape, parts)
}

/// Relevance-ordered flipping curve and, optionally, a random-order one,
/// both on the first `eval.flip_samples` test samples.
pub fn flipping_curves(
    net: &Network,
    data: &Prepared,
    cfg: &ExperimentConfig,
    with_random: bool,
) -> Result<(FlippingCurve, Option<FlippingCurve>)> {
    let (x, y) = first_n(&data.test_x, &data.test_y, cfg.eval.flip_samples);
    let rel = unit_relevance(net, &x, &y, &Composite::evaluation(), cfg.task, cfg.eval.batch_size)?;
    let unit = match cfg.task {
        Task::Image2d => FlipUnit::Pixel { fill: data.fill() },
        Task::Points3d => FlipUnit::Point,
    };
    let orders: Vec<Vec<usize>> = (0..x.batch()).map(|s| metrics::descending_order(rel.sample(s))).collect();
    let step = cfg.flip_step();
    let curve = flipping_curve(net, &x, &y, &orders, &unit, step, cfg.eval.batch_size)?;
    let random = if with_random {
        let n = rel.sample_len();
        let orders: Vec<Vec<usize>> = (0..x.batch())
            .map(|s| random_order(n, &mut stream(&[tag::EVAL, s as u64])))
            .collect();
        Some(flipping_curve(net, &x, &y, &orders, &unit, step, cfg.eval.batch_size)?)
    } else {
        None
    };
    Ok((curve, random))
}

/// Foreground mask of a standardized image: pixels whose channel-mean raw
/// intensity exceeds `threshold`.
pub fn foreground_mask(image: &[f32], shape: &[usize], data: &Prepared, threshold: f32) -> Result<GroundTruthMask> {
    let stats = data
        .stats
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("foreground masks need image statistics".into()))?;
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    let plane = h * w;
    let mask = (0..plane)
        .map(|p| {
            let raw: f32 = (0..c).map(|ch| image[ch * plane + p] * stats.std[ch] + stats.mean[ch]).sum::<f32>();
            raw / c as f32 > threshold
        })
        .collect();
    GroundTruthMask::new(h, w, mask)
}

fn rra_scores(net: &Network, data: &Prepared, cfg: &ExperimentConfig) -> Result<Vec<(usize, f64)>> {
    let (x, y) = first_n(&data.test_x, &data.test_y, cfg.eval.flip_samples);
    let rel = unit_relevance(net, &x, &y, &Composite::evaluation(), cfg.task, cfg.eval.batch_size)?;
    let shape = &x.shape()[1..];
    let mut out = Vec::new();
    for s in 0..x.batch() {
        let gt = foreground_mask(x.sample(s), shape, data, cfg.eval.rra_threshold)?;
        if gt.positives() > 0 {
            out.push((s, rra(rel.sample(s), &gt)?));
        }
    }
    Ok(out)
}

fn auc_profile(net: &Network, data: &Prepared, cfg: &ExperimentConfig) -> Result<ChannelRelevanceProfile> {
    let (x, y) = first_n(&data.test_x, &data.test_y, cfg.eval.auc_samples);
    let canon = canonize(net)?;
    let composite = Composite::intermediate(1e-6);
    channel_relevance_auc(&canon, &x, &y, &composite, cfg.eval.auc_mass, cfg.eval.batch_size)
}

/// Optional inputs to [`run_eval`].
#[derive(Clone, Debug, Default)]
pub struct EvalOptions {
    /// Checkpoint of a reference model for relative AUC differences.
    pub baseline: Option<PathBuf>,
}

fn load_checkpoint(path: &Path) -> Result<Network> {
    if !path.is_file() {
        return Err(Error::InvalidArgument(format!("checkpoint {} not found", path.display())));
    }
    checkpoint::load(path)
}

fn accuracy_csv(micro: f64, macro_: f64) -> String {
    format!("# metric=accuracy split=test\nmeasure,value\nmicro,{micro}\nmacro,{macro_}\n")
}

/// Runs the metric suite from `cfg.eval` on a checkpoint and writes one
/// artifact per metric (plus heatmaps) under `<out_dir>/<name>/eval/`.
pub fn run_eval(checkpoint: &Path, cfg: &ExperimentConfig, opts: &EvalOptions) -> Result<EvalReport> {
    let cfg = cfg.clone().resolve();
    cfg.validate()?;
    if cfg.eval.suite.is_empty() {
        return Err(Error::Config("evaluation suite is empty".into()));
    }
    let net = load_checkpoint(checkpoint)?;
    let data = prepare(&cfg)?;
    if net.input_shape() != data.input_shape() {
        return Err(Error::Config(format!(
            "checkpoint expects inputs {:?}, data has {:?}",
            net.input_shape(),
            data.input_shape()
        )));
    }
    let mut dir = ArtifactDir::open(&cfg.out_dir, &cfg.name)?;
    let exp = cfg.name.as_str();
    let mut report = EvalReport::default();
    let step = cfg.flip_step();

    for metric in &cfg.eval.suite {
        match metric {
            EvalMetric::Accuracy => {
                let (_, micro, macro_) = evaluate(&net, &data.test_x, &data.test_y, cfg.eval.batch_size)?;
                report.micro_accuracy = Some(micro);
                report.macro_accuracy = Some(macro_);
                let rel = format!("eval/{}", metrics::csv::file_name(exp, "accuracy", &[("split", "test".into())]));
                report.artifacts.push(dir.write(&rel, accuracy_csv(micro, macro_).as_bytes())?);
            }
            EvalMetric::Rra => {
                if cfg.task != Task::Image2d {
                    continue;
                }
                let scores = rra_scores(&net, &data, &cfg)?;
                let params = [("threshold", cfg.eval.rra_threshold.to_string())];
                let rows: Vec<(f64, f64)> = scores.iter().map(|&(s, v)| (s as f64, v)).collect();
                let name = metrics::csv::file_name(exp, "rra", &params);
                let text = metrics::csv::render("rra", &params, ("sample", "rra"), &rows);
                report.artifacts.push(dir.write(&format!("eval/{name}"), text.as_bytes())?);
                report.rra = Some(scores.into_iter().map(|(_, v)| v).collect());
            }
            EvalMetric::Flipping => {
                let (curve, random) = flipping_curves(&net, &data, &cfg, cfg.eval.flip_random_baseline)?;
                let metric_name = match cfg.task {
                    Task::Image2d => "pixel_flipping",
                    Task::Points3d => "point_flipping",
                };
                for (order, c) in [("relevance", Some(&curve)), ("random", random.as_ref())] {
                    let Some(c) = c else { continue };
                    let params = [("step", step.to_string()), ("order", order.to_string())];
                    let name = metrics::csv::file_name(exp, metric_name, &params);
                    let text = metrics::csv::render(metric_name, &params, ("fraction", "accuracy"), &c.points);
                    report.artifacts.push(dir.write(&format!("eval/{name}"), text.as_bytes())?);
                }
                report.flipping = Some(curve);
                report.flipping_random = random;
            }
            EvalMetric::Auc => {
                let profile = auc_profile(&net, &data, &cfg)?;
                for lp in &profile.layers {
                    let n = lp.normalized.len();
                    let rows: Vec<(f64, f64)> = lp
                        .normalized
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| (if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 }, v))
                        .collect();
                    let params = [("layer", lp.layer.to_string())];
                    let name = metrics::csv::file_name(exp, "channel_profile", &params);
                    let text = metrics::csv::render("channel_profile", &params, ("channel", "share"), &rows);
                    report.artifacts.push(dir.write(&format!("eval/{name}"), text.as_bytes())?);
                }
                let mut summary = String::from("# metric=channel_auc\nlayer,auc\n");
                for lp in &profile.layers {
                    summary.push_str(&format!(
                        "{},{}\n",
                        lp.layer,
                        lp.auc.map(|a| a.to_string()).unwrap_or_else(|| "missing".into())
                    ));
                }
                let name = metrics::csv::file_name(exp, "channel_auc", &[]);
                report.artifacts.push(dir.write(&format!("eval/{name}"), summary.as_bytes())?);
                if let Some(base_path) = &opts.baseline {
                    let base = auc_profile(&load_checkpoint(base_path)?, &data, &cfg)?;
                    let diff = relative_auc_diff(&profile, &base);
                    let mut text = String::from("# metric=channel_auc_relative\nlayer,relative_diff\n");
                    for (layer, d) in &diff {
                        text.push_str(&format!(
                            "{layer},{}\n",
                            d.map(|v| v.to_string()).unwrap_or_else(|| "missing".into())
                        ));
                    }
                    let name = metrics::csv::file_name(exp, "channel_auc_relative", &[]);
                    report.artifacts.push(dir.write(&format!("eval/{name}"), text.as_bytes())?);
                    report.auc_relative = Some(diff);
                }
                report.auc = Some(profile);
            }
        }
    }
    report.artifacts.extend(write_heatmaps(&net, &data, &cfg, &mut dir)?);
    Ok(report)
}

/// Heatmaps for `eval.heatmap_samples` (test-set indices): PPM and raw f32
/// for images, `x,y,z,relevance` CSV for point clouds.
pub fn write_heatmaps(
    net: &Network,
    data: &Prepared,
    cfg: &ExperimentConfig,
    dir: &mut ArtifactDir,
) -> Result<Vec<PathBuf>> {
    let idx: Vec<usize> = cfg
        .eval
        .heatmap_samples
        .iter()
        .copied()
        .filter(|&i| i < data.test_x.batch())
        .collect();
    if idx.is_empty() {
        return Ok(Vec::new());
    }
    let x = data.test_x.select(&idx);
    let y: Vec<usize> = idx.iter().map(|&i| data.test_y[i]).collect();
    let composite = match (cfg.task, data.pixel_bounds()) {
        (Task::Image2d, Some((low, high))) => Composite::visualization(low, high, 1e-6),
        _ => Composite::evaluation(),
    };
    let rel = unit_relevance(net, &x, &y, &composite, cfg.task, cfg.eval.batch_size)?;
    let mut paths = Vec::new();
    for (k, &i) in idx.iter().enumerate() {
        let map = rel.sample(k);
        match cfg.task {
            Task::Image2d => {
                let (h, w) = (rel.shape()[1], rel.shape()[2]);
                let stem = format!("heatmaps/{}_sample{i}", cfg.name);
                paths.push(dir.write(&format!("{stem}.ppm"), &heatmap::encode_ppm(map, h, w)?)?);
                paths.push(dir.write(&format!("{stem}.f32"), &heatmap::encode_raw(map, h, w)?)?);
            }
            Task::Points3d => {
                let mut text = String::from("x,y,z,relevance\n");
                for (p, r) in x.sample(k).chunks(3).zip(map) {
                    text.push_str(&format!("{},{},{},{r}\n", p[0], p[1], p[2]));
                }
                paths.push(dir.write(&format!("heatmaps/{}_sample{i}.csv", cfg.name), text.as_bytes())?);
            }
        }
    }
    Ok(paths)
}
