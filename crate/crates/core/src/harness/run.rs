//! One training run: attribute → augment → step, per batch.

use std::path::PathBuf;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::artifacts::ArtifactDir;
use super::config::{AugmentKind, ExperimentConfig, Task};
use super::data::{prepare, Prepared};
use crate::augment::{
    apply_random_erasing, apply_reldrop_2d, apply_reldrop_3d, OcclusionRegion, RelevanceMap2D,
};
use crate::error::{Error, Result};
use crate::lrp::{attribute, canonize, Composite};
use crate::metrics::{accuracy, AccuracyMode};
use crate::nn::{checkpoint, softmax_cross_entropy, Network, Trainer};
use crate::rng::{stream, tag};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f32,
    /// Mean loss over the (augmented) training batches.
    pub train_loss: f64,
    /// Clean training-set accuracy, when enabled.
    pub train_accuracy: Option<f64>,
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub test_macro_accuracy: f64,
}

/// Wall-clock seconds spent per phase.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub attribution: f64,
    pub augmentation: f64,
    pub step: f64,
    pub evaluation: f64,
    pub batches: usize,
}

impl PhaseTimings {
    /// Mean training time per batch (attribution + augmentation + step).
    pub fn per_batch(&self) -> f64 {
        (self.attribution + self.augmentation + self.step) / self.batches.max(1) as f64
    }
}

/// Fingerprints of the weights used for attribution and of the weights the
/// optimizer step started from, for one batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotCheck {
    pub epoch: usize,
    pub batch: usize,
    pub attributed: u64,
    pub stepped: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub name: String,
    pub seed: u64,
    pub augmentation: AugmentKind,
    pub epochs: Vec<EpochRecord>,
    pub timings: PhaseTimings,
    pub checkpoint: Option<PathBuf>,
    /// Reason the run stopped early, if it did.
    pub aborted: Option<String>,
    pub snapshot_log: Vec<SnapshotCheck>,
}

impl RunRecord {
    pub fn final_epoch(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// One applied image occlusion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Audit2D {
    pub epoch: usize,
    pub batch: usize,
    pub sample: usize,
    pub region: OcclusionRegion,
}

/// One point-cloud mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Audit3D {
    pub epoch: usize,
    pub batch: usize,
    pub sample: usize,
    pub dropped: usize,
    pub alpha: f32,
    pub beta: f32,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub record: RunRecord,
    pub net: Network,
    pub audit2d: Vec<Audit2D>,
    pub audit3d: Vec<Audit3D>,
}

pub fn audit2d_csv(rows: &[Audit2D]) -> String {
    let mut out = String::from("epoch,batch,sample,x_cen,y_cen,width,height,area,aspect,x0,x1,y0,y1,clipped\n");
    for a in rows {
        let r = &a.region;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            a.epoch, a.batch, a.sample, r.x_cen, r.y_cen, r.width, r.height, r.area, r.aspect, r.x0, r.x1,
            r.y0, r.y1, r.clipped as u8
        ));
    }
    out
}

pub fn audit3d_csv(rows: &[Audit3D]) -> String {
    let mut out = String::from("epoch,batch,sample,dropped,alpha,beta\n");
    for a in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            a.epoch, a.batch, a.sample, a.dropped, a.alpha, a.beta
        ));
    }
    out
}

/// Loss, micro and macro accuracy of `net` in inference mode.
pub fn evaluate(net: &Network, x: &Tensor, y: &[usize], batch_size: usize) -> Result<(f64, f64, f64)> {
    let m = x.batch();
    let step = batch_size.max(1);
    let mut preds = Vec::with_capacity(m);
    let mut loss = 0.0;
    for start in (0..m).step_by(step) {
        let idx: Vec<usize> = (start..(start + step).min(m)).collect();
        let logits = net.logits(&x.select(&idx))?;
        let (l, _) = softmax_cross_entropy(&logits, &y[start..start + idx.len()])?;
        loss += l * idx.len() as f64;
        preds.extend(logits.argmax_rows());
    }
    Ok((
        loss / m as f64,
        accuracy(&preds, y, AccuracyMode::Micro)?,
        accuracy(&preds, y, AccuracyMode::Macro)?,
    ))
}

struct Augmenter<'a> {
    cfg: &'a ExperimentConfig,
    composite: Composite,
    fill: Vec<f32>,
    seed: u64,
    audit2d: Vec<Audit2D>,
    audit3d: Vec<Audit3D>,
}

impl Augmenter<'_> {
    /// Occludes `x` in place. Returns seconds spent attributing and augmenting.
    fn apply(
        &mut self,
        snapshot: &Network,
        x: &mut Tensor,
        labels: &[usize],
        epoch: usize,
        batch: usize,
    ) -> Result<(f64, f64)> {
        let kind = self.cfg.augmentation;
        if kind == AugmentKind::None {
            return Ok((0.0, 0.0));
        }
        let t0 = Instant::now();
        let relevance = if kind == AugmentKind::Reldrop {
            let canon = canonize(snapshot)?;
            let record = attribute(&canon, x, labels, &self.composite)?;
            Some(match self.cfg.task {
                Task::Image2d => record.pixel_relevance()?,
                Task::Points3d => record.point_relevance()?,
            })
        } else {
            None
        };
        let attribution = t0.elapsed().as_secs_f64();

        let t1 = Instant::now();
        let shape = x.shape()[1..].to_vec();
        for s in 0..x.batch() {
            let mut rng = stream(&[self.seed, tag::AUGMENT, epoch as u64, batch as u64, s as u64]);
            let sample = x.sample_mut(s);
            match (self.cfg.task, &relevance) {
                (Task::Image2d, Some(rel)) => {
                    let map = RelevanceMap2D::new(rel.sample(s).to_vec(), shape[1], shape[2])?;
                    if let Some(region) =
                        apply_reldrop_2d(sample, &shape, &map, &self.cfg.augment2d, &self.fill, &mut rng)?
                    {
                        self.audit2d.push(Audit2D { epoch, batch, sample: s, region });
                    }
                }
                (Task::Image2d, None) => {
                    if let Some(region) =
                        apply_random_erasing(sample, &shape, &self.cfg.augment2d, &self.fill, &mut rng)?
                    {
                        self.audit2d.push(Audit2D { epoch, batch, sample: s, region });
                    }
                }
                (Task::Points3d, Some(rel)) => {
                    let mask = apply_reldrop_3d(sample, rel.sample(s), &self.cfg.augment3d, &mut rng)?;
                    self.audit3d.push(Audit3D {
                        epoch,
                        batch,
                        sample: s,
                        dropped: mask.dropped(),
                        alpha: self.cfg.augment3d.alpha,
                        beta: self.cfg.augment3d.beta,
                    });
                }
                (Task::Points3d, None) => unreachable!("rejected by config validation"),
            }
        }
        Ok((attribution, t1.elapsed().as_secs_f64()))
    }
}

/// Trains one model on prepared data with the given seed.
///
/// A non-finite loss stops training; the returned network is then the last
/// one that produced a finite loss and `record.aborted` says why.
pub fn train_single(cfg: &ExperimentConfig, data: &Prepared, seed: u64) -> Result<RunOutput> {
    cfg.validate()?;
    let mut train_cfg = cfg.train_config();
    train_cfg.seed = seed;
    let net = cfg.network_spec().build(data.input_shape(), data.classes, seed)?;
    let mut trainer = Trainer::new(net);
    let mut aug = Augmenter {
        cfg,
        composite: cfg.composite(),
        fill: data.fill(),
        seed,
        audit2d: Vec::new(),
        audit3d: Vec::new(),
    };
    let mut record = RunRecord {
        name: cfg.name.clone(),
        seed,
        augmentation: cfg.augmentation,
        epochs: Vec::new(),
        timings: PhaseTimings::default(),
        checkpoint: None,
        aborted: None,
        snapshot_log: Vec::new(),
    };
    let m = data.train_x.batch();
    let bs = train_cfg.batch_size;

    'epochs: for epoch in 0..train_cfg.epochs {
        let lr = train_cfg.lr_at(epoch);
        let mut order: Vec<usize> = (0..m).collect();
        order.shuffle(&mut stream(&[seed, tag::SHUFFLE, epoch as u64]));
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(bs).enumerate() {
            let mut x = data.train_x.select(idx);
            let labels: Vec<usize> = idx.iter().map(|&i| data.train_y[i]).collect();

            let snapshot = trainer.net.clone();
            let attributed = snapshot.fingerprint();
            let (t_attr, t_aug) = aug.apply(&snapshot, &mut x, &labels, epoch, b)?;

            let stepped = trainer.net.fingerprint();
            let t0 = Instant::now();
            let loss = match trainer.step(&x, &labels, &train_cfg, lr) {
                Ok(l) => l,
                Err(Error::NonFinite(msg)) => {
                    record.aborted = Some(format!("epoch {epoch}, batch {b}: {msg}"));
                    break 'epochs;
                }
                Err(e) => return Err(e),
            };
            record.timings.step += t0.elapsed().as_secs_f64();
            record.timings.attribution += t_attr;
            record.timings.augmentation += t_aug;
            record.timings.batches += 1;
            record.snapshot_log.push(SnapshotCheck { epoch, batch: b, attributed, stepped });
            loss_sum += loss * idx.len() as f64;
        }

        let t0 = Instant::now();
        let (test_loss, test_accuracy, test_macro_accuracy) =
            evaluate(&trainer.net, &data.test_x, &data.test_y, cfg.eval.batch_size)?;
        let train_accuracy = if cfg.eval.train_accuracy {
            Some(evaluate(&trainer.net, &data.train_x, &data.train_y, cfg.eval.batch_size)?.1)
        } else {
            None
        };
        record.timings.evaluation += t0.elapsed().as_secs_f64();
        record.epochs.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / m as f64,
            train_accuracy,
            test_loss,
            test_accuracy,
            test_macro_accuracy,
        });
    }

    Ok(RunOutput {
        record,
        net: trainer.net,
        audit2d: aug.audit2d,
        audit3d: aug.audit3d,
    })
}

/// Per-epoch CSV of a run (no timings, so reruns are byte-identical).
pub fn epochs_csv(record: &RunRecord) -> String {
    let mut out = String::from("epoch,lr,train_loss,train_accuracy,test_loss,test_accuracy,test_macro_accuracy\n");
    for e in &record.epochs {
        let train_acc = e.train_accuracy.map(|a| a.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            e.epoch, e.lr, e.train_loss, train_acc, e.test_loss, e.test_accuracy, e.test_macro_accuracy
        ));
    }
    out
}

/// Trains one model per configured seed and writes everything under
/// `<out_dir>/<name>/`: per-epoch CSVs, run records, checkpoints and audit logs.
pub fn run_training(cfg: &ExperimentConfig) -> Result<Vec<RunRecord>> {
    let cfg = cfg.clone().resolve();
    cfg.validate()?;
    let data = prepare(&cfg)?;
    let mut dir = ArtifactDir::open(&cfg.out_dir, &cfg.name)?;
    dir.write("config.toml", cfg.to_toml()?.as_bytes())?;
    let mut records = Vec::new();
    for &seed in &cfg.seeds {
        let mut out = train_single(&cfg, &data, seed)?;
        let stem = format!("seed{seed}");
        if cfg.checkpoint || out.record.aborted.is_some() {
            let rel = format!("{stem}/model.rdnn");
            let path = dir.path(&rel);
            std::fs::create_dir_all(path.parent().expect("has parent"))
                .map_err(|source| Error::Io { context: format!("creating {}", path.display()), source })?;
            checkpoint::save(&out.net, &path)?;
            dir.register(&rel)?;
            dir.register(&format!("{rel}.json"))?;
            out.record.checkpoint = Some(path);
        }
        dir.write(&format!("{stem}/epochs.csv"), epochs_csv(&out.record).as_bytes())?;
        if cfg.audit {
            match cfg.task {
                Task::Image2d => dir.write(&format!("{stem}/audit2d.csv"), audit2d_csv(&out.audit2d).as_bytes())?,
                Task::Points3d => dir.write(&format!("{stem}/audit3d.csv"), audit3d_csv(&out.audit3d).as_bytes())?,
            };
        }
        let mut json = serde_json::to_string_pretty(&out.record)?;
        json.push('\n');
        dir.write(&format!("{stem}/record.json"), json.as_bytes())?;
        if let Some(reason) = &out.record.aborted {
            return Err(Error::NonFinite(format!(
                "seed {seed} aborted ({reason}); last good checkpoint kept"
            )));
        }
        records.push(out.record);
    }
    Ok(records)
}
