use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use reldrop::data::{cloud_io, generate_shapes, Primitive, ShapeConfig};
use reldrop::harness::{
    run_eval, run_grid, run_training, summary_csv, ArtifactDir, AugmentKind, EvalMetric,
    EvalOptions, ExperimentConfig, GridCell, Lattice, Task,
};
use reldrop::{Error, Result};

#[derive(Parser)]
#[command(name = "reldrop", version, about = "Relevance-guided occlusion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model per seed.
    Train(Common),
    /// Train every cell of a parameter lattice and summarize over seeds.
    Grid(GridArgs),
    /// Run the metric suite on a checkpoint.
    Eval(EvalArgs),
    /// Write relevance heatmaps for selected test samples.
    Attribute(AttributeArgs),
    /// Pixel or point flipping curve for a checkpoint.
    Flip(FlipArgs),
    /// Generate a synthetic point-cloud dataset.
    GenData(GenDataArgs),
}

/// Flags shared by every experiment command. Each overrides the config file.
#[derive(Args, Clone, Debug)]
struct Common {
    /// TOML experiment config; defaults are used when absent.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Output root; runs land in `<out>/<name>/`.
    #[arg(long, env = "RELDROP_OUT")]
    out: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long, value_parser = parse_task)]
    task: Option<Task>,
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f32>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long, value_parser = parse_augment)]
    augmentation: Option<AugmentKind>,
    /// Occlusion probability (images).
    #[arg(long)]
    p: Option<f32>,
    #[arg(long)]
    alpha: Option<f32>,
    #[arg(long)]
    beta: Option<f32>,
    /// ε of every ε-rule in the augmentation composite.
    #[arg(long)]
    epsilon: Option<f32>,
    /// Write per-occlusion audit CSVs.
    #[arg(long)]
    audit: bool,
    /// Print the fully resolved config as TOML and exit.
    #[arg(long)]
    print_effective_config: bool,
}

#[derive(Args)]
struct GridArgs {
    #[command(flatten)]
    common: Common,
    /// One row per augmentation kind, in addition to the lattice.
    #[arg(long = "kinds", value_delimiter = ',', value_parser = parse_augment)]
    kinds: Vec<AugmentKind>,
    #[arg(long = "alphas", value_delimiter = ',')]
    alphas: Vec<f32>,
    #[arg(long = "betas", value_delimiter = ',')]
    betas: Vec<f32>,
    #[arg(long = "ps", value_delimiter = ',')]
    ps: Vec<f32>,
    #[arg(long = "epsilons", value_delimiter = ',')]
    epsilons: Vec<f32>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Metrics to run (accuracy, rra, flipping, auc).
    #[arg(long, value_delimiter = ',', value_parser = parse_metric)]
    suite: Option<Vec<EvalMetric>>,
    /// Reference checkpoint for relative channel AUC.
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Test-set indices to render as heatmaps.
    #[arg(long, value_delimiter = ',')]
    heatmaps: Option<Vec<usize>>,
}

#[derive(Args)]
struct AttributeArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Test-set indices.
    #[arg(long, value_delimiter = ',', required = true)]
    samples: Vec<usize>,
}

#[derive(Args)]
struct FlipArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Units removed per step.
    #[arg(long)]
    step: Option<usize>,
    /// Number of test samples.
    #[arg(long)]
    samples: Option<usize>,
    /// Also record a random-order curve.
    #[arg(long)]
    random: bool,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, env = "RELDROP_OUT", default_value = "runs")]
    out: PathBuf,
    #[arg(long, default_value = "shapes")]
    name: String,
    #[arg(long, value_delimiter = ',', value_parser = parse_primitive)]
    primitives: Option<Vec<Primitive>>,
    #[arg(long, default_value_t = 40)]
    per_class: usize,
    #[arg(long, default_value_t = 1024)]
    points: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.01)]
    jitter: f32,
    #[arg(long, default_value_t = 0.0)]
    scale_jitter: f32,
    #[arg(long, default_value_t = 0.0)]
    outliers: f32,
    #[arg(long, default_value_t = 0.0)]
    cutout: f32,
}

fn parse_enum<T: serde::de::DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("unknown value {s:?}"))
}

fn parse_task(s: &str) -> std::result::Result<Task, String> {
    parse_enum(s)
}

fn parse_augment(s: &str) -> std::result::Result<AugmentKind, String> {
    parse_enum(s)
}

fn parse_metric(s: &str) -> std::result::Result<EvalMetric, String> {
    parse_enum(s)
}

fn parse_primitive(s: &str) -> std::result::Result<Primitive, String> {
    s.parse::<Primitive>().map_err(|e| e.to_string())
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(task) = self.task {
            if self.config.is_some() && task != cfg.task {
                return Err(Error::Config(format!(
                    "--task {task:?} conflicts with the config file's task {:?}",
                    cfg.task
                )));
            }
            cfg.task = task;
        }
        let mut cfg = cfg.resolve();
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(name) = &self.name {
            cfg.name = name.clone();
        }
        if let Some(seeds) = &self.seeds {
            cfg.seeds = seeds.clone();
        }
        let train = cfg.train.as_mut().expect("resolved");
        if let Some(e) = self.epochs {
            train.epochs = e;
        }
        if let Some(lr) = self.lr {
            train.lr = lr;
        }
        if let Some(b) = self.batch_size {
            train.batch_size = b;
        }
        if let Some(a) = self.augmentation {
            cfg.augmentation = a;
        }
        if let Some(p) = self.p {
            cfg.augment2d.p = p;
        }
        if let Some(a) = self.alpha {
            cfg.augment3d.alpha = a;
        }
        if let Some(b) = self.beta {
            cfg.augment3d.beta = b;
        }
        if let Some(e) = self.epsilon {
            cfg.composite = cfg.composite.take().map(|c| c.with_epsilon(e));
        }
        cfg.audit |= self.audit;
        cfg.validate()?;
        Ok(cfg)
    }
}

enum Outcome {
    Done(serde_json::Value),
    Printed,
}

fn effective(common: &Common, cfg: &ExperimentConfig) -> Result<Option<Outcome>> {
    if common.print_effective_config {
        print!("{}", cfg.to_toml()?);
        return Ok(Some(Outcome::Printed));
    }
    Ok(None)
}

fn train(common: &Common) -> Result<Outcome> {
    let cfg = common.resolve()?;
    if let Some(o) = effective(common, &cfg)? {
        return Ok(o);
    }
    let records = run_training(&cfg)?;
    let runs: Vec<_> = records
        .iter()
        .map(|r| {
            let last = r.final_epoch();
            json!({
                "seed": r.seed,
                "test_accuracy": last.map(|e| e.test_accuracy),
                "test_macro_accuracy": last.map(|e| e.test_macro_accuracy),
                "checkpoint": r.checkpoint,
                "seconds_per_batch": r.timings.per_batch(),
            })
        })
        .collect();
    Ok(Outcome::Done(json!({ "command": "train", "dir": cfg.out_dir.join(&cfg.name), "runs": runs })))
}

fn grid(args: &GridArgs) -> Result<Outcome> {
    let cfg = args.common.resolve()?;
    if let Some(o) = effective(&args.common, &cfg)? {
        return Ok(o);
    }
    let mut cells: Vec<GridCell> = args
        .kinds
        .iter()
        .map(|&k| GridCell { augmentation: Some(k), ..Default::default() })
        .collect();
    let lattice = Lattice {
        alpha: args.alphas.clone(),
        beta: args.betas.clone(),
        p: args.ps.clone(),
        epsilon: args.epsilons.clone(),
    };
    cells.extend(lattice.cells());
    let rows = run_grid(&cfg, &cells)?;
    Ok(Outcome::Done(json!({
        "command": "grid",
        "dir": cfg.out_dir.join(&cfg.name),
        "cells": rows.len(),
        "summary": summary_csv(&rows),
        "failures": rows.iter().map(|r| r.failures.len()).sum::<usize>(),
    })))
}

fn eval_cmd(args: &EvalArgs) -> Result<Outcome> {
    let mut cfg = args.common.resolve()?;
    if let Some(suite) = &args.suite {
        cfg.eval.suite = suite.clone();
    }
    if let Some(h) = &args.heatmaps {
        cfg.eval.heatmap_samples = h.clone();
    }
    if let Some(o) = effective(&args.common, &cfg)? {
        return Ok(o);
    }
    let report = run_eval(&args.checkpoint, &cfg, &EvalOptions { baseline: args.baseline.clone() })?;
    Ok(Outcome::Done(json!({
        "command": "eval",
        "micro_accuracy": report.micro_accuracy,
        "macro_accuracy": report.macro_accuracy,
        "mean_rra": report.rra.as_ref().map(|v| v.iter().sum::<f64>() / v.len().max(1) as f64),
        "artifacts": report.artifacts,
    })))
}

fn attribute_cmd(args: &AttributeArgs) -> Result<Outcome> {
    let mut cfg = args.common.resolve()?;
    cfg.eval.suite = Vec::new();
    cfg.eval.heatmap_samples = args.samples.clone();
    if let Some(o) = effective(&args.common, &cfg)? {
        return Ok(o);
    }
    let net = reldrop::nn::checkpoint::load(&args.checkpoint)?;
    let data = reldrop::harness::prepare(&cfg)?;
    let mut dir = ArtifactDir::open(&cfg.out_dir, &cfg.name)?;
    let paths = reldrop::harness::eval::write_heatmaps(&net, &data, &cfg, &mut dir)?;
    if paths.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no sample in {:?} is inside the test set of {}",
            args.samples,
            data.test_x.batch()
        )));
    }
    Ok(Outcome::Done(json!({ "command": "attribute", "artifacts": paths })))
}

fn flip(args: &FlipArgs) -> Result<Outcome> {
    let mut cfg = args.common.resolve()?;
    cfg.eval.suite = vec![EvalMetric::Flipping];
    cfg.eval.heatmap_samples = Vec::new();
    cfg.eval.flip_random_baseline = args.random;
    if let Some(s) = args.step {
        cfg.eval.flip_step = Some(s);
    }
    if let Some(n) = args.samples {
        cfg.eval.flip_samples = n;
    }
    if let Some(o) = effective(&args.common, &cfg)? {
        return Ok(o);
    }
    let report = run_eval(&args.checkpoint, &cfg, &EvalOptions::default())?;
    let curve = report.flipping.expect("flipping requested");
    Ok(Outcome::Done(json!({
        "command": "flip",
        "step": curve.step,
        "mean_accuracy_to_half": curve.mean_accuracy_up_to(0.5),
        "random_mean_accuracy_to_half": report.flipping_random.map(|c| c.mean_accuracy_up_to(0.5)),
        "artifacts": report.artifacts,
    })))
}

fn gen_data(args: &GenDataArgs) -> Result<Outcome> {
    let shape = ShapeConfig {
        jitter: args.jitter,
        scale_jitter: args.scale_jitter,
        outliers: args.outliers,
        cutout: args.cutout,
        ..Default::default()
    };
    let primitives = args.primitives.clone().unwrap_or_else(|| Primitive::ALL.to_vec());
    let ds = generate_shapes(&primitives, args.per_class, args.points, &shape, args.seed)?;
    let mut dir = ArtifactDir::open(&args.out, &args.name)?;
    cloud_io::save(&ds, &dir.path("shapes"))?;
    for ext in ["clouds", "labels", "classes"] {
        dir.register(&format!("shapes.{ext}"))?;
    }
    Ok(Outcome::Done(json!({
        "command": "gen-data",
        "stem": dir.path("shapes"),
        "clouds": ds.len(),
        "classes": ds.class_names,
    })))
}

fn run(cli: &Cli) -> Result<Outcome> {
    match &cli.command {
        Command::Train(c) => train(c),
        Command::Grid(g) => grid(g),
        Command::Eval(e) => eval_cmd(e),
        Command::Attribute(a) => attribute_cmd(a),
        Command::Flip(f) => flip(f),
        Command::GenData(g) => gen_data(g),
    }
}

fn error_line(e: &Error) -> String {
    json!({ "error": e.kind(), "message": e.to_string() }).to_string()
}

fn main() -> ExitCode {
    #[cfg(target_os = "linux")]
    unsafe {
        // Keep freed buffers in the heap; the training loop reallocates the same sizes.
        libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
    }
    let cli = Cli::parse();
    match run(&cli) {
        Ok(Outcome::Done(summary)) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Ok(Outcome::Printed) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}
