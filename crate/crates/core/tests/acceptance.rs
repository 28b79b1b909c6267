//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use reldrop::augment::{
    apply_reldrop_2d, centroid, make_mask_3d, normalize_relevance_2d, normalize_relevance_3d,
    AugmentConfig2D, AugmentConfig3D, RelevanceMap2D,
};
use reldrop::harness::{
    flipping_curves, prepare, run_grid_on, AugmentKind, CellSummary, ExperimentConfig, GridCell,
    ImageSource, Prepared,
};
use reldrop::lrp::{attribute, canonize, Composite, LrpRule, Purpose};
use reldrop::metrics::{rra, GroundTruthMask};
use reldrop::nn::{
    build_small_cnn_with, BatchNorm2d, Conv2d, Layer, Linear, MaxPool2d, Mode, Network,
};
use reldrop::rng::stream;
use reldrop::Tensor;

const ROOT: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../..");

struct Report {
    failed: Vec<&'static str>,
}

impl Report {
    fn line(&mut self, name: &'static str, pass: bool, detail: String, started: Instant) {
        let status = if pass { "PASS" } else { "FAIL" };
        let msg = format!(
            "[{status}] {name}: {detail} ({:.1}s)\n",
            started.elapsed().as_secs_f64()
        );
        // Bypasses libtest capture so the lines land in the test log.
        let _ = std::io::stderr().write_all(msg.as_bytes());
        if !pass {
            self.failed.push(name);
        }
    }
}

fn normal(rng: &mut impl Rng, scale: f32) -> f32 {
    let v: f32 = StandardNormal.sample(rng);
    v * scale
}

fn random_linear(rng: &mut impl Rng, i: usize, o: usize) -> Linear {
    let mut l = Linear::zeros(i, o);
    let s = (2.0 / i as f32).sqrt();
    l.weight.iter_mut().for_each(|w| *w = normal(rng, s));
    l.bias.iter_mut().for_each(|b| *b = normal(rng, 0.1));
    l
}

fn bias_free(mut l: Linear) -> Linear {
    l.bias.fill(0.0);
    l
}

fn random_conv(rng: &mut impl Rng, c: usize, o: usize, k: usize, stride: usize, pad: usize) -> Conv2d {
    let mut conv = Conv2d::zeros(c, o, k, stride, pad);
    let s = (2.0 / (c * k * k) as f32).sqrt();
    conv.weight.iter_mut().for_each(|w| *w = normal(rng, s));
    conv.bias.iter_mut().for_each(|b| *b = normal(rng, 0.1));
    conv
}

fn randomize_bn(net: &mut Network, rng: &mut impl Rng) {
    for layer in net.layers_mut() {
        if let Layer::BatchNorm2d(bn) = layer {
            for c in 0..bn.channels {
                bn.gamma[c] = rng.random_range(0.5..1.5);
                bn.beta[c] = normal(rng, 0.2);
                bn.running_mean[c] = normal(rng, 0.2);
                bn.running_var[c] = rng.random_range(0.5..2.0);
            }
        }
    }
}

fn random_input(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| normal(rng, 1.0))
}

fn epsilon_everywhere(epsilon: f32) -> Composite {
    Composite {
        purpose: Purpose::Evaluation,
        first: None,
        conv: None,
        dense: None,
        default: Some(LrpRule::Epsilon { epsilon }),
        overrides: BTreeMap::new(),
    }
}

fn random_small_net(k: u64) -> (Network, Tensor) {
    let mut rng = stream(&[0xC0, k]);
    if k.is_multiple_of(2) {
        // Bias-free MLP: with biases, a sample whose hidden layer is entirely
        // inactive has a logit made of biases alone, which no input can carry.
        let depth = rng.random_range(1..=3);
        let mut width = rng.random_range(3..=12);
        let input = width;
        let mut layers = Vec::new();
        for _ in 0..depth {
            let next = rng.random_range(3..=16);
            layers.push(Layer::Linear(bias_free(random_linear(&mut rng, width, next))));
            layers.push(Layer::Relu);
            width = next;
        }
        let classes = rng.random_range(2..=6);
        layers.push(Layer::Linear(bias_free(random_linear(&mut rng, width, classes))));
        let net = Network::new(vec![input], classes, layers).unwrap();
        let x = random_input(&mut rng, &[4, input]);
        (net, x)
    } else {
        let widths = [rng.random_range(2..=6), rng.random_range(2..=8)];
        let side = rng.random_range(8..=14);
        let mut net = build_small_cnn_with([1, side, side], 5, widths, k).unwrap();
        randomize_bn(&mut net, &mut rng);
        let net = canonize(&net).unwrap();
        let x = random_input(&mut rng, &[4, 1, side, side]);
        (net, x)
    }
}

fn conservation(report: &mut Report) {
    let t = Instant::now();
    let composite = epsilon_everywhere(1e-6);
    let mut ok = 0;
    let mut worst = 0.0f64;
    for k in 0..100 {
        let (net, x) = random_small_net(k);
        let targets = net.predict(&x).unwrap();
        let rec = attribute(&net, &x, &targets, &composite).unwrap();
        let mut pass = true;
        for s in 0..x.batch() {
            let total: f64 = rec.input().sample(s).iter().map(|&v| v as f64).sum();
            let logit = rec.scores[s] as f64;
            let err = (total - logit).abs();
            if logit != 0.0 {
                worst = worst.max(err / logit.abs());
            }
            pass &= err <= 1e-3 * logit.abs();
        }
        ok += pass as usize;
    }
    report.line(
        "LRP conservation (eps=1e-6, 100 nets)",
        ok == 100 && t.elapsed().as_secs() < 60,
        format!("{ok}/100 nets conserve, worst relative error {worst:.2e}"),
        t,
    );
}

/// `L = Σ g ⊙ layer(x)` in f64.
fn probe_loss(layer: &Layer, x: &Tensor, g: &Tensor, mode: Mode) -> f64 {
    let (y, _) = layer.forward(x, mode);
    y.data().iter().zip(g.data()).map(|(&a, &b)| a as f64 * b as f64).sum()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(b.iter().map(|x| x * x).sum::<f64>().sqrt());
    if norm == 0.0 {
        diff
    } else {
        diff / norm
    }
}

/// Worst relative error between analytic and central-difference gradients
/// of one layer, over its input and every parameter blob.
fn gradient_check(layer: &Layer, x: &Tensor, mode: Mode, rng: &mut impl Rng) -> f64 {
    let (y, cache) = layer.forward(x, mode);
    let g = Tensor::from_fn(y.shape(), |_| normal(rng, 1.0));
    let mut grads: Vec<Vec<f32>> = layer.params().iter().map(|p| vec![0.0; p.len()]).collect();
    let gx = layer.backward(x, &cache, &g, &mut grads, true).unwrap();
    let h = 1e-2f32;

    let mut numeric = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        let mut xm = x.clone();
        xm.data_mut()[i] -= h;
        numeric.push((probe_loss(layer, &xp, &g, mode) - probe_loss(layer, &xm, &g, mode)) / (2.0 * h as f64));
    }
    let analytic: Vec<f64> = gx.data().iter().map(|&v| v as f64).collect();
    let mut worst = rel_err(&analytic, &numeric);

    for (b, blob) in grads.iter().enumerate() {
        let mut numeric = Vec::with_capacity(blob.len());
        for i in 0..blob.len() {
            let mut lp = layer.clone();
            lp.params_mut()[b][i] += h;
            let mut lm = layer.clone();
            lm.params_mut()[b][i] -= h;
            numeric.push((probe_loss(&lp, x, &g, mode) - probe_loss(&lm, x, &g, mode)) / (2.0 * h as f64));
        }
        let analytic: Vec<f64> = blob.iter().map(|&v| v as f64).collect();
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

/// Inputs spread on a grid of well-separated values so no ReLU or max
/// crosses a kink within the finite-difference step.
fn separated_input(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let mut values: Vec<f32> = (0..n).map(|i| (i as f32 - n as f32 / 2.0) * 0.05 + 0.025).collect();
    for i in (1..n).rev() {
        values.swap(i, rng.random_range(0..=i));
    }
    Tensor::new(shape.to_vec(), values).unwrap()
}

fn gradients(report: &mut Report) {
    let t = Instant::now();
    let mut rng = stream(&[0xC1]);
    let mut bn = BatchNorm2d::new(3);
    bn.gamma = vec![0.7, 1.3, -0.4];
    bn.beta = vec![0.1, -0.2, 0.3];
    let cases: Vec<(&str, Layer, Vec<usize>, Mode)> = vec![
        ("Linear", Layer::Linear(random_linear(&mut rng, 7, 5)), vec![3, 7], Mode::Train),
        ("Conv2d", Layer::Conv2d(random_conv(&mut rng, 2, 3, 3, 1, 1)), vec![2, 2, 6, 6], Mode::Train),
        ("Conv2d stride 2", Layer::Conv2d(random_conv(&mut rng, 2, 2, 3, 2, 0)), vec![2, 2, 7, 7], Mode::Train),
        ("BatchNorm2d train", Layer::BatchNorm2d(bn.clone()), vec![4, 3, 3, 3], Mode::Train),
        ("BatchNorm2d eval", Layer::BatchNorm2d(bn), vec![2, 3, 3, 3], Mode::Eval),
        ("ReLU", Layer::Relu, vec![2, 10], Mode::Train),
        ("MaxPool2d", Layer::MaxPool2d(MaxPool2d { kernel: 2, stride: 2 }), vec![2, 2, 6, 6], Mode::Train),
        ("GlobalMaxPool", Layer::GlobalMaxPool, vec![2, 9, 4], Mode::Train),
        ("Flatten", Layer::Flatten, vec![2, 3, 4], Mode::Train),
        ("SharedPointMlp", Layer::SharedPointMlp(random_linear(&mut rng, 3, 6)), vec![2, 8, 3], Mode::Train),
    ];
    let mut worst = (0.0f64, "");
    let mut ok = true;
    for (name, layer, shape, mode) in &cases {
        let x = separated_input(&mut rng, shape);
        let err = gradient_check(layer, &x, *mode, &mut rng);
        ok &= err <= 1e-3;
        if err > worst.0 {
            worst = (err, name);
        }
    }
    report.line(
        "Gradient correctness (all layer kinds, 1e-3 rel)",
        ok && t.elapsed().as_secs() < 60,
        format!("{} layer cases, worst {:.2e} ({})", cases.len(), worst.0, worst.1),
        t,
    );
}

fn canonization(report: &mut Report) {
    let t = Instant::now();
    let mut worst = 0.0f32;
    for k in 0..100u64 {
        let mut rng = stream(&[0xC2, k]);
        let widths = [rng.random_range(2..=8), rng.random_range(2..=8)];
        let side = rng.random_range(8..=16);
        let channels = rng.random_range(1..=3);
        let mut net = build_small_cnn_with([channels, side, side], 4, widths, k).unwrap();
        randomize_bn(&mut net, &mut rng);
        let x = random_input(&mut rng, &[3, channels, side, side]);
        let reference = net.forward(&x, Mode::Eval).unwrap().logits;
        let fused = canonize(&net).unwrap().logits(&x).unwrap();
        worst = worst.max(reference.max_abs_diff(&fused));
    }
    report.line(
        "Canonization equivalence (100 conv+BN nets)",
        worst <= 1e-5 && t.elapsed().as_secs() < 60,
        format!("max forward deviation {worst:.2e}"),
        t,
    );
}

fn drop_statistics(report: &mut Report) {
    let t = Instant::now();
    let n = 1024;
    let mut rng = stream(&[0xC3]);
    let mut detail = Vec::new();
    let mut ok = true;
    for beta in [0.15f32, 0.5, 0.85] {
        let cfg = AugmentConfig3D { alpha: 1.0, beta };
        let sigma = (n as f64 * beta as f64 * (1.0 - beta as f64)).sqrt();
        let mut within = 0;
        for _ in 0..1000 {
            let raw: Vec<f32> = (0..n).map(|_| normal(&mut rng, 1.0)).collect();
            let norm = normalize_relevance_3d(&raw).unwrap();
            let mask = make_mask_3d(&cfg, &norm, &mut rng);
            within += ((mask.dropped() as f64 - n as f64 * beta as f64).abs() <= 3.0 * sigma) as usize;
        }
        ok &= within >= 990;
        detail.push(format!("beta {beta}: {within}/1000 within 3 sigma"));
    }
    let mut exact = 0;
    for k in 0..1000 {
        let beta = [0.15f32, 0.5, 0.85][k % 3];
        let cfg = AugmentConfig3D { alpha: 0.0, beta };
        let raw: Vec<f32> = (0..n).map(|_| normal(&mut rng, 1.0)).collect();
        let norm = normalize_relevance_3d(&raw).unwrap();
        let mask = make_mask_3d(&cfg, &norm, &mut rng);
        let expected: Vec<usize> = (0..n).filter(|&i| norm[i] as f64 >= 1.0 - beta as f64).collect();
        exact += (mask.dropped_indices() == expected) as usize;
    }
    ok &= exact == 1000;
    detail.push(format!("alpha 0: {exact}/1000 exact"));
    report.line(
        "Point drop statistics",
        ok && t.elapsed().as_secs() < 60,
        detail.join(", "),
        t,
    );
}

fn geometry(report: &mut Report) {
    let t = Instant::now();
    let cfg = AugmentConfig2D { p: 1.0, s_high: 0.4, r_low: 0.3, ..Default::default() };
    let mut rng = stream(&[0xC4]);
    let (mut area_ok, mut centre_ok) = (0, 0);
    let trials = 10_000;
    for _ in 0..trials {
        let h = rng.random_range(8..=32);
        let w = rng.random_range(8..=32);
        let raw: Vec<f32> = (0..h * w).map(|_| normal(&mut rng, 1.0)).collect();
        let map = RelevanceMap2D::new(raw.clone(), h, w).unwrap();
        let (xc, yc) = centroid(&normalize_relevance_2d(&raw).unwrap(), w);
        let mut image = vec![1.0f32; h * w];
        let region = apply_reldrop_2d(&mut image, &[1, h, w], &map, &cfg, &[0.0], &mut rng)
            .unwrap()
            .expect("p = 1 always occludes");
        let frac = region.area / (h * w) as f64;
        area_ok += (cfg.s_low as f64..=cfg.s_high as f64).contains(&frac) as usize;
        centre_ok += (region.contains(xc, yc) && image[yc * w + xc] == 0.0) as usize;
    }
    report.line(
        "2D occlusion geometry (p=1, 1e4 draws)",
        area_ok == trials && centre_ok == trials && t.elapsed().as_secs() < 60,
        format!("area in bounds {area_ok}/{trials}, centroid occluded {centre_ok}/{trials}"),
        t,
    );
}

/// Rank accuracy by pairwise comparison: pixel `i` is among the top K when
/// fewer than K pixels beat it (larger value, or equal value at a lower index).
fn rra_oracle(map: &[f32], mask: &[bool]) -> f64 {
    let k = mask.iter().filter(|&&m| m).count();
    let mut hits = 0;
    for i in 0..map.len() {
        let beaten_by = (0..map.len())
            .filter(|&j| map[j] > map[i] || (map[j] == map[i] && j < i))
            .count();
        if beaten_by < k && mask[i] {
            hits += 1;
        }
    }
    hits as f64 / k as f64
}

fn rra_equivalence(report: &mut Report) {
    let t = Instant::now();
    let mut rng = stream(&[0xC5]);
    let mut matches = 0;
    for k in 0..1000u32 {
        // Every other map is quantized so ties are common.
        let map: Vec<f32> = (0..64)
            .map(|_| {
                let v = normal(&mut rng, 1.0);
                if k.is_multiple_of(2) { (v * 2.0).round() } else { v }
            })
            .collect();
        let density = rng.random_range(0.05..0.95);
        let mut mask: Vec<bool> = (0..64).map(|_| rng.random_bool(density)).collect();
        if !mask.iter().any(|&m| m) {
            mask[(rng.next_u32() % 64) as usize] = true;
        }
        let gt = GroundTruthMask::new(8, 8, mask.clone()).unwrap();
        matches += (rra(&map, &gt).unwrap() == rra_oracle(&map, &mask)) as usize;
    }
    report.line(
        "RRA oracle equivalence (1000 8x8 pairs)",
        matches == 1000 && t.elapsed().as_secs() < 60,
        format!("{matches}/1000 exact matches"),
        t,
    );
}

fn bench_config(file: &str) -> ExperimentConfig {
    let path = format!("{ROOT}/configs/{file}");
    let mut cfg = ExperimentConfig::load(path.as_ref()).unwrap().resolve();
    if let ImageSource::Idx { images, labels } = &mut cfg.image.source {
        *images = format!("{ROOT}/{}", images.display()).into();
        *labels = format!("{ROOT}/{}", labels.display()).into();
    }
    cfg.checkpoint = false;
    cfg
}

fn cell(aug: AugmentKind, ab: Option<(f32, f32)>) -> GridCell {
    GridCell {
        augmentation: Some(aug),
        alpha: ab.map(|v| v.0),
        beta: ab.map(|v| v.1),
        ..Default::default()
    }
}

struct Trained {
    rows: Vec<CellSummary>,
    /// Per-batch seconds per cell, summed over seeds.
    per_batch: Vec<f64>,
    nets: BTreeMap<(usize, u64), Network>,
}

fn train_cells(cfg: &ExperimentConfig, data: &Prepared, cells: &[GridCell], keep: &[usize]) -> Trained {
    let mut per_batch = vec![0.0; cells.len()];
    let mut nets = BTreeMap::new();
    let rows = run_grid_on(cfg, cells, data, |c, _, run| {
        let i = cells.iter().position(|x| x == c).unwrap();
        per_batch[i] += run.record.timings.per_batch();
        if keep.contains(&i) {
            nets.insert((i, run.record.seed), run.net.clone());
        }
        Ok(())
    })
    .unwrap();
    Trained { rows, per_batch, nets }
}

fn pct(v: f64) -> String {
    format!("{:.2}%", 100.0 * v)
}

fn point_clouds(report: &mut Report) -> (f64, Trained, ExperimentConfig, Prepared) {
    let t = Instant::now();
    let cfg = bench_config("points3d_bench.toml");
    let data = prepare(&cfg).unwrap();
    let cells = [
        cell(AugmentKind::None, None),
        cell(AugmentKind::Reldrop, Some((0.5, 0.15))),
        cell(AugmentKind::Reldrop, Some((1.0, 0.15))),
        cell(AugmentKind::Reldrop, Some((0.5, 0.85))),
        cell(AugmentKind::Reldrop, Some((0.0, 0.15))),
        cell(AugmentKind::Reldrop, Some((0.0, 0.85))),
        cell(AugmentKind::Reldrop, Some((1.0, 0.85))),
    ];
    let trained = train_cells(&cfg, &data, &cells, &[0, 1]);
    let m: Vec<f64> = trained.rows.iter().map(|r| r.micro_mean).collect();
    let complete = trained.rows.iter().all(|r| r.runs.len() == 3);
    let (base, bal, rnd) = (m[0], m[1], m[2]);
    // The collapse at large β is a property of relevance-guided dropping
    // (α < 1); pairs share α. Pure random dropping at β = 0.85 is reported only.
    let gaps = [bal - m[3], m[4] - m[5]];
    let pass = complete
        && bal - rnd >= -0.002
        && rnd - base >= -0.002
        && bal - base > 0.0
        && gaps.iter().all(|&g| g >= 0.05);
    report.line(
        "Point-cloud ordering (8 classes, 50 epochs, 3 seeds)",
        pass,
        format!(
            "baseline {}, a0.5/b0.15 {}, a1/b0.15 {}; beta 0.85 drop at a0.5 {} ({}), at a0 {} ({} -> {}); a1/b0.85 {}",
            pct(base),
            pct(bal),
            pct(rnd),
            pct(gaps[0]),
            pct(m[3]),
            pct(gaps[1]),
            pct(m[4]),
            pct(m[5]),
            pct(m[6])
        ),
        t,
    );
    let ratio = trained.per_batch[1] / trained.per_batch[0];
    (ratio, trained, cfg, data)
}

fn images(report: &mut Report) -> f64 {
    let t = Instant::now();
    let cfg = bench_config("mnist_bench.toml");
    let data = prepare(&cfg).unwrap();
    let cells = [
        cell(AugmentKind::None, None),
        cell(AugmentKind::Random, None),
        cell(AugmentKind::Reldrop, None),
    ];
    let trained = train_cells(&cfg, &data, &cells, &[]);
    let m: Vec<f64> = trained.rows.iter().map(|r| r.micro_mean).collect();
    let complete = trained.rows.iter().all(|r| r.runs.len() == 3);
    let pass = complete && m[2] - m[1] >= -0.002 && m[1] - m[0] >= -0.002 && m[2] > m[0];
    report.line(
        "MNIST ordering (10k subset, 30 epochs, 3 seeds)",
        pass,
        format!("baseline {}, random erasing {}, reldrop {}", pct(m[0]), pct(m[1]), pct(m[2])),
        t,
    );
    trained.per_batch[2] / trained.per_batch[0]
}

fn flipping(report: &mut Report, trained: &Trained, cfg: &ExperimentConfig, data: &Prepared) {
    let t = Instant::now();
    let mut areas = [0.0f64; 2];
    for (i, area) in areas.iter_mut().enumerate() {
        for seed in 0..3u64 {
            let net = &trained.nets[&(i, seed)];
            let (curve, _) = flipping_curves(net, data, cfg, false).unwrap();
            *area += curve.mean_accuracy_up_to(0.5) / 3.0;
        }
    }
    report.line(
        "Point-flipping robustness (area over 0-0.5)",
        areas[1] - areas[0] > 0.0,
        format!(
            "baseline {}, reldrop {}, difference {}",
            pct(areas[0]),
            pct(areas[1]),
            pct(areas[1] - areas[0])
        ),
        t,
    );
}

#[test]
fn acceptance() {
    #[cfg(target_os = "linux")]
    unsafe {
        // Keep freed buffers in the heap; the training loop reallocates the same sizes.
        libc::mallopt(libc::M_MMAP_THRESHOLD, 1 << 30);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 1 << 30);
    }
    let mut report = Report { failed: Vec::new() };
    conservation(&mut report);
    gradients(&mut report);
    canonization(&mut report);
    drop_statistics(&mut report);
    geometry(&mut report);
    rra_equivalence(&mut report);
    let (ratio3d, trained, cfg, data) = point_clouds(&mut report);
    let ratio2d = images(&mut report);
    flipping(&mut report, &trained, &cfg, &data);
    let t = Instant::now();
    report.line(
        "Compute cost (reldrop / baseline per batch)",
        (1.5..=3.5).contains(&ratio3d) && (1.5..=3.5).contains(&ratio2d),
        format!("points {ratio3d:.2}x, images {ratio2d:.2}x"),
        t,
    );
    assert!(report.failed.is_empty(), "failed criteria: {:?}", report.failed);
}
