use std::path::Path;
use std::process::{Command, Output};

fn reldrop(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reldrop"))
        .args(args)
        .env("RELDROP_OUT", out)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

const TINY: &str = r#"
name = "tiny"
task = "points3d"
seeds = [0]
audit = true

[network]
kind = "pointnet_lite"
point_mlp = [8, 16]
head = [8]

[train]
epochs = 2
batch_size = 8

[points]
primitives = ["sphere", "cube", "cylinder"]
train_per_class = 6
test_per_class = 4
points = 64

[eval]
flip_step = 16
heatmap_samples = [0]
auc_samples = 8
"#;

#[test]
fn effective_config_has_recommended_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let o = reldrop(&["train", "--print-effective-config"], dir.path());
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("p = 0.5"), "{text}");
    assert!(text.contains("epsilon = 0.001"), "{text}");
    assert!(text.contains("epochs = 30"));

    let o = reldrop(&["train", "--task", "points3d", "--print-effective-config"], dir.path());
    let text = stdout(&o);
    assert!(text.contains("alpha = 0.5") && text.contains("beta = 0.15"), "{text}");
    assert!(text.contains("epochs = 50"));
    assert!(text.contains(&format!("out_dir = {:?}", dir.path().display().to_string())));
}

#[test]
fn bad_config_gives_error_line_and_nonzero_exit() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, "task = \"points3d\"\naugmentation = \"random\"\n").unwrap();
    let o = reldrop(&["train", "--config", path.to_str().unwrap()], dir.path());
    assert!(!o.status.success());
    let line = String::from_utf8_lossy(&o.stderr);
    let v: serde_json::Value = serde_json::from_str(line.trim()).unwrap();
    assert_eq!(v["error"], "config");

    let o = reldrop(&["eval", "--checkpoint", "/nonexistent/model.rdnn"], dir.path());
    assert!(!o.status.success());
    let v: serde_json::Value = serde_json::from_str(String::from_utf8_lossy(&o.stderr).trim()).unwrap();
    assert_eq!(v["error"], "invalid_argument");
}

#[test]
fn train_eval_flip_attribute_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let c = cfg.to_str().unwrap();

    let o = reldrop(&["train", "-c", c], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    let ckpt = summary["runs"][0]["checkpoint"].as_str().unwrap().to_string();
    let root = dir.path().join("tiny");
    for f in ["seed0/epochs.csv", "seed0/record.json", "seed0/audit3d.csv", "config.toml"] {
        assert!(root.join(f).is_file(), "{f}");
    }

    let o = reldrop(&["eval", "-c", c, "--checkpoint", &ckpt, "--suite", "accuracy,flipping,auc"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(report["micro_accuracy"], summary["runs"][0]["test_accuracy"]);
    let curve = std::fs::read_to_string(root.join("eval/tiny_point-flipping_step-16_order-relevance.csv")).unwrap();
    // Comment, header, then 64 / 16 + 1 rows.
    assert_eq!(curve.lines().count(), 2 + 5);

    let o = reldrop(&["flip", "-c", c, "--checkpoint", &ckpt, "--step", "32", "--random"], dir.path());
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["step"], 32);
    assert!(v["random_mean_accuracy_to_half"].is_number());

    let o = reldrop(&["attribute", "-c", c, "--checkpoint", &ckpt, "--samples", "1"], dir.path());
    assert!(o.status.success());
    assert!(root.join("heatmaps/tiny_sample1.csv").is_file());

    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(root.join("manifest.json")).unwrap()).unwrap();
    let artifacts = manifest["artifacts"].as_object().unwrap();
    for key in ["seed0/model.rdnn", "seed0/epochs.csv", "heatmaps/tiny_sample1.csv"] {
        assert_eq!(artifacts[key].as_str().unwrap().len(), 64, "{key}");
    }
}

#[test]
fn grid_and_gen_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.toml");
    std::fs::write(&cfg, TINY.replace("epochs = 2", "epochs = 1")).unwrap();
    let o = reldrop(
        &["grid", "-c", cfg.to_str().unwrap(), "--seeds", "0,1", "--kinds", "none", "--alphas", "0,1", "--betas", "0.15"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(dir.path().join("tiny/grid.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 3);
    assert!(csv.lines().nth(1).unwrap().starts_with("none,none,"));

    let o = reldrop(&["gen-data", "--per-class", "2", "--points", "64", "--primitives", "sphere,cube"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(stdout(&o).trim()).unwrap();
    assert_eq!(v["clouds"], 4);
    assert!(dir.path().join("shapes/shapes.clouds").is_file());
    assert!(dir.path().join("shapes/manifest.json").is_file());
}
