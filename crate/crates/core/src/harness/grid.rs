//! Parameter grids: one row per configuration, mean ± std over seeds.

use serde::{Deserialize, Serialize};

use super::artifacts::ArtifactDir;
use super::config::{AugmentKind, ExperimentConfig};
use super::data::{prepare, Prepared};
use super::run::{epochs_csv, train_single, RunOutput};
use crate::error::{Error, Result};

/// Overrides applied to the base config for one grid row.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridCell {
    pub augmentation: Option<AugmentKind>,
    pub alpha: Option<f32>,
    pub beta: Option<f32>,
    pub p: Option<f32>,
    pub epsilon: Option<f32>,
}

impl GridCell {
    pub fn label(&self) -> String {
        let mut parts = vec![self.augmentation.map_or("base", AugmentKind::name).to_string()];
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("p", self.p), ("eps", self.epsilon)] {
            if let Some(v) = v {
                parts.push(format!("{name}{v}"));
            }
        }
        parts.join("_")
    }

    pub fn apply(&self, base: &ExperimentConfig) -> ExperimentConfig {
        let mut cfg = base.clone().resolve();
        if let Some(a) = self.augmentation {
            cfg.augmentation = a;
        }
        if let Some(a) = self.alpha {
            cfg.augment3d.alpha = a;
        }
        if let Some(b) = self.beta {
            cfg.augment3d.beta = b;
        }
        if let Some(p) = self.p {
            cfg.augment2d.p = p;
        }
        if let Some(e) = self.epsilon {
            cfg.composite = cfg.composite.take().map(|c| c.with_epsilon(e));
        }
        cfg.name = format!("{}_{}", base.name, self.label());
        cfg
    }
}

/// Axes of a lattice; an empty axis leaves the base value alone.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Lattice {
    pub alpha: Vec<f32>,
    pub beta: Vec<f32>,
    pub p: Vec<f32>,
    pub epsilon: Vec<f32>,
}

impl Lattice {
    /// Cartesian product of the non-empty axes, in row-major order
    /// (α outermost, ε innermost).
    pub fn cells(&self) -> Vec<GridCell> {
        fn axis(v: &[f32]) -> Vec<Option<f32>> {
            if v.is_empty() {
                vec![None]
            } else {
                v.iter().map(|&x| Some(x)).collect()
            }
        }
        if self.alpha.is_empty() && self.beta.is_empty() && self.p.is_empty() && self.epsilon.is_empty() {
            return Vec::new();
        }
        let mut cells = Vec::new();
        for alpha in axis(&self.alpha) {
            for beta in axis(&self.beta) {
                for p in axis(&self.p) {
                    for epsilon in axis(&self.epsilon) {
                        cells.push(GridCell { augmentation: None, alpha, beta, p, epsilon });
                    }
                }
            }
        }
        cells
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub label: String,
    pub cell: GridCell,
    /// `(seed, micro, macro)` of every completed run.
    pub runs: Vec<(u64, f64, f64)>,
    pub failures: Vec<String>,
    pub micro_mean: f64,
    pub micro_std: f64,
    pub macro_mean: f64,
    pub macro_std: f64,
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs every cell for every seed on shared data. `hook` sees each finished
/// run. A failing run is recorded in its cell and does not stop the grid.
pub fn run_grid_on(
    base: &ExperimentConfig,
    cells: &[GridCell],
    data: &Prepared,
    mut hook: impl FnMut(&GridCell, &ExperimentConfig, &RunOutput) -> Result<()>,
) -> Result<Vec<CellSummary>> {
    if cells.is_empty() {
        return Err(Error::Config("grid has no cells".into()));
    }
    if base.seeds.is_empty() {
        return Err(Error::Config("seeds list is empty".into()));
    }
    let mut out = Vec::with_capacity(cells.len());
    for cell in cells {
        let cfg = cell.apply(base);
        let mut runs = Vec::new();
        let mut failures = Vec::new();
        for &seed in &base.seeds {
            let result = cfg.validate().and_then(|_| train_single(&cfg, data, seed));
            match result {
                Ok(run) => {
                    if let Some(reason) = &run.record.aborted {
                        failures.push(format!("seed {seed}: {reason}"));
                        continue;
                    }
                    hook(cell, &cfg, &run)?;
                    let last = run.record.final_epoch().expect("completed run has epochs");
                    runs.push((seed, last.test_accuracy, last.test_macro_accuracy));
                }
                Err(e) => failures.push(format!("seed {seed}: {e}")),
            }
        }
        let micro: Vec<f64> = runs.iter().map(|r| r.1).collect();
        let macro_: Vec<f64> = runs.iter().map(|r| r.2).collect();
        let (micro_mean, micro_std) = mean_std(&micro);
        let (macro_mean, macro_std) = mean_std(&macro_);
        out.push(CellSummary {
            label: cell.label(),
            cell: cell.clone(),
            runs,
            failures,
            micro_mean,
            micro_std,
            macro_mean,
            macro_std,
        });
    }
    Ok(out)
}

fn opt(v: Option<f32>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Rows = configurations, columns = micro/macro accuracy mean and std.
pub fn summary_csv(rows: &[CellSummary]) -> String {
    let mut out = String::from(
        "config,augmentation,alpha,beta,p,epsilon,runs,micro_mean,micro_std,macro_mean,macro_std,failures\n",
    );
    for r in rows {
        let c = &r.cell;
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.label,
            c.augmentation.map_or("", AugmentKind::name),
            opt(c.alpha),
            opt(c.beta),
            opt(c.p),
            opt(c.epsilon),
            r.runs.len(),
            r.micro_mean,
            r.micro_std,
            r.macro_mean,
            r.macro_std,
            r.failures.len()
        ));
    }
    out
}

/// Loads data once, runs the grid and writes `grid.csv` plus per-run epoch
/// CSVs under `<out_dir>/<name>/`.
pub fn run_grid(base: &ExperimentConfig, cells: &[GridCell]) -> Result<Vec<CellSummary>> {
    if cells.is_empty() {
        return Err(Error::Config("grid has no cells".into()));
    }
    let base = base.clone().resolve();
    base.validate()?;
    let data = prepare(&base)?;
    let mut dir = ArtifactDir::open(&base.out_dir, &base.name)?;
    let rows = run_grid_on(&base, cells, &data, |cell, _, run| {
        let rel = format!("{}/seed{}_epochs.csv", cell.label(), run.record.seed);
        dir.write(&rel, epochs_csv(&run.record).as_bytes())?;
        Ok(())
    })?;
    dir.write("grid.csv", summary_csv(&rows).as_bytes())?;
    let failures: Vec<String> = rows
        .iter()
        .flat_map(|r| r.failures.iter().map(move |f| format!("{}: {f}", r.label)))
        .collect();
    if !failures.is_empty() {
        dir.write("failures.txt", (failures.join("\n") + "\n").as_bytes())?;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_product() {
        let l = Lattice { alpha: vec![0.0, 0.5, 1.0], beta: vec![0.15, 0.5, 0.85], ..Default::default() };
        let cells = l.cells();
        assert_eq!(cells.len(), 9);
        assert_eq!(cells[1].label(), "base_alpha0_beta0.5");
        assert!(Lattice::default().cells().is_empty());
    }

    #[test]
    fn mean_and_sample_std() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-12);
        assert_eq!(mean_std(&[4.0]), (4.0, 0.0));
    }

    #[test]
    fn empty_grid_rejected() {
        let base = ExperimentConfig::default();
        assert!(matches!(run_grid(&base, &[]), Err(Error::Config(_))));
    }

    #[test]
    fn cell_overrides() {
        let base = ExperimentConfig::default();
        let cell = GridCell { p: Some(1.0), epsilon: Some(0.5), ..Default::default() };
        let cfg = cell.apply(&base);
        assert_eq!(cfg.augment2d.p, 1.0);
        assert_eq!(
            cfg.composite.unwrap().default,
            Some(crate::lrp::LrpRule::Epsilon { epsilon: 0.5 })
        );
    }
}
