//! Config-driven training runs, grids and evaluation sweeps.

pub mod artifacts;
pub mod config;
pub mod data;
pub mod eval;
pub mod grid;
pub mod run;

pub use artifacts::{sha256_hex, ArtifactDir, Manifest};
pub use config::{
    AugmentKind, EvalMetric, EvalSpec, ExperimentConfig, ImageDataSpec, ImageSource, NetworkSpec,
    PointDataSpec, Task,
};
pub use data::{prepare, Prepared};
pub use eval::{flipping_curves, run_eval, unit_relevance, EvalOptions, EvalReport};
pub use grid::{mean_std, run_grid, run_grid_on, summary_csv, CellSummary, GridCell, Lattice};
pub use run::{
    evaluate, run_training, train_single, EpochRecord, PhaseTimings, RunOutput, RunRecord,
    SnapshotCheck,
};
