//! Synthetic tasks, the training loop and metric collection.

pub mod metrics;
pub mod record;
pub mod task;
pub mod train;

pub use metrics::{evaluate_latent, LatentScore, PartAlignment};
pub use record::{format_float, summarize, write_runs_csv, write_summary_csv, CellSummary, DIVERGED, RUN_COLUMNS};
pub use task::{generate_task, Sample, Task, TaskKind, TaskSpec};
pub use train::{
    init_model, run_all, train_run, EpochMetrics, ModelConfig, OptimizerConfig, RunOutcome, RunPlan, RunRecord,
    TrainSettings,
};
