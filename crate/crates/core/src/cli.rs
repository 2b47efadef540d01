//! Command-line front end: `check`, `train`, `sweep` and `plot`.
//!
//! Exit codes are 0 on success, 1 when a check suite fails and 2 for usage
//! or configuration errors. Run and sweep configurations are JSON documents
//! with every key checked against the schema below.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Deserialize;

use crate::check::{run_suites, Implementations};
use crate::estimators::{EstimatorConfig, Init, Rule, Schedule};
use crate::harness::{
    format_float, generate_task, run_all, summarize, write_runs_csv, write_summary_csv, CellSummary, ModelConfig,
    OptimizerConfig, RunOutcome, RunPlan, Task, TaskSpec, TrainSettings,
};
use crate::plot::{collect_series, render_svg};
use crate::{Error, Result};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;

#[derive(Debug, Parser)]
#[command(name = "lgl", version, about = "Surrogate gradients through structured argmax latents")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compare the implementation with brute-force and finite-difference oracles.
    Check {
        /// Run a single suite: simplex, polytope, categorical, identities, gradients or pullback.
        #[arg(long)]
        suite: Option<String>,
    },
    /// Train every (estimator, seed) pair of a run config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the cartesian product of the grid axes for every seed.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plot one metric of a run CSV against epoch.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long)]
        metric: String,
        #[arg(long)]
        out: PathBuf,
    },
}

fn default_true() -> bool {
    true
}

/// Document read by `train`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub task: TaskSpec,
    pub estimators: Vec<EstimatorConfig>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_true")]
    pub align_latents: bool,
    /// Write measured wall time instead of 0 in the `wall_ms` column. Makes
    /// repeated runs differ in that column.
    #[serde(default)]
    pub record_timing: bool,
    /// Save every trained model under `checkpoints/` in the output directory.
    #[serde(default)]
    pub checkpoints: bool,
}

fn default_steps_axis() -> Vec<usize> {
    vec![1]
}

fn default_temperature_axis() -> Vec<f64> {
    vec![1.0]
}

fn default_schedule_axis() -> Vec<Schedule> {
    vec![Schedule::Constant]
}

/// Grid axes of a sweep. Omitted axes take a single default value; an
/// explicitly empty axis is an error.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub rule: Vec<Rule>,
    pub eta: Vec<f64>,
    #[serde(default = "default_steps_axis")]
    pub steps: Vec<usize>,
    /// Omitted: each rule starts from its own default.
    #[serde(default)]
    pub init: Option<Vec<Init>>,
    #[serde(default = "default_temperature_axis")]
    pub temperature: Vec<f64>,
    #[serde(default = "default_schedule_axis")]
    pub schedule: Vec<Schedule>,
}

impl Grid {
    pub fn estimators(&self) -> Result<Vec<EstimatorConfig>> {
        let inits: Vec<Option<Init>> = match &self.init {
            None => vec![None],
            Some(v) => v.iter().copied().map(Some).collect(),
        };
        let sizes = [
            ("rule", self.rule.len()),
            ("eta", self.eta.len()),
            ("steps", self.steps.len()),
            ("init", inits.len()),
            ("temperature", self.temperature.len()),
            ("schedule", self.schedule.len()),
        ];
        if let Some((axis, _)) = sizes.iter().find(|(_, n)| *n == 0) {
            return Err(Error::Config(format!("grid axis '{axis}' is empty")));
        }
        let mut out = Vec::new();
        for &rule in &self.rule {
            for &eta in &self.eta {
                for &steps in &self.steps {
                    for &init in &inits {
                        for &temperature in &self.temperature {
                            for &schedule in &self.schedule {
                                out.push(EstimatorConfig { rule, eta, steps, init, temperature, schedule });
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Document read by `sweep`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub task: TaskSpec,
    pub grid: Grid,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub model: ModelConfig,
    pub optimizer: OptimizerConfig,
    #[serde(default = "default_true")]
    pub align_latents: bool,
    #[serde(default)]
    pub record_timing: bool,
}

/// A fully resolved experiment: the task, the runs to make and how.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub task: Task,
    pub plans: Vec<RunPlan>,
    pub settings: TrainSettings,
}

fn plan(estimators: &[EstimatorConfig], seeds: &[u64]) -> Result<Vec<RunPlan>> {
    if estimators.is_empty() {
        return Err(Error::Config("no estimators given".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Config("seed list is empty".into()));
    }
    for e in estimators {
        e.validate()?;
    }
    let mut plans = Vec::new();
    for estimator in estimators {
        for &seed in seeds {
            plans.push(RunPlan { run_id: plans.len(), estimator: *estimator, seed });
        }
    }
    Ok(plans)
}

impl TrainConfig {
    pub fn experiment(&self) -> Result<Experiment> {
        let settings =
            TrainSettings { model: self.model, optimizer: self.optimizer, align_latents: self.align_latents };
        settings.validate(self.task.kind)?;
        let plans = plan(&self.estimators, &self.seeds)?;
        Ok(Experiment { task: generate_task(&self.task)?, plans, settings })
    }
}

impl SweepConfig {
    pub fn experiment(&self) -> Result<Experiment> {
        let settings =
            TrainSettings { model: self.model, optimizer: self.optimizer, align_latents: self.align_latents };
        settings.validate(self.task.kind)?;
        let plans = plan(&self.grid.estimators()?, &self.seeds)?;
        Ok(Experiment { task: generate_task(&self.task)?, plans, settings })
    }
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

pub fn load_train_config(path: &Path) -> Result<TrainConfig> {
    parse_json(path)
}

pub fn load_sweep_config(path: &Path) -> Result<SweepConfig> {
    parse_json(path)
}

/// Writes `bytes` to a temporary sibling of `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("output");
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

/// Thread pool sized by `LGL_THREADS`, or by the number of cores when unset.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var("LGL_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Config(format!("LGL_THREADS must be a positive integer, got '{v}'")))?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start thread pool: {e}")))
}

/// Runs an experiment and writes `runs.csv` (and `summary.csv` when
/// `with_summary`) into `out_dir`.
pub fn execute<W: Write>(
    experiment: &Experiment,
    out_dir: &Path,
    record_timing: bool,
    with_summary: bool,
    stdout: &mut W,
) -> Result<Vec<RunOutcome>> {
    let started = Instant::now();
    let pool = thread_pool()?;
    let outcomes = pool.install(|| run_all(&experiment.task, &experiment.plans, &experiment.settings))?;
    let records: Vec<_> = outcomes.iter().map(|o| o.record.clone()).collect();

    fs::create_dir_all(out_dir)?;
    let mut csv = Vec::new();
    write_runs_csv(&mut csv, &records, record_timing)?;
    let runs_path = out_dir.join("runs.csv");
    write_atomic(&runs_path, &csv)?;

    let cells = summarize(&records);
    if with_summary {
        let mut text = Vec::new();
        write_summary_csv(&mut text, &cells)?;
        write_atomic(&out_dir.join("summary.csv"), &text)?;
        for c in &cells {
            writeln!(stdout, "{}", summary_line(c))?;
        }
    }
    let diverged = records.iter().filter(|r| r.diverged_at.is_some()).count();
    writeln!(
        stdout,
        "{} runs ({} diverged) written to {} in {} ms",
        records.len(),
        diverged,
        runs_path.display(),
        started.elapsed().as_millis()
    )?;
    Ok(outcomes)
}

fn summary_line(c: &CellSummary) -> String {
    let e = &c.estimator;
    let pm = |(m, s): (f64, f64)| format!("{}±{}", format_float(m), format_float(s));
    format!(
        "{} eta={} steps={} init={} tau={}: eval_loss {}  latent_exact {}  latent_f1 {}  ({} runs, {} diverged)",
        e.rule.name(),
        format_float(e.eta),
        e.steps,
        e.resolved_init().name(),
        format_float(e.temperature),
        pm(c.stats[1]),
        pm(c.stats[2]),
        pm(c.stats[3]),
        c.runs,
        c.diverged
    )
}

pub fn cmd_check<W: Write>(suite: Option<&str>, imp: &Implementations, stdout: &mut W) -> Result<u8> {
    let reports = run_suites(suite, imp, stdout)?;
    Ok(if reports.iter().all(|r| r.ok()) { EXIT_OK } else { EXIT_CHECK_FAILED })
}

pub fn cmd_train<W: Write>(config: &Path, out: &Path, stdout: &mut W) -> Result<u8> {
    let cfg = load_train_config(config)?;
    let experiment = cfg.experiment()?;
    let outcomes = execute(&experiment, out, cfg.record_timing, false, stdout)?;
    if cfg.checkpoints {
        for o in &outcomes {
            let path = out.join("checkpoints").join(format!("run-{:04}.ckpt", o.record.run_id));
            write_atomic(&path, o.model.to_checkpoint().as_bytes())?;
        }
    }
    Ok(EXIT_OK)
}

pub fn cmd_sweep<W: Write>(config: &Path, out: &Path, stdout: &mut W) -> Result<u8> {
    let cfg = load_sweep_config(config)?;
    let experiment = cfg.experiment()?;
    execute(&experiment, out, cfg.record_timing, true, stdout)?;
    Ok(EXIT_OK)
}

pub fn cmd_plot(csv: &Path, metric: &str, out: &Path) -> Result<u8> {
    let file = fs::File::open(csv).map_err(|e| Error::Config(format!("cannot open {}: {e}", csv.display())))?;
    let series = collect_series(file, metric)?;
    write_atomic(out, render_svg(&series, metric).as_bytes())?;
    Ok(EXIT_OK)
}

/// Executes a parsed command line and returns the process exit code. Errors
/// are reported on `stderr`.
pub fn run<W: Write, E: Write>(cli: Cli, stdout: &mut W, stderr: &mut E) -> u8 {
    let result = match &cli.command {
        Command::Check { suite } => cmd_check(suite.as_deref(), &Implementations::default(), stdout),
        Command::Train { config, out } => cmd_train(config, out, stdout),
        Command::Sweep { config, out } => cmd_sweep(config, out, stdout),
        Command::Plot { csv, metric, out } => cmd_plot(csv, metric, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            EXIT_CONFIG
        }
    }
}
