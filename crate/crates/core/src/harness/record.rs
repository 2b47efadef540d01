//! CSV output for run records and per-cell summaries.

use std::io::Write;

use super::train::RunRecord;
use crate::estimators::EstimatorConfig;
use crate::Result;

pub const RUN_COLUMNS: [&str; 13] = [
    "run_id",
    "rule",
    "eta",
    "steps",
    "init",
    "temperature",
    "seed",
    "epoch",
    "train_loss",
    "eval_loss",
    "latent_exact",
    "latent_f1",
    "wall_ms",
];

/// Metric columns hold this value on the epoch where a run diverged.
pub const DIVERGED: &str = "diverged";

/// Nine significant digits, fixed notation for moderate magnitudes and
/// exponent notation otherwise, trailing zeros removed (like C's `%.9g`).
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent notation");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn config_fields(est: &EstimatorConfig) -> [String; 5] {
    [
        est.rule.name().to_string(),
        format_float(est.eta),
        est.steps.to_string(),
        est.resolved_init().name().to_string(),
        format_float(est.temperature),
    ]
}

/// Writes one row per (run, epoch) in the order given. Wall time is written
/// as 0 unless `record_timing` is set, so that outputs stay byte-identical
/// across repetitions.
pub fn write_runs_csv<W: Write>(out: W, records: &[RunRecord], record_timing: bool) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RUN_COLUMNS).map_err(csv_error)?;
    for r in records {
        let wall = if record_timing { r.wall_ms } else { 0 }.to_string();
        let head = config_fields(&r.estimator);
        let row = |epoch: usize, metrics: [String; 4]| {
            let mut row = vec![r.run_id.to_string()];
            row.extend(head.iter().cloned());
            row.push(r.seed.to_string());
            row.push(epoch.to_string());
            row.extend(metrics);
            row.push(wall.clone());
            row
        };
        for m in &r.epochs {
            let metrics = [m.train_loss, m.eval_loss, m.latent_exact, m.latent_f1].map(format_float);
            w.write_record(row(m.epoch, metrics)).map_err(csv_error)?;
        }
        if let Some(epoch) = r.diverged_at {
            w.write_record(row(epoch, std::array::from_fn(|_| DIVERGED.to_string()))).map_err(csv_error)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> crate::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => crate::Error::Io(io),
        other => crate::Error::Config(format!("{other:?}")),
    }
}

/// Final-epoch statistics of all runs sharing one estimator configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub estimator: EstimatorConfig,
    pub runs: usize,
    pub diverged: usize,
    /// (mean, sd) over non-diverged runs, in the order train loss, eval
    /// loss, latent exact, latent F1. NaN when every run diverged.
    pub stats: [(f64, f64); 4],
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// Groups records by estimator configuration, keeping first-appearance
/// order, and reduces each group to mean and sample sd over seeds.
pub fn summarize(records: &[RunRecord]) -> Vec<CellSummary> {
    let mut cells: Vec<(EstimatorConfig, Vec<&RunRecord>)> = Vec::new();
    for r in records {
        match cells.iter_mut().find(|(e, _)| same_cell(e, &r.estimator)) {
            Some((_, members)) => members.push(r),
            None => cells.push((r.estimator, vec![r])),
        }
    }
    cells
        .into_iter()
        .map(|(estimator, members)| {
            let finished: Vec<_> = members.iter().filter_map(|r| r.final_metrics().ok()).collect();
            let column =
                |f: fn(&super::train::EpochMetrics) -> f64| mean_sd(&finished.iter().map(|m| f(m)).collect::<Vec<_>>());
            CellSummary {
                estimator,
                runs: members.len(),
                diverged: members.len() - finished.len(),
                stats: [
                    column(|m| m.train_loss),
                    column(|m| m.eval_loss),
                    column(|m| m.latent_exact),
                    column(|m| m.latent_f1),
                ],
            }
        })
        .collect()
}

fn same_cell(a: &EstimatorConfig, b: &EstimatorConfig) -> bool {
    a.rule == b.rule
        && a.eta == b.eta
        && a.steps == b.steps
        && a.resolved_init() == b.resolved_init()
        && a.temperature == b.temperature
        && a.schedule == b.schedule
}

pub fn write_summary_csv<W: Write>(out: W, cells: &[CellSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> =
        ["rule", "eta", "steps", "init", "temperature", "runs", "diverged"].iter().map(|s| s.to_string()).collect();
    for metric in ["train_loss", "eval_loss", "latent_exact", "latent_f1"] {
        header.push(format!("{metric}_mean"));
        header.push(format!("{metric}_sd"));
    }
    w.write_record(&header).map_err(csv_error)?;
    for c in cells {
        let mut row: Vec<String> = config_fields(&c.estimator).into();
        row.push(c.runs.to_string());
        row.push(c.diverged.to_string());
        for (mean, sd) in c.stats {
            row.push(format_float(mean));
            row.push(format_float(sd));
        }
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}
