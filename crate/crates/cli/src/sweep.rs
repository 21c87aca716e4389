//! Experiment sweeps over models and qubit counts.
//!
//! `fig4a` scans the pulse duration for the shortest T whose training loss
//! reaches a threshold. `fig4b` grows T until the sampled variance over
//! random pulses is stationary.

use std::fmt::Write as _;
use std::ops::ControlFlow;
use std::path::Path;
use std::time::Instant;

use anyhow::{anyhow, bail, Result};
use clap::{Args, ValueEnum};
use pulseqml::lie::{self, AmplitudeDist, StationarityConfig};
use pulseqml::model::{builtin_model_with, fmt17, BuiltinModel, BuiltinOptions};
use pulseqml::train::{self, Dataset, Grid, Target, TrainConfig};
use rayon::prelude::*;
use serde::Serialize;

use crate::commands::BackendArg;
use crate::run::{cell_seed, resolve_out, write_atomic, RunDir};
use crate::{OutArgs, Outcome};

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Fig4a,
    Fig4b,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Quantity {
    /// Training loss on the target dataset.
    Loss,
    /// Model output at one random input.
    Output,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct SweepArgs {
    #[arg(value_enum)]
    pub experiment: Experiment,

    /// Builtin model ids, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4")]
    pub models: Vec<String>,

    /// Qubit counts: `2..6`, `2-6` or `2,3,5`. Counts a model does not support are skipped.
    #[arg(long, default_value = "2..3")]
    pub n_range: String,

    /// Training restarts per duration (fig4a).
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,

    /// Base seed; each cell derives its own stream from it.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Loss a duration must reach (fig4a).
    #[arg(long, default_value_t = 1e-3)]
    pub threshold: f64,

    /// Explicit durations, comma separated; replaces the geometric grid.
    #[arg(long, value_delimiter = ',')]
    pub t_grid: Vec<f64>,

    #[arg(long, default_value_t = 0.5)]
    pub t_min: f64,

    #[arg(long, default_value_t = 40.0)]
    pub t_max: f64,

    /// Ratio of consecutive grid durations.
    #[arg(long, default_value_t = 2.0)]
    pub t_ratio: f64,

    /// Sampling period; K = T/dt.
    #[arg(long, default_value_t = 0.1)]
    pub dt: f64,

    /// Adam iterations per training run (fig4a).
    #[arg(long, default_value_t = 1000)]
    pub iters: usize,

    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,

    #[arg(long, value_enum, default_value = "exact")]
    pub backend: BackendArg,

    /// Target function of the dataset.
    #[arg(long, default_value = "eq14")]
    pub target: String,

    /// Keep the target's own range instead of rescaling it onto [-1, 1].
    #[arg(long)]
    pub raw_target: bool,

    /// Dataset grid size; defaults to 200 for fig4a and 20 for fig4b.
    #[arg(long)]
    pub points: Option<usize>,

    /// Wall-clock seconds per cell before it is marked as timed out.
    #[arg(long)]
    pub cell_budget: Option<f64>,

    /// Random schedules per variance estimate (fig4b).
    #[arg(long, default_value_t = 1000)]
    pub draws: usize,

    /// Amplitude law for fig4b: `uniform`, `uniform:A`, `uniform:LO,HI`.
    #[arg(long, default_value = "uniform")]
    pub dist: String,

    #[arg(long, value_enum, default_value = "loss")]
    pub quantity: Quantity,

    /// First duration of the stationarity search (fig4b).
    #[arg(long, default_value_t = 20.0)]
    pub t_start: f64,

    /// Longest duration of the stationarity search (fig4b).
    #[arg(long, default_value_t = 120.0)]
    pub t_cap: f64,

    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArgs,
}

/// `2..6`, `2-6` (inclusive) or `2,3,5`.
pub fn parse_n_range(s: &str) -> Result<Vec<usize>> {
    let bad = || anyhow!("invalid qubit range {s:?}");
    let span = |a: &str, b: &str| -> Result<Vec<usize>> {
        let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
        if a > b {
            return Err(bad());
        }
        Ok((a..=b).collect())
    };
    if let Some((a, b)) = s.split_once("..") {
        return span(a, b.trim_start_matches('='));
    }
    if let Some((a, b)) = s.split_once('-') {
        return span(a, b);
    }
    s.split(',').map(|v| v.trim().parse().map_err(|_| bad())).collect()
}

/// Geometric grid `t_min·r^k` below `t_max`, then `t_max` itself.
pub fn geometric_grid(t_min: f64, t_max: f64, ratio: f64) -> Result<Vec<f64>> {
    if !(t_min > 0.0 && t_max >= t_min && ratio > 1.0) {
        bail!("invalid duration grid {t_min}..{t_max} with ratio {ratio}");
    }
    let mut grid = Vec::new();
    let mut t = t_min;
    while t < t_max * (1.0 - 1e-12) {
        grid.push(t);
        t *= ratio;
    }
    grid.push(t_max);
    Ok(grid)
}

/// Settings of one minimal-duration scan.
#[derive(Debug, Clone)]
pub struct ScanSettings {
    pub t_grid: Vec<f64>,
    pub dt: f64,
    pub threshold: f64,
    pub seeds: usize,
    pub train: TrainConfig,
    pub budget_secs: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CellStatus {
    Reached,
    Exhausted,
    Timeout,
    Error,
}

impl CellStatus {
    fn as_str(self) -> &'static str {
        match self {
            Self::Reached => "reached",
            Self::Exhausted => "exhausted",
            Self::Timeout => "timeout",
            Self::Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanRun {
    pub duration: f64,
    pub restart: usize,
    pub best_loss: f64,
    pub iterations: usize,
}

/// Result of a minimal-duration scan for one model and qubit count.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanCell {
    pub model: String,
    pub n: usize,
    pub status: CellStatus,
    /// Shortest grid duration that reached the threshold.
    pub min_t: Option<f64>,
    pub best_loss: f64,
    pub best_t: f64,
    pub runs: Vec<ScanRun>,
    pub message: Option<String>,
}

/// Scans the duration grid for the shortest T whose fit reaches the threshold.
pub fn min_duration(id: BuiltinModel, n: usize, data: &Dataset, s: &ScanSettings, seed: u64) -> ScanCell {
    let start = Instant::now();
    let mut cell = ScanCell {
        model: id.to_string(),
        n,
        status: CellStatus::Exhausted,
        min_t: None,
        best_loss: f64::INFINITY,
        best_t: f64::NAN,
        runs: Vec::new(),
        message: None,
    };
    let over_budget = |start: &Instant| s.budget_secs.is_some_and(|b| start.elapsed().as_secs_f64() > b);
    'grid: for (ti, &t) in s.t_grid.iter().enumerate() {
        for restart in 0..s.seeds {
            let opts = BuiltinOptions { duration: Some(t), dt: s.dt, ..Default::default() };
            let cfg = TrainConfig {
                seed: cell_seed(seed, &["fig4a", id.id(), &n.to_string(), &ti.to_string(), &restart.to_string()]),
                target_loss: Some(s.threshold),
                ..s.train
            };
            let mut timed_out = false;
            let result = builtin_model_with(id, n, &opts).and_then(|spec| {
                train::fit_with(&spec, data, &cfg, |_| {
                    timed_out = over_budget(&start);
                    if timed_out {
                        ControlFlow::Break(())
                    } else {
                        ControlFlow::Continue(())
                    }
                })
            });
            let record = match result {
                Ok(r) => r,
                Err(e) => {
                    cell.status = CellStatus::Error;
                    cell.message = Some(e.to_string());
                    break 'grid;
                }
            };
            let best = record.best_loss();
            cell.runs.push(ScanRun { duration: t, restart, best_loss: best, iterations: record.losses.len() });
            if best < cell.best_loss {
                cell.best_loss = best;
                cell.best_t = t;
            }
            if best <= s.threshold {
                cell.status = CellStatus::Reached;
                cell.min_t = Some(t);
                break 'grid;
            }
            if timed_out {
                cell.status = CellStatus::Timeout;
                break 'grid;
            }
        }
    }
    cell
}

fn scan_trace_csv(cell: &ScanCell) -> String {
    let mut out = String::from("duration,restart,best_loss,iterations\n");
    for r in &cell.runs {
        let _ = writeln!(out, "{},{},{},{}", fmt17(r.duration), r.restart, fmt17(r.best_loss), r.iterations);
    }
    out
}

/// Summary table of a duration scan.
pub fn scan_summary_csv(cells: &[ScanCell]) -> String {
    let mut out = String::from("model,n,min_t,status,best_loss,best_t,runs\n");
    for c in cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            c.model,
            c.n,
            c.min_t.map(fmt17).unwrap_or_default(),
            c.status.as_str(),
            fmt17(c.best_loss),
            fmt17(c.best_t),
            c.runs.len()
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceCell {
    pub model: String,
    pub n: usize,
    pub variance: Option<f64>,
    pub mean: Option<f64>,
    pub stationary: bool,
    pub final_t: Option<f64>,
    pub trace: Vec<(f64, f64)>,
    pub message: Option<String>,
}

/// Stationary sampled variance for one model and qubit count.
#[allow(clippy::too_many_arguments)]
pub fn stationary_cell(
    id: BuiltinModel,
    n: usize,
    quantity: Quantity,
    data: &Dataset,
    draws: usize,
    dist: AmplitudeDist,
    cfg: &StationarityConfig,
    seed: u64,
) -> VarianceCell {
    let seed = cell_seed(seed, &["fig4b", id.id(), &n.to_string()]);
    let result =
        builtin_model_with(id, n, &BuiltinOptions { dt: cfg.dt, ..Default::default() }).and_then(
            |spec| match quantity {
                Quantity::Loss => lie::stationary_loss_variance(&spec, data, draws, dist, seed, cfg),
                Quantity::Output => lie::stationary_variance(&spec, draws, dist, seed, None, cfg),
            },
        );
    match result {
        Ok(r) => VarianceCell {
            model: id.to_string(),
            n,
            variance: Some(r.last.variance()),
            mean: Some(r.last.mean.0),
            stationary: r.stationary,
            final_t: Some(r.last.duration.0),
            trace: r.trace.iter().map(|(t, v)| (t.0, v.0)).collect(),
            message: None,
        },
        Err(e) => VarianceCell {
            model: id.to_string(),
            n,
            variance: None,
            mean: None,
            stationary: false,
            final_t: None,
            trace: Vec::new(),
            message: Some(e.to_string()),
        },
    }
}

fn variance_trace_csv(cell: &VarianceCell) -> String {
    let mut out = String::from("duration,variance\n");
    for (t, v) in &cell.trace {
        let _ = writeln!(out, "{},{}", fmt17(*t), fmt17(*v));
    }
    out
}

pub fn variance_summary_csv(cells: &[VarianceCell]) -> String {
    let mut out = String::from("model,n,variance,mean,stationary,final_t\n");
    let opt = |v: Option<f64>| v.map(fmt17).unwrap_or_default();
    for c in cells {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            c.model,
            c.n,
            opt(c.variance),
            opt(c.mean),
            c.stationary,
            opt(c.final_t)
        );
    }
    out
}

fn cells(args: &SweepArgs) -> Result<Vec<(BuiltinModel, usize)>> {
    let ns = parse_n_range(&args.n_range)?;
    let mut out = Vec::new();
    for m in &args.models {
        let id: BuiltinModel = m.parse()?;
        for &n in &ns {
            if builtin_model_with(id, n, &BuiltinOptions { duration: Some(1.0), ..Default::default() }).is_ok() {
                out.push((id, n));
            }
        }
    }
    if out.is_empty() {
        bail!("no supported (model, n) pairs in the sweep");
    }
    Ok(out)
}

fn sweep_data(args: &SweepArgs, default_points: usize) -> Result<Dataset> {
    let target: Target = args.target.parse()?;
    let m = target.input_dim().unwrap_or(1);
    let points = args.points.unwrap_or(default_points);
    let data = train::make_dataset(&target, &Grid::uniform(vec![(-1.0, 1.0); m], points))?;
    Ok(if args.raw_target { data } else { data.normalized() })
}

fn cell_file(experiment: &str, id: BuiltinModel, n: usize) -> String {
    format!("{experiment}_model{id}_n{n}.csv")
}

pub fn sweep(args: &SweepArgs) -> Result<Outcome> {
    let pairs = cells(args)?;
    let name = match args.experiment {
        Experiment::Fig4a => "fig4a",
        Experiment::Fig4b => "fig4b",
    };
    let mut run = RunDir::create(
        resolve_out(args.out.out.as_deref(), &format!("sweep-{name}")),
        &format!("sweep {name}"),
        serde_json::to_value(args)?,
        Some(args.seed),
    )?;
    let root = run.path().to_path_buf();
    let write_cell = |file: &str, body: String| write_atomic(&Path::new(&root).join(file), body.as_bytes());
    match args.experiment {
        Experiment::Fig4a => {
            let data = sweep_data(args, 200)?;
            let t_grid = if args.t_grid.is_empty() {
                geometric_grid(args.t_min, args.t_max, args.t_ratio)?
            } else {
                args.t_grid.clone()
            };
            let settings = ScanSettings {
                t_grid,
                dt: args.dt,
                threshold: args.threshold,
                seeds: args.seeds.max(1),
                train: TrainConfig {
                    learning_rate: args.lr,
                    max_iters: args.iters,
                    backend: args.backend.into(),
                    ..Default::default()
                },
                budget_secs: args.cell_budget,
            };
            let results: Vec<ScanCell> = pairs
                .par_iter()
                .map(|&(id, n)| -> Result<ScanCell> {
                    let cell = min_duration(id, n, &data, &settings, args.seed);
                    write_cell(&cell_file(name, id, n), scan_trace_csv(&cell))?;
                    Ok(cell)
                })
                .collect::<Result<_>>()?;
            for &(id, n) in &pairs {
                run.record(&cell_file(name, id, n));
            }
            let summary = scan_summary_csv(&results);
            print!("{summary}");
            run.write("fig4a.csv", summary)?;
        }
        Experiment::Fig4b => {
            let data = sweep_data(args, 20)?;
            let dist: AmplitudeDist = args.dist.parse()?;
            let cfg =
                StationarityConfig { t_start: args.t_start, t_cap: args.t_cap, dt: args.dt, ..Default::default() };
            let results: Vec<VarianceCell> = pairs
                .par_iter()
                .map(|&(id, n)| -> Result<VarianceCell> {
                    let cell = stationary_cell(id, n, args.quantity, &data, args.draws, dist, &cfg, args.seed);
                    write_cell(&cell_file(name, id, n), variance_trace_csv(&cell))?;
                    Ok(cell)
                })
                .collect::<Result<_>>()?;
            for &(id, n) in &pairs {
                run.record(&cell_file(name, id, n));
            }
            let summary = variance_summary_csv(&results);
            print!("{summary}");
            run.write("fig4b.csv", summary)?;
        }
    }
    run.finish()?;
    Ok(Outcome::Pass)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_n_range("2..4").unwrap(), vec![2, 3, 4]);
        assert_eq!(parse_n_range("2..=3").unwrap(), vec![2, 3]);
        assert_eq!(parse_n_range("2-3").unwrap(), vec![2, 3]);
        assert_eq!(parse_n_range("2,5").unwrap(), vec![2, 5]);
        assert!(parse_n_range("4..2").is_err());
        assert!(parse_n_range("a").is_err());
    }

    #[test]
    fn grid_is_geometric_and_capped() {
        let g = geometric_grid(0.5, 40.0, 2.0).unwrap();
        assert_eq!(g, vec![0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 40.0]);
        assert_eq!(geometric_grid(1.0, 4.0, 2.0).unwrap(), vec![1.0, 2.0, 4.0]);
        assert!(geometric_grid(1.0, 4.0, 1.0).is_err());
    }

    #[test]
    fn weak_threshold_stops_at_first_duration() {
        let data = train::make_dataset(&Target::Eq14, &Grid::uniform(vec![(-1.0, 1.0)], 20)).unwrap();
        let s = ScanSettings {
            t_grid: vec![0.5, 1.0, 2.0],
            dt: 0.1,
            threshold: 1e6,
            seeds: 1,
            train: TrainConfig { max_iters: 5, ..Default::default() },
            budget_secs: None,
        };
        let cell = min_duration(BuiltinModel::Model2, 2, &data, &s, 0);
        assert_eq!(cell.status, CellStatus::Reached);
        assert_eq!(cell.min_t, Some(0.5));
        assert_eq!(cell.runs.len(), 1);
    }

    #[test]
    fn impossible_threshold_exhausts_the_grid() {
        let data = train::make_dataset(&Target::Eq14, &Grid::uniform(vec![(-1.0, 1.0)], 10)).unwrap();
        let s = ScanSettings {
            t_grid: vec![0.5, 1.0],
            dt: 0.1,
            threshold: 0.0,
            seeds: 2,
            train: TrainConfig { max_iters: 3, ..Default::default() },
            budget_secs: None,
        };
        let cell = min_duration(BuiltinModel::Model1, 2, &data, &s, 0);
        assert_eq!(cell.status, CellStatus::Exhausted);
        assert_eq!(cell.min_t, None);
        assert_eq!(cell.runs.len(), 4);
        assert!(cell.best_loss.is_finite());
        let csv = scan_summary_csv(&[cell]);
        assert!(csv.lines().nth(1).unwrap().starts_with("1,2,,exhausted,"));
    }
}
