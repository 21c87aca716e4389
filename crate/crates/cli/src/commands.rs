use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, ValueEnum};
use pulseqml::express::{self, ExpressConfig, Reading, DEFAULT_CUTOFF, DEFAULT_SPAN_TOL, DEFAULT_WITNESS_TOL};
use pulseqml::lie::{self, AmplitudeDist, StationarityConfig, DEFAULT_CLOSURE_TOL, DEFAULT_SPLIT_TOL};
use pulseqml::model::{fmt17, model_to_json, ModelSpec, F17};
use pulseqml::train::{self, Backend, Dataset, Grid, Init, Target, TrainConfig};
use pulseqml::Error;
use serde::Serialize;

use crate::args::ModelArgs;
use crate::run::{resolve_out, RunDir};
use crate::{OutArgs, Outcome};

fn config_of(args: &impl Serialize) -> Result<serde_json::Value> {
    Ok(serde_json::to_value(args)?)
}

fn model_label(spec: &ModelSpec) -> String {
    spec.name.clone().unwrap_or_else(|| "custom".into())
}

/// Parses `lo,hi`.
pub fn parse_interval(s: &str) -> Result<(f64, f64)> {
    let bad = || anyhow!("invalid interval {s:?}; expected `lo,hi`");
    let (lo, hi) = s.split_once(',').ok_or_else(bad)?;
    let lo: f64 = lo.trim().parse().map_err(|_| bad())?;
    let hi: f64 = hi.trim().parse().map_err(|_| bad())?;
    if lo.is_nan() || hi.is_nan() || lo > hi {
        return Err(bad());
    }
    Ok((lo, hi))
}

fn domain_for(flags: &[String], m: usize, fallback: &[(f64, f64)]) -> Result<Vec<(f64, f64)>> {
    let parsed: Vec<(f64, f64)> = flags.iter().map(|s| parse_interval(s)).collect::<Result<_>>()?;
    match parsed.len() {
        0 if fallback.len() == m => Ok(fallback.to_vec()),
        0 => Ok(vec![(-1.0, 1.0); m]),
        1 => Ok(vec![parsed[0]; m]),
        k if k == m => Ok(parsed),
        k => bail!("{k} --domain intervals given for {m} inputs"),
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct LieArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,

    /// Relative tolerance for new algebra directions.
    #[arg(long, default_value_t = DEFAULT_CLOSURE_TOL)]
    pub tol: f64,

    /// Tolerance of the ideal decomposition.
    #[arg(long, default_value_t = DEFAULT_SPLIT_TOL)]
    pub split_tol: f64,

    /// Largest algebra dimension to build; defaults to 4^n.
    #[arg(long)]
    pub max_dim: Option<usize>,

    /// Also estimate the variance from this many random schedules.
    #[arg(long)]
    pub sampled: Option<usize>,

    /// Amplitude law for sampling: `uniform`, `uniform:A`, `uniform:LO,HI` or `keep`.
    #[arg(long, default_value = "uniform")]
    pub dist: String,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Grow T from the model's duration until the sampled variance settles.
    #[arg(long)]
    pub stationary: bool,

    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArgs,
}

#[derive(Serialize)]
struct LieOutput<'a> {
    model: String,
    n: usize,
    algebra_dim: usize,
    center_dim: usize,
    ideal_dims: Vec<usize>,
    variance: &'a lie::VarianceReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    sampled: Option<lie::SampledVariance>,
    #[serde(skip_serializing_if = "Option::is_none")]
    stationarity: Option<Vec<(F17, F17)>>,
}

pub fn lie(args: &LieArgs) -> Result<Outcome> {
    let spec = args.model.build()?;
    let mut run =
        RunDir::create(resolve_out(args.out.out.as_deref(), "lie"), "lie", config_of(args)?, Some(args.seed))?;
    let max_dim = args.max_dim.unwrap_or(1 << (2 * spec.n));
    let basis = lie::model_algebra(&spec, args.tol, max_dim).map_err(|e| match e {
        Error::MaxDimExceeded { max_dim } => anyhow!(
            "dynamical Lie algebra exceeds --max-dim {max_dim}: the model controls a larger subalgebra of u(2^n) \
             (possibly all of it), so the output variance decays with the Hilbert space dimension; \
             raise --max-dim to compute it"
        ),
        other => other.into(),
    })?;
    let decomposition = lie::decompose(&basis, args.split_tol)?;
    let report = lie::variance_exact(&spec, &decomposition)?;

    let (sampled, stationarity) = match args.sampled {
        None => (None, None),
        Some(draws) => {
            let dist: AmplitudeDist = args.dist.parse()?;
            if args.stationary {
                let cfg = StationarityConfig {
                    t_start: spec.schedule.duration,
                    dt: spec.schedule.dt(),
                    ..Default::default()
                };
                let cfg = StationarityConfig { t_cap: cfg.t_cap.max(cfg.t_start), ..cfg };
                let r = lie::stationary_variance(&spec, draws, dist, args.seed, None, &cfg)?;
                (Some(r.last), Some(r.trace))
            } else {
                (Some(lie::variance_sampled(&spec, draws, dist, args.seed, None)?), None)
            }
        }
    };

    println!("model      {} (n = {})", model_label(&spec), spec.n);
    println!(
        "algebra    dim {} (center {}, simple ideals {:?})",
        basis.dim(),
        decomposition.center.dim(),
        decomposition.ideal_dims()
    );
    println!("variance   {}", fmt17(report.total()));
    if !(report.rho_in_algebra || report.m_in_algebra) {
        println!("note       neither ρ nor M lies in the algebra; the formula is outside its hypothesis");
    }
    if let Some(s) = &sampled {
        println!("sampled    {} ({} draws, T = {})", fmt17(s.variance()), s.draws, s.duration.0);
    }
    let output = LieOutput {
        model: model_label(&spec),
        n: spec.n,
        algebra_dim: basis.dim(),
        center_dim: decomposition.center.dim(),
        ideal_dims: decomposition.ideal_dims(),
        variance: &report,
        sampled,
        stationarity,
    };
    run.write("lie.json", serde_json::to_string_pretty(&output)?)?;
    run.finish()?;
    Ok(Outcome::Pass)
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadingArg {
    Existence,
    Literal,
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ExpressArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,

    /// Highest total degree to check.
    #[arg(long, default_value_t = DEFAULT_CUTOFF)]
    pub cutoff: usize,

    /// Witness threshold for a passing degree.
    #[arg(long, default_value_t = DEFAULT_WITNESS_TOL)]
    pub tol: f64,

    /// Rank tolerance of the operator spans.
    #[arg(long, default_value_t = DEFAULT_SPAN_TOL)]
    pub span_tol: f64,

    #[arg(long, value_enum, default_value = "existence")]
    pub reading: ReadingArg,

    /// Compare each degree against Dyson-series monomial coefficients.
    #[arg(long)]
    pub dyson_crosscheck: bool,

    #[arg(long)]
    pub max_dim: Option<usize>,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArgs,
}

pub fn express(args: &ExpressArgs) -> Result<Outcome> {
    let spec = args.model.build()?;
    let mut run =
        RunDir::create(resolve_out(args.out.out.as_deref(), "express"), "express", config_of(args)?, Some(args.seed))?;
    let cfg = ExpressConfig {
        cutoff: args.cutoff,
        tol: args.tol,
        span_tol: args.span_tol,
        max_dim: args.max_dim,
        reading: match args.reading {
            ReadingArg::Existence => Reading::Existence,
            ReadingArg::Literal => Reading::Literal,
        },
        dyson_crosscheck: args.dyson_crosscheck,
        seed: args.seed,
    };
    let report = express::check_with(&spec, &cfg)?;
    let table = report.to_table();
    print!("{table}");
    let failing: Vec<String> = report.failing().iter().map(|r| format!("{:?}", r.degree)).collect();
    if report.pass {
        println!("PASS: every degree up to {} has a nonzero witness", args.cutoff);
    } else {
        println!("FAIL: degrees {} cannot appear in the output", failing.join(" "));
    }
    run.write("express.json", report.to_json()?)?;
    run.write("express.txt", table)?;
    run.finish()?;
    Ok(if report.pass { Outcome::Pass } else { Outcome::Fail })
}

#[derive(ValueEnum, Debug, Clone, Copy, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendArg {
    Exact,
    Fd,
}

impl From<BackendArg> for Backend {
    fn from(b: BackendArg) -> Self {
        match b {
            BackendArg::Exact => Backend::Exact,
            BackendArg::Fd => Backend::FiniteDifference,
        }
    }
}

/// Where training data comes from.
#[derive(Args, Debug, Clone, Serialize)]
pub struct DataArgs {
    /// Dataset CSV with header `x1,…,xm,y`.
    #[arg(long, conflicts_with = "target")]
    pub dataset: Option<PathBuf>,

    /// Target function: `eq14`, `eq17` or an expression in x1, …, xm.
    #[arg(long)]
    pub target: Option<String>,

    /// Grid points per input axis (default 200 for one input, 50 otherwise).
    #[arg(long)]
    pub points: Option<usize>,

    /// Input interval `lo,hi`; once for all inputs or once per input.
    #[arg(long, allow_hyphen_values = true)]
    pub domain: Vec<String>,

    /// Rescale the targets affinely onto [-1, 1].
    #[arg(long)]
    pub normalize: bool,
}

impl DataArgs {
    pub fn build(&self, m: usize, model_domain: &[(f64, f64)]) -> Result<Dataset> {
        let data = self.build_raw(m, model_domain)?;
        Ok(if self.normalize { data.normalized() } else { data })
    }

    fn build_raw(&self, m: usize, model_domain: &[(f64, f64)]) -> Result<Dataset> {
        match (&self.dataset, &self.target) {
            (Some(path), _) => {
                let domain =
                    if self.domain.is_empty() { None } else { Some(domain_for(&self.domain, m, model_domain)?) };
                Dataset::load(path, domain).with_context(|| format!("loading dataset {}", path.display()))
            }
            (None, Some(t)) => {
                let target: Target = t.parse()?;
                if let Some(tm) = target.input_dim() {
                    if tm != m {
                        bail!("target {target} has {tm} inputs but the model has {m}");
                    }
                }
                let points = self.points.unwrap_or(if m == 1 { 200 } else { 50 });
                let domain = domain_for(&self.domain, m, model_domain)?;
                Ok(train::make_dataset(&target, &Grid::uniform(domain, points))?)
            }
            (None, None) => bail!("give --dataset FILE or --target"),
        }
    }
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,

    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,

    #[arg(long, default_value_t = 1000)]
    pub iters: usize,

    #[arg(long, default_value_t = 0.05)]
    pub lr: f64,

    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, value_enum, default_value = "exact")]
    pub backend: BackendArg,

    /// Stop once the loss reaches this value; missing it exits with code 2.
    #[arg(long)]
    pub target_loss: Option<f64>,

    /// Half-width of the uniform pulse initialization.
    #[arg(long, default_value_t = 0.5)]
    pub init_width: f64,

    /// Start from the model's schedule instead of random pulses.
    #[arg(long)]
    pub keep_init: bool,

    /// Keep the output scale θ_0 fixed.
    #[arg(long)]
    pub fixed_scale: bool,

    /// Save the lowest-loss iterate rather than the last one.
    #[arg(long)]
    pub keep_best: bool,

    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArgs,
}

impl TrainArgs {
    pub fn config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            max_iters: self.iters,
            backend: self.backend.into(),
            target_loss: self.target_loss,
            seed: self.seed,
            init: if self.keep_init { Init::Keep } else { Init::Random { half_width: self.init_width } },
            train_scale: !self.fixed_scale,
            keep_best: self.keep_best,
            ..TrainConfig::default()
        }
    }
}

#[derive(Serialize)]
struct TrainSummary {
    model: String,
    samples: usize,
    iterations: usize,
    initial_loss: Option<F17>,
    final_loss: F17,
    best_loss: F17,
    scale: F17,
    converged: bool,
    wall_clock_secs: f64,
}

pub fn train(args: &TrainArgs) -> Result<Outcome> {
    let spec = args.model.build()?;
    let data = args.data.build(spec.m, &spec.domain)?;
    let mut run =
        RunDir::create(resolve_out(args.out.out.as_deref(), "train"), "train", config_of(args)?, Some(args.seed))?;
    let every = (args.iters / 20).max(1);
    let record = train::fit_with(&spec, &data, &args.config(), |p| {
        if p.iteration == 1 || p.iteration % every == 0 {
            eprintln!("iter {:>6}  loss {}", p.iteration, fmt17(p.loss));
        }
        std::ops::ControlFlow::Continue(())
    })?;
    run.write("dataset.csv", data.to_csv()?)?;
    run.write("loss.csv", record.loss_csv())?;
    run.write("fit.csv", train::fitted_csv(&record.spec, &data)?)?;
    run.write("model.json", model_to_json(&record.spec)?)?;
    let summary = TrainSummary {
        model: model_label(&spec),
        samples: data.len(),
        iterations: record.losses.len(),
        initial_loss: record.losses.first().copied().map(F17),
        final_loss: F17(record.final_loss),
        best_loss: F17(record.best_loss()),
        scale: F17(record.final_scale()),
        converged: record.converged,
        wall_clock_secs: record.wall_clock_secs,
    };
    run.write("record.json", serde_json::to_string_pretty(&summary)?)?;
    let dir = run.path().display().to_string();
    run.finish()?;
    println!(
        "final loss {} after {} iterations (θ_0 = {}), outputs in {dir}",
        fmt17(record.final_loss),
        record.losses.len(),
        fmt17(record.final_scale())
    );
    Ok(match args.target_loss {
        Some(_) if !record.converged => Outcome::Fail,
        _ => Outcome::Pass,
    })
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct ExportArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,

    /// Destination file; defaults to `model.json` in the run directory.
    #[arg(long, short)]
    #[serde(skip)]
    pub output: Option<PathBuf>,

    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArgs,
}

pub fn export(args: &ExportArgs) -> Result<Outcome> {
    let spec = args.model.build()?;
    let json = model_to_json(&spec)?;
    match &args.output {
        Some(path) => {
            crate::run::write_atomic(path, json.as_bytes())?;
            println!("wrote {}", path.display());
        }
        None => {
            let mut run =
                RunDir::create(resolve_out(args.out.out.as_deref(), "model"), "model export", config_of(args)?, None)?;
            let path = run.write("model.json", json)?;
            run.finish()?;
            println!("wrote {}", path.display());
        }
    }
    Ok(Outcome::Pass)
}

#[derive(Args, Debug, Clone, Serialize)]
pub struct DatasetArgs {
    /// Target function: `eq14`, `eq17` or an expression in x1, …, xm.
    #[arg(long)]
    pub target: String,

    /// Input count for expressions.
    #[arg(long)]
    pub m: Option<usize>,

    /// Grid points per input axis.
    #[arg(long, default_value_t = 200)]
    pub points: usize,

    /// Input interval `lo,hi`; once for all inputs or once per input.
    #[arg(long, allow_hyphen_values = true)]
    pub domain: Vec<String>,

    /// Rescale the targets affinely onto [-1, 1].
    #[arg(long)]
    pub normalize: bool,

    #[command(flatten)]
    #[serde(flatten)]
    pub out: OutArgs,
}

pub fn dataset(args: &DatasetArgs) -> Result<Outcome> {
    let target: Target = args.target.parse()?;
    let m = match (target.input_dim(), args.m) {
        (Some(d), Some(m)) if d != m => bail!("target {target} has {d} inputs, not {m}"),
        (Some(d), _) => d,
        (None, Some(m)) => m,
        (None, None) => 1,
    };
    let domain = domain_for(&args.domain, m, &[])?;
    let mut data = train::make_dataset(&target, &Grid::uniform(domain, args.points))?;
    if args.normalize {
        data = data.normalized();
    }
    let mut run = RunDir::create(resolve_out(args.out.out.as_deref(), "dataset"), "dataset", config_of(args)?, None)?;
    let path = run.write("dataset.csv", data.to_csv()?)?;
    run.finish()?;
    println!("wrote {} samples to {}", data.len(), path.display());
    Ok(Outcome::Pass)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intervals() {
        assert_eq!(parse_interval("-1,2.5").unwrap(), (-1.0, 2.5));
        assert!(parse_interval("1").is_err());
        assert!(parse_interval("2,1").is_err());
        assert_eq!(domain_for(&[], 2, &[]).unwrap(), vec![(-1.0, 1.0); 2]);
        assert_eq!(domain_for(&["0,1".into()], 2, &[]).unwrap(), vec![(0.0, 1.0); 2]);
        assert!(domain_for(&["0,1".into(), "0,1".into()], 3, &[]).is_err());
    }
}
