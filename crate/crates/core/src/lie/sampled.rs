//! Monte Carlo estimate of the output variance over random pulses.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ModelSpec, PulseSchedule, F17};
use crate::sim::Simulator;
use crate::train::Dataset;

/// Law of every tunable sub-pulse amplitude in a random draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AmplitudeDist {
    /// I.i.d. uniform on `[lo, hi]`; `lo == hi` gives a constant.
    Uniform { lo: f64, hi: f64 },
    /// Keep the model's own schedule in every draw.
    Keep,
}

impl Default for AmplitudeDist {
    fn default() -> Self {
        Self::Uniform { lo: -std::f64::consts::PI, hi: std::f64::consts::PI }
    }
}

impl fmt::Display for AmplitudeDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Uniform { lo, hi } => write!(f, "uniform:{lo},{hi}"),
            Self::Keep => f.write_str("keep"),
        }
    }
}

impl FromStr for AmplitudeDist {
    type Err = Error;

    /// `keep`, `uniform` (on `[−π, π]`), `uniform:A` (on `[−A, A]`) or
    /// `uniform:LO,HI`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidConfig(format!("unknown amplitude distribution {s:?}"));
        match s {
            "keep" => return Ok(Self::Keep),
            "uniform" => return Ok(Self::default()),
            _ => {}
        }
        let rest = s.strip_prefix("uniform:").ok_or_else(bad)?;
        let nums: Vec<f64> =
            rest.split(',').map(|v| v.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<_>>()?;
        let (lo, hi) = match nums.as_slice() {
            [a] => (-a.abs(), a.abs()),
            [lo, hi] => (*lo, *hi),
            _ => return Err(bad()),
        };
        if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
            return Err(bad());
        }
        Ok(Self::Uniform { lo, hi })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampledVariance {
    /// Unbiased sample variance of the output.
    pub variance: F17,
    pub mean: F17,
    pub draws: usize,
    /// Fixed input used for every draw.
    pub x: Vec<F17>,
    pub duration: F17,
    pub segments: usize,
}

impl SampledVariance {
    pub fn variance(&self) -> f64 {
        self.variance.0
    }
}

fn draw_schedule(base: &PulseSchedule, dist: AmplitudeDist, rng: &mut ChaCha8Rng) -> PulseSchedule {
    let mut s = base.clone();
    if let AmplitudeDist::Uniform { lo, hi } = dist {
        for (amps, mask) in s.amplitudes.iter_mut().zip(&base.tunable) {
            for (a, &t) in amps.iter_mut().zip(mask) {
                if t {
                    *a = if lo == hi { lo } else { rng.random_range(lo..hi) };
                }
            }
        }
    }
    s
}

fn stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Sample variance of `f(x, Θ)` over random schedules at one fixed input.
///
/// Draw `i` uses its own ChaCha stream `i + 1` of `seed`; when `x` is not
/// given it is drawn uniformly from the domain on stream 0.
pub fn variance_sampled(
    spec: &ModelSpec,
    draws: usize,
    dist: AmplitudeDist,
    seed: u64,
    x: Option<&[f64]>,
) -> Result<SampledVariance> {
    if draws < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 draws, got {draws}")));
    }
    let x: Vec<f64> = match x {
        Some(x) => x.to_vec(),
        None => {
            let mut rng = stream(seed, 0);
            spec.domain.iter().map(|&(lo, hi)| if lo == hi { lo } else { rng.random_range(lo..=hi) }).collect()
        }
    };
    spec.check_input(&x)?;
    let sim = Simulator::new(spec);
    let (mean, variance) = sample_moments(spec, draws, dist, seed, |schedule| Ok(sim.measure(schedule, &x)))?;
    Ok(SampledVariance {
        variance: F17(variance),
        mean: F17(mean),
        draws,
        x: x.into_iter().map(F17).collect(),
        duration: F17(spec.schedule.duration),
        segments: spec.schedule.segments,
    })
}

/// Sample variance of the training loss over random schedules; `x` is empty.
pub fn loss_variance_sampled(
    spec: &ModelSpec,
    data: &Dataset,
    draws: usize,
    dist: AmplitudeDist,
    seed: u64,
) -> Result<SampledVariance> {
    let (mean, variance) = sample_moments(spec, draws, dist, seed, |schedule| {
        let mut s = spec.clone();
        s.schedule = schedule.clone();
        crate::train::loss(&s, data)
    })?;
    Ok(SampledVariance {
        variance: F17(variance),
        mean: F17(mean),
        draws,
        x: Vec::new(),
        duration: F17(spec.schedule.duration),
        segments: spec.schedule.segments,
    })
}

fn sample_moments(
    spec: &ModelSpec,
    draws: usize,
    dist: AmplitudeDist,
    seed: u64,
    value: impl Fn(&PulseSchedule) -> Result<f64> + Sync,
) -> Result<(f64, f64)> {
    if draws < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 draws, got {draws}")));
    }
    let values: Vec<f64> = (0..draws as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i + 1);
            value(&draw_schedule(&spec.schedule, dist, &mut rng))
        })
        .collect::<Result<_>>()?;
    let mean = values.iter().sum::<f64>() / draws as f64;
    let variance = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
    Ok((mean, variance))
}

/// Growth of the pulse duration until the sampled variance settles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationarityConfig {
    pub t_start: f64,
    pub growth: f64,
    pub rel_tol: f64,
    pub t_cap: f64,
    /// Segment length; `K = round(T / dt)`.
    pub dt: f64,
}

impl Default for StationarityConfig {
    fn default() -> Self {
        Self { t_start: 20.0, growth: 1.5, rel_tol: 0.05, t_cap: 120.0, dt: crate::model::DEFAULT_DT }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationarityReport {
    /// `(T, variance)` at every duration tried.
    pub trace: Vec<(F17, F17)>,
    pub stationary: bool,
    /// Estimate at the last duration tried.
    pub last: SampledVariance,
}

/// Runs [`variance_sampled`] at `T, 1.5T, …` until two consecutive estimates
/// agree within `rel_tol`, or the next duration would exceed `t_cap`.
pub fn stationary_variance(
    spec: &ModelSpec,
    draws: usize,
    dist: AmplitudeDist,
    seed: u64,
    x: Option<&[f64]>,
    cfg: &StationarityConfig,
) -> Result<StationarityReport> {
    check_stationarity(cfg)?;
    let first = variance_sampled(&layout(spec, cfg, cfg.t_start)?, draws, dist, seed, x)?;
    let x: Vec<f64> = first.x.iter().map(|v| v.0).collect();
    stationary_by(cfg, first, |t| variance_sampled(&layout(spec, cfg, t)?, draws, dist, seed, Some(&x)))
}

/// [`stationary_variance`] for the training loss.
pub fn stationary_loss_variance(
    spec: &ModelSpec,
    data: &Dataset,
    draws: usize,
    dist: AmplitudeDist,
    seed: u64,
    cfg: &StationarityConfig,
) -> Result<StationarityReport> {
    check_stationarity(cfg)?;
    let first = loss_variance_sampled(&layout(spec, cfg, cfg.t_start)?, data, draws, dist, seed)?;
    stationary_by(cfg, first, |t| loss_variance_sampled(&layout(spec, cfg, t)?, data, draws, dist, seed))
}

fn layout(spec: &ModelSpec, cfg: &StationarityConfig, t: f64) -> Result<ModelSpec> {
    spec.with_layout(t, (t / cfg.dt).round().max(1.0) as usize)
}

fn check_stationarity(cfg: &StationarityConfig) -> Result<()> {
    if !(cfg.t_start > 0.0 && cfg.growth > 1.0 && cfg.dt > 0.0 && cfg.t_cap >= cfg.t_start) {
        return Err(Error::InvalidConfig(format!("invalid stationarity settings {cfg:?}")));
    }
    Ok(())
}

fn stationary_by(
    cfg: &StationarityConfig,
    first: SampledVariance,
    mut at: impl FnMut(f64) -> Result<SampledVariance>,
) -> Result<StationarityReport> {
    let mut t = cfg.t_start;
    let mut prev = first;
    let mut trace = vec![(F17(t), prev.variance)];
    loop {
        let next_t = t * cfg.growth;
        if next_t > cfg.t_cap * (1.0 + 1e-12) {
            return Ok(StationarityReport { trace, stationary: false, last: prev });
        }
        let next = at(next_t)?;
        trace.push((F17(next_t), next.variance));
        let (a, b) = (prev.variance(), next.variance());
        if (a - b).abs() <= cfg.rel_tol * a.abs().max(b.abs()) {
            return Ok(StationarityReport { trace, stationary: true, last: next });
        }
        t = next_t;
        prev = next;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_model, BuiltinModel};

    #[test]
    fn degenerate_distribution_has_zero_variance() {
        let spec = builtin_model(BuiltinModel::Eq13, 2).unwrap().with_layout(1.0, 10).unwrap();
        let r = variance_sampled(&spec, 10, AmplitudeDist::Uniform { lo: 0.3, hi: 0.3 }, 1, None).unwrap();
        assert!(r.variance().abs() < 1e-28);
        let r = variance_sampled(&spec, 10, AmplitudeDist::Keep, 1, Some(&[0.2])).unwrap();
        assert!(r.variance().abs() < 1e-28);
    }

    #[test]
    fn deterministic_for_seed() {
        let spec = builtin_model(BuiltinModel::Model2, 2).unwrap().with_layout(2.0, 20).unwrap();
        let a = variance_sampled(&spec, 50, AmplitudeDist::default(), 9, None).unwrap();
        let b = variance_sampled(&spec, 50, AmplitudeDist::default(), 9, None).unwrap();
        assert_eq!(a, b);
        let c = variance_sampled(&spec, 50, AmplitudeDist::default(), 10, None).unwrap();
        assert_ne!(a.variance, c.variance);
    }

    #[test]
    fn model1_two_qubits_matches_one_third() {
        let spec = builtin_model(BuiltinModel::Model1, 2).unwrap().with_layout(20.0, 200).unwrap();
        let r = variance_sampled(&spec, 1000, AmplitudeDist::default(), 3, None).unwrap();
        assert!((r.variance() - 1.0 / 3.0).abs() < 0.15 / 3.0, "{}", r.variance());
    }

    #[test]
    fn parses_distributions() {
        assert_eq!("keep".parse::<AmplitudeDist>().unwrap(), AmplitudeDist::Keep);
        assert_eq!("uniform:2".parse::<AmplitudeDist>().unwrap(), AmplitudeDist::Uniform { lo: -2.0, hi: 2.0 });
        assert_eq!("uniform:0,1".parse::<AmplitudeDist>().unwrap(), AmplitudeDist::Uniform { lo: 0.0, hi: 1.0 });
        assert!("normal".parse::<AmplitudeDist>().is_err());
        assert!("uniform:1,0".parse::<AmplitudeDist>().is_err());
    }

    #[test]
    fn loss_variance_matches_direct_losses() {
        let spec = builtin_model(BuiltinModel::Eq13, 2).unwrap().with_layout(1.0, 10).unwrap();
        let data =
            crate::train::make_dataset(&crate::train::Target::Eq14, &crate::train::Grid::uniform(vec![(-1.0, 1.0)], 7))
                .unwrap();
        let r = loss_variance_sampled(&spec, &data, 5, AmplitudeDist::default(), 4).unwrap();
        let losses: Vec<f64> = (1..=5)
            .map(|i| {
                let mut s = spec.clone();
                s.schedule = draw_schedule(&spec.schedule, AmplitudeDist::default(), &mut stream(4, i));
                crate::train::loss(&s, &data).unwrap()
            })
            .collect();
        let mean = losses.iter().sum::<f64>() / 5.0;
        let var = losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((r.variance() - var).abs() < 1e-12 * var);
        assert!(r.x.is_empty());
    }

    #[test]
    fn rejects_single_draw() {
        let spec = builtin_model(BuiltinModel::Eq13, 2).unwrap();
        assert!(variance_sampled(&spec, 1, AmplitudeDist::default(), 0, None).is_err());
    }
}
