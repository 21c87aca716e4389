//! Least-squares fitting of pulse schedules and the output scale with Adam.

mod data;

pub use data::{eq14, eq17, make_dataset, Dataset, Grid, Target, EQ14_TERMS};

use std::fmt::Write as _;
use std::ops::ControlFlow;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{fmt17, ModelSpec, PulseSchedule};
use crate::sim::Simulator;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Backend {
    /// Adjoint propagation with exact propagator derivatives.
    Exact,
    /// Central differences of the loss.
    FiniteDifference,
}

impl FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Self::Exact),
            "fd" | "finite-difference" => Ok(Self::FiniteDifference),
            _ => Err(Error::InvalidConfig(format!("unknown gradient backend {s:?}"))),
        }
    }
}

/// Starting point of the tunable amplitudes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Init {
    /// I.i.d. uniform on `[−half_width, half_width]`.
    Random { half_width: f64 },
    /// Start from the model's schedule.
    Keep,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub max_iters: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub backend: Backend,
    /// Stop once the loss is at or below this value.
    pub target_loss: Option<f64>,
    pub seed: u64,
    pub init: Init,
    pub train_scale: bool,
    pub fd_step: f64,
    pub divergence_limit: f64,
    /// Return the lowest-loss iterate instead of the last one.
    pub keep_best: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            max_iters: 1000,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            backend: Backend::Exact,
            target_loss: None,
            seed: 0,
            init: Init::Random { half_width: 0.5 },
            train_scale: true,
            fd_step: 1e-5,
            divergence_limit: 1e6,
            keep_best: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidConfig(what.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad("Adam betas must lie in (0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("Adam epsilon must be positive");
        }
        if !(self.fd_step > 0.0) {
            return bad("finite-difference step must be positive");
        }
        if let Init::Random { half_width } = self.init {
            if !(half_width >= 0.0 && half_width.is_finite()) {
                return bad("initialization width must be non-negative");
            }
        }
        Ok(())
    }
}

fn check_data(spec: &ModelSpec, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if data.m() != spec.m {
        return Err(Error::DimensionMismatch { expected: (spec.m, 1), found: (data.m(), 1) });
    }
    Ok(())
}

fn outputs(sim: &Simulator, schedule: &PulseSchedule, data: &Dataset) -> Vec<f64> {
    data.inputs.par_iter().map(|x| sim.measure(schedule, x)).collect()
}

fn mse(scale: f64, fs: &[f64], ys: &[f64]) -> f64 {
    fs.iter().zip(ys).map(|(f, y)| (scale * f - y).powi(2)).sum::<f64>() / ys.len() as f64
}

/// `N⁻¹ Σ (θ_0 f(x^(k)) − y^(k))²`.
pub fn loss(spec: &ModelSpec, data: &Dataset) -> Result<f64> {
    check_data(spec, data)?;
    let sim = Simulator::new(spec);
    Ok(mse(spec.scale, &outputs(&sim, &spec.schedule, data), &data.targets))
}

/// Loss derivatives; frozen amplitudes carry zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    /// `[channel][segment]`.
    pub pulses: Vec<Vec<f64>>,
    pub scale: f64,
}

/// Exact gradient of the loss.
pub fn gradient(spec: &ModelSpec, data: &Dataset) -> Result<Gradient> {
    Ok(gradient_with(spec, data, Backend::Exact, 1e-5)?.1)
}

/// Loss and gradient with the chosen backend.
pub fn gradient_with(spec: &ModelSpec, data: &Dataset, backend: Backend, fd_step: f64) -> Result<(f64, Gradient)> {
    check_data(spec, data)?;
    let sim = Simulator::new(spec);
    let schedule = &spec.schedule;
    let n = data.len() as f64;
    let (value, mut grad) = match backend {
        Backend::Exact => {
            let per_sample: Vec<(f64, Vec<Vec<f64>>)> =
                data.inputs.par_iter().map(|x| sim.measure_with_gradient(schedule, x)).collect();
            let mut pulses = vec![vec![0.0; schedule.segments]; schedule.channels()];
            let mut scale = 0.0;
            let mut total = 0.0;
            for ((f, df), y) in per_sample.iter().zip(&data.targets) {
                let r = spec.scale * f - y;
                total += r * r;
                scale += 2.0 * r * f / n;
                let w = 2.0 * r * spec.scale / n;
                for (row, drow) in pulses.iter_mut().zip(df) {
                    for (g, d) in row.iter_mut().zip(drow) {
                        *g += w * d;
                    }
                }
            }
            (total / n, Gradient { pulses, scale })
        }
        Backend::FiniteDifference => {
            let fs = outputs(&sim, schedule, data);
            let value = mse(spec.scale, &fs, &data.targets);
            let h = fd_step;
            let scale = (mse(spec.scale + h, &fs, &data.targets) - mse(spec.scale - h, &fs, &data.targets)) / (2.0 * h);
            let mut pulses = vec![vec![0.0; schedule.segments]; schedule.channels()];
            let mut probe = schedule.clone();
            for c in 0..schedule.channels() {
                for k in 0..schedule.segments {
                    if !schedule.tunable[c][k] {
                        continue;
                    }
                    let a = schedule.amplitudes[c][k];
                    probe.amplitudes[c][k] = a + h;
                    let plus = mse(spec.scale, &outputs(&sim, &probe, data), &data.targets);
                    probe.amplitudes[c][k] = a - h;
                    let minus = mse(spec.scale, &outputs(&sim, &probe, data), &data.targets);
                    probe.amplitudes[c][k] = a;
                    pulses[c][k] = (plus - minus) / (2.0 * h);
                }
            }
            (value, Gradient { pulses, scale })
        }
    };
    for (row, mask) in grad.pulses.iter_mut().zip(&schedule.tunable) {
        for (g, &t) in row.iter_mut().zip(mask) {
            if !t {
                *g = 0.0;
            }
        }
    }
    Ok((value, grad))
}

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct TrainRecord {
    /// Loss before each parameter update.
    pub losses: Vec<f64>,
    /// Model with the trained schedule and scale.
    pub spec: ModelSpec,
    /// Loss recomputed at the final parameters.
    pub final_loss: f64,
    pub wall_clock_secs: f64,
    pub converged: bool,
}

impl TrainRecord {
    pub fn final_schedule(&self) -> &PulseSchedule {
        &self.spec.schedule
    }

    pub fn final_scale(&self) -> f64 {
        self.spec.scale
    }

    pub fn best_loss(&self) -> f64 {
        self.losses.iter().copied().fold(self.final_loss, f64::min)
    }

    /// `iteration,loss` rows; the last row is the final loss.
    pub fn loss_csv(&self) -> String {
        let mut out = String::from("iteration,loss\n");
        for (i, l) in self.losses.iter().chain(std::iter::once(&self.final_loss)).enumerate() {
            let _ = writeln!(out, "{i},{}", fmt17(*l));
        }
        out
    }
}

/// `x1,…,xm,y,fit` rows of the trained model `θ_0 f(x)` on a dataset.
pub fn fitted_csv(spec: &ModelSpec, data: &Dataset) -> Result<String> {
    check_data(spec, data)?;
    let sim = Simulator::new(spec);
    let fs = outputs(&sim, &spec.schedule, data);
    let mut out = String::new();
    let header: Vec<String> = (1..=data.m()).map(|i| format!("x{i}")).chain(["y".into(), "fit".into()]).collect();
    let _ = writeln!(out, "{}", header.join(","));
    for ((x, y), f) in data.inputs.iter().zip(&data.targets).zip(&fs) {
        let mut row: Vec<String> = x.iter().map(|v| fmt17(*v)).collect();
        row.push(fmt17(*y));
        row.push(fmt17(spec.scale * f));
        let _ = writeln!(out, "{}", row.join(","));
    }
    Ok(out)
}

/// Progress seen by a [`fit_with`] observer.
pub struct Progress<'a> {
    pub iteration: usize,
    pub loss: f64,
    /// Parameters at which `loss` was evaluated.
    pub spec: &'a ModelSpec,
}

pub fn fit(spec: &ModelSpec, data: &Dataset, cfg: &TrainConfig) -> Result<TrainRecord> {
    fit_with(spec, data, cfg, |_| ControlFlow::Continue(()))
}

fn tunable_entries(schedule: &PulseSchedule) -> Vec<(usize, usize)> {
    (0..schedule.channels())
        .flat_map(|c| (0..schedule.segments).map(move |k| (c, k)))
        .filter(|&(c, k)| schedule.tunable[c][k])
        .collect()
}

fn initialize(spec: &ModelSpec, cfg: &TrainConfig) -> ModelSpec {
    let mut out = spec.clone();
    if let Init::Random { half_width } = cfg.init {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for (c, k) in tunable_entries(&spec.schedule) {
            out.schedule.amplitudes[c][k] =
                if half_width == 0.0 { 0.0 } else { rng.random_range(-half_width..=half_width) };
        }
    }
    out
}

/// Full-batch Adam on every tunable amplitude and, optionally, the scale.
///
/// The observer runs after each loss evaluation and may stop the run early.
pub fn fit_with(
    spec: &ModelSpec,
    data: &Dataset,
    cfg: &TrainConfig,
    mut observer: impl FnMut(&Progress<'_>) -> ControlFlow<()>,
) -> Result<TrainRecord> {
    cfg.validate()?;
    check_data(spec, data)?;
    let start = Instant::now();
    let mut current = initialize(spec, cfg);
    let entries = tunable_entries(&current.schedule);
    let count = entries.len() + usize::from(cfg.train_scale);
    let mut m = vec![0.0; count];
    let mut v = vec![0.0; count];
    let mut losses = Vec::with_capacity(cfg.max_iters);
    let mut best: Option<(f64, ModelSpec)> = None;
    for t in 1..=cfg.max_iters {
        let (value, grad) = gradient_with(&current, data, cfg.backend, cfg.fd_step)?;
        if !(value.is_finite() && value <= cfg.divergence_limit) {
            return Err(Error::Divergence { iteration: t, loss: value, limit: cfg.divergence_limit });
        }
        losses.push(value);
        if cfg.keep_best && best.as_ref().is_none_or(|(b, _)| value < *b) {
            best = Some((value, current.clone()));
        }
        let progress = Progress { iteration: t, loss: value, spec: &current };
        if observer(&progress).is_break() || cfg.target_loss.is_some_and(|target| value <= target) {
            break;
        }
        let flat: Vec<f64> =
            entries.iter().map(|&(c, k)| grad.pulses[c][k]).chain(cfg.train_scale.then_some(grad.scale)).collect();
        let bias1 = 1.0 - cfg.beta1.powi(t as i32);
        let bias2 = 1.0 - cfg.beta2.powi(t as i32);
        let steps: Vec<f64> = flat
            .iter()
            .enumerate()
            .map(|(i, g)| {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
                cfg.learning_rate * (m[i] / bias1) / ((v[i] / bias2).sqrt() + cfg.epsilon)
            })
            .collect();
        for (&(c, k), step) in entries.iter().zip(&steps) {
            let a = &mut current.schedule.amplitudes[c][k];
            *a -= step;
            if let Some((lo, hi)) = current.schedule.bounds[c] {
                *a = a.clamp(lo, hi);
            }
        }
        if cfg.train_scale {
            current.scale -= steps[entries.len()];
        }
    }
    let mut final_loss = loss(&current, data)?;
    if let Some((b, spec)) = best {
        if b < final_loss {
            current = spec;
            final_loss = loss(&current, data)?;
        }
    }
    let converged = cfg.target_loss.is_some_and(|target| final_loss <= target);
    Ok(TrainRecord { losses, spec: current, final_loss, wall_clock_secs: start.elapsed().as_secs_f64(), converged })
}
