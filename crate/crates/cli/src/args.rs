//! Model selection flags shared by every subcommand.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use pulseqml::model::{
    builtin_model_with, load_model, zero_state, BuiltinModel, BuiltinOptions, InitialChoice, ModelSpec, DEFAULT_DT,
};
use serde::Serialize;

#[derive(Args, Debug, Clone, Serialize)]
pub struct ModelArgs {
    /// `builtin:<id>` with id 1, 2, 3, 4, eq13 or eq15, or a model JSON file.
    #[arg(long)]
    pub model: String,

    /// Qubit count of a builtin model.
    #[arg(long)]
    pub n: Option<usize>,

    /// Initial state: `paper` (or `reference`) keeps the model's own, `00` (or `zero`) is |0…0⟩.
    #[arg(long, default_value = "paper")]
    pub initial: String,

    /// Total pulse duration T.
    #[arg(long)]
    pub duration: Option<f64>,

    /// Sampling period; the schedule has round(T/dt) sub-pulses.
    #[arg(long)]
    pub dt: Option<f64>,

    /// Freeze pulses at a constant, e.g. `θ1,θ2=1`. `θk` (or `thetak`) is the
    /// k-th tunable pulse of the model; bare numbers are 0-based channels.
    #[arg(long, value_name = "PULSES=VALUE")]
    pub freeze: Vec<String>,
}

fn builtin_id(model: &str) -> Option<BuiltinModel> {
    if let Some(id) = model.strip_prefix("builtin:") {
        return id.parse().ok();
    }
    if Path::new(model).exists() {
        return None;
    }
    model.parse().ok()
}

fn is_zero_initial(s: &str) -> Result<bool> {
    match s {
        "paper" | "reference" => Ok(false),
        "00" | "0" | "zero" => Ok(true),
        s if !s.is_empty() && s.chars().all(|c| c == '0') => Ok(true),
        _ => bail!("unknown initial state {s:?}; use `paper` or `00`"),
    }
}

impl ModelArgs {
    pub fn builtin(id: BuiltinModel, n: usize) -> Self {
        Self {
            model: format!("builtin:{id}"),
            n: Some(n),
            initial: "paper".into(),
            duration: None,
            dt: None,
            freeze: Vec::new(),
        }
    }

    pub fn build(&self) -> Result<ModelSpec> {
        let zero = is_zero_initial(&self.initial)?;
        let mut spec = match builtin_id(&self.model) {
            Some(id) => {
                let opts = BuiltinOptions {
                    initial: if zero { InitialChoice::Zero } else { InitialChoice::Reference },
                    duration: self.duration,
                    dt: self.dt.unwrap_or(DEFAULT_DT),
                    freeze_encoding: false,
                };
                builtin_model_with(id, self.n.unwrap_or_else(|| id.default_qubits()), &opts)?
            }
            None => {
                if self.model.starts_with("builtin:") {
                    bail!("unknown builtin model {:?}", self.model);
                }
                let path = PathBuf::from(&self.model);
                let mut spec = load_model(&path).with_context(|| format!("loading model {}", path.display()))?;
                if self.n.is_some_and(|n| n != spec.n) {
                    bail!("--n {} disagrees with the model file ({} qubits)", self.n.unwrap_or(0), spec.n);
                }
                if zero {
                    spec.initial_state = zero_state(spec.n);
                }
                if self.duration.is_some() || self.dt.is_some() {
                    let t = self.duration.unwrap_or(spec.schedule.duration);
                    let dt = self.dt.unwrap_or_else(|| spec.schedule.dt());
                    spec = spec.with_layout(t, (t / dt).round() as usize)?;
                }
                spec
            }
        };
        let labels: Vec<usize> = (0..spec.channel_count()).filter(|&c| !spec.schedule.is_channel_frozen(c)).collect();
        for rule in &self.freeze {
            let (channels, value) = parse_freeze(rule, &labels, spec.channel_count())?;
            for c in channels {
                spec.schedule.set_channel(c, value, false);
            }
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// `θ1,θ2=1` → channels and value.
fn parse_freeze(rule: &str, labels: &[usize], channels: usize) -> Result<(Vec<usize>, f64)> {
    let bad = || anyhow!("invalid --freeze {rule:?}; expected e.g. `θ1,θ2=1`");
    let (list, value) = rule.split_once('=').ok_or_else(bad)?;
    let value: f64 = value.trim().parse().map_err(|_| bad())?;
    let mut out = Vec::new();
    for token in list.split(',').map(str::trim) {
        let label = token.strip_prefix('θ').or_else(|| token.strip_prefix("theta"));
        let channel = match label {
            Some(k) => {
                let k: usize = k.parse().map_err(|_| bad())?;
                *k.checked_sub(1).and_then(|i| labels.get(i)).ok_or_else(|| {
                    anyhow!("pulse θ{k} does not exist; the model has {} tunable pulses", labels.len())
                })?
            }
            None => token.parse().map_err(|_| bad())?,
        };
        if channel >= channels {
            bail!("channel {channel} out of range; the model has {channels} channels");
        }
        out.push(channel);
    }
    Ok((out, value))
}
