//! Declarative pulse-based models.
//!
//! A model is a set of Hermitian terms, each attached to a pulse channel. A
//! channel is either an *encoding* channel, whose amplitude is multiplied by
//! one input component `x_i`, or a *control* channel. Several terms may share
//! a channel; the channel operator is then their sum.

mod builtin;
mod io;
mod pauli;
mod spin;

pub use builtin::{builtin_model, builtin_model_with, BuiltinModel, BuiltinOptions, InitialChoice, DEFAULT_DT};
pub use io::{fmt17, load_model, model_from_json, model_to_json, save_model, F17};
pub use pauli::{build_pauli, site_pauli, PauliLetter, PauliString};
pub use spin::{spin_operators, SpinOperators};

use crate::error::{Error, Result};
use crate::linop::{self, CMatrix, StateVector, C64};

/// Hermiticity tolerance for constructed operators.
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Dense Hermitian matrix, optionally remembered as a sum of Pauli strings.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianOperator {
    matrix: CMatrix,
    paulis: Option<Vec<PauliString>>,
}

impl HermitianOperator {
    pub fn from_paulis(terms: Vec<PauliString>) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| Error::InvalidPauli { spec: String::new(), reason: "empty Pauli sum".into() })?;
        let n = first.n();
        let mut matrix = CMatrix::zeros(1 << n, 1 << n);
        for t in &terms {
            if t.n() != n {
                return Err(Error::InvalidPauli { spec: t.label(), reason: format!("expected {n} sites") });
            }
            matrix += t.to_matrix()?;
        }
        Ok(Self { matrix, paulis: Some(terms) })
    }

    /// Wraps a dense matrix, symmetrizing away roundoff. Fails if the input is
    /// not Hermitian within [`HERMITIAN_TOL`].
    pub fn from_dense(matrix: CMatrix) -> Result<Self> {
        if !linop::is_finite(&matrix) {
            return Err(Error::NonFinite("operator"));
        }
        if !linop::is_hermitian(&matrix, HERMITIAN_TOL) {
            return Err(Error::InvalidModel("operator is not Hermitian".into()));
        }
        let matrix = (&matrix + matrix.adjoint()) * C64::new(0.5, 0.0);
        Ok(Self { matrix, paulis: None })
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn paulis(&self) -> Option<&[PauliString]> {
        self.paulis.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            matrix: &self.matrix * C64::new(s, 0.0),
            paulis: self.paulis.as_ref().map(|ps| ps.iter().map(|p| p.clone().with_coeff(p.coeff * s)).collect()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TermKind {
    /// Amplitude multiplied by input component `input` (0-based).
    Encoding {
        input: usize,
    },
    Control,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianTerm {
    pub kind: TermKind,
    /// 0-based pulse channel.
    pub pulse: usize,
    pub operator: HermitianOperator,
}

impl HamiltonianTerm {
    pub fn encoding(input: usize, pulse: usize, operator: HermitianOperator) -> Self {
        Self { kind: TermKind::Encoding { input }, pulse, operator }
    }

    pub fn control(pulse: usize, operator: HermitianOperator) -> Self {
        Self { kind: TermKind::Control, pulse, operator }
    }
}

/// Piecewise-constant amplitudes `θ_c(t)` on `[0, T]` with `K` equal segments.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseSchedule {
    pub duration: f64,
    pub segments: usize,
    /// `amplitudes[channel][segment]`.
    pub amplitudes: Vec<Vec<f64>>,
    /// Entries marked false are never changed by training or sampling.
    pub tunable: Vec<Vec<bool>>,
    /// Optional per-channel amplitude box.
    pub bounds: Vec<Option<(f64, f64)>>,
}

impl PulseSchedule {
    /// All-zero, fully tunable schedule.
    pub fn new(duration: f64, segments: usize, channels: usize) -> Self {
        Self {
            duration,
            segments,
            amplitudes: vec![vec![0.0; segments]; channels],
            tunable: vec![vec![true; segments]; channels],
            bounds: vec![None; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.amplitudes.len()
    }

    /// Segment length `T / K` (zero for an empty schedule).
    pub fn dt(&self) -> f64 {
        if self.segments == 0 {
            0.0
        } else {
            self.duration / self.segments as f64
        }
    }

    /// Sets every segment of `channel` to `value`, tunable or frozen.
    pub fn set_channel(&mut self, channel: usize, value: f64, tunable: bool) {
        self.amplitudes[channel].iter_mut().for_each(|a| *a = value);
        self.tunable[channel].iter_mut().for_each(|t| *t = tunable);
    }

    pub fn is_channel_frozen(&self, channel: usize) -> bool {
        self.tunable[channel].iter().all(|t| !t)
    }

    pub fn tunable_count(&self) -> usize {
        self.tunable.iter().flatten().filter(|t| **t).count()
    }

    /// Same channels on a new time grid. Frozen constant channels keep their
    /// value; everything else restarts at zero.
    pub fn relayout(&self, duration: f64, segments: usize) -> Self {
        let mut out = Self::new(duration, segments, self.channels());
        for c in 0..self.channels() {
            if self.is_channel_frozen(c) {
                let value = self.amplitudes[c].first().copied().unwrap_or(0.0);
                out.set_channel(c, value, false);
            }
        }
        out.bounds = self.bounds.clone();
        out
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration.is_finite() && self.duration >= 0.0) {
            return Err(Error::InvalidModel(format!("invalid duration {}", self.duration)));
        }
        if self.segments == 0 && self.duration != 0.0 {
            return Err(Error::InvalidModel("positive duration needs at least one segment".into()));
        }
        if self.segments > 0 && self.duration <= 0.0 {
            return Err(Error::InvalidModel("segments need a positive duration".into()));
        }
        if self.tunable.len() != self.channels() || self.bounds.len() != self.channels() {
            return Err(Error::InvalidModel("schedule channel arrays disagree in length".into()));
        }
        for (amps, mask) in self.amplitudes.iter().zip(&self.tunable) {
            if amps.len() != self.segments || mask.len() != self.segments {
                return Err(Error::InvalidModel("schedule row length differs from K".into()));
            }
            if amps.iter().any(|a| !a.is_finite()) {
                return Err(Error::NonFinite("pulse amplitudes"));
            }
        }
        for b in self.bounds.iter().flatten() {
            if !(b.0 <= b.1) {
                return Err(Error::InvalidModel(format!("empty amplitude bound {b:?}")));
            }
        }
        Ok(())
    }
}

/// Complete model: Hamiltonian terms, initial state, observable, pulses and
/// output scale `θ_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub name: Option<String>,
    pub n: usize,
    pub m: usize,
    pub terms: Vec<HamiltonianTerm>,
    pub initial_state: StateVector,
    pub observable: HermitianOperator,
    pub schedule: PulseSchedule,
    pub scale: f64,
    /// Per-input closed interval.
    pub domain: Vec<(f64, f64)>,
}

impl ModelSpec {
    /// Builds and validates a model with the default `[-1, 1]^m` domain and
    /// unit output scale.
    pub fn new(
        n: usize,
        m: usize,
        terms: Vec<HamiltonianTerm>,
        initial_state: StateVector,
        observable: HermitianOperator,
        schedule: PulseSchedule,
    ) -> Result<Self> {
        let spec = Self {
            name: None,
            n,
            m,
            terms,
            initial_state,
            observable,
            schedule,
            scale: 1.0,
            domain: vec![(-1.0, 1.0); m],
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn dim(&self) -> usize {
        1 << self.n
    }

    pub fn channel_count(&self) -> usize {
        self.schedule.channels()
    }

    pub fn channel_kind(&self, channel: usize) -> TermKind {
        self.terms.iter().find(|t| t.pulse == channel).map(|t| t.kind).unwrap_or(TermKind::Control)
    }

    /// Input index driving each channel (`None` for control channels).
    pub fn channel_inputs(&self) -> Vec<Option<usize>> {
        (0..self.channel_count())
            .map(|c| match self.channel_kind(c) {
                TermKind::Encoding { input } => Some(input),
                TermKind::Control => None,
            })
            .collect()
    }

    /// Sum of the operators of every term on `channel`.
    pub fn channel_operator(&self, channel: usize) -> CMatrix {
        let d = self.dim();
        self.terms.iter().filter(|t| t.pulse == channel).fold(CMatrix::zeros(d, d), |acc, t| acc + t.operator.matrix())
    }

    pub fn channel_operators(&self) -> Vec<CMatrix> {
        (0..self.channel_count()).map(|c| self.channel_operator(c)).collect()
    }

    pub fn control_channels(&self) -> Vec<usize> {
        (0..self.channel_count()).filter(|&c| self.channel_kind(c) == TermKind::Control).collect()
    }

    /// Generator weight of each channel for input `x`: `x_i` on encoding
    /// channels, 1 on control channels.
    pub fn channel_weights(&self, x: &[f64]) -> Vec<f64> {
        self.channel_inputs().into_iter().map(|inp| inp.map_or(1.0, |i| x[i])).collect()
    }

    /// `Σ_k x_k θ_k[seg] H_k + Σ_k θ_k[seg] H_k`.
    pub fn hamiltonian_at(&self, x: &[f64], segment: usize) -> Result<HermitianOperator> {
        if segment >= self.schedule.segments {
            return Err(Error::IndexOutOfRange { what: "segment", index: segment, limit: self.schedule.segments });
        }
        self.check_input(x)?;
        let d = self.dim();
        let mut h = CMatrix::zeros(d, d);
        for t in &self.terms {
            let w = match t.kind {
                TermKind::Encoding { input } => x[input],
                TermKind::Control => 1.0,
            };
            let a = w * self.schedule.amplitudes[t.pulse][segment];
            if a != 0.0 {
                h += t.operator.matrix() * C64::new(a, 0.0);
            }
        }
        HermitianOperator::from_dense(h)
    }

    pub fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.m {
            return Err(Error::DimensionMismatch { expected: (self.m, 1), found: (x.len(), 1) });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model input"));
        }
        Ok(())
    }

    /// Copy with a new time grid (see [`PulseSchedule::relayout`]).
    pub fn with_layout(&self, duration: f64, segments: usize) -> Result<Self> {
        let mut out = self.clone();
        out.schedule = self.schedule.relayout(duration, segments);
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n > linop::DEFAULT_MAX_QUBITS {
            return Err(Error::InvalidModel(format!(
                "qubit count {} outside 1..={}",
                self.n,
                linop::DEFAULT_MAX_QUBITS
            )));
        }
        let d = self.dim();
        self.schedule.validate()?;
        let channels = self.channel_count();
        let mut kinds: Vec<Option<TermKind>> = vec![None; channels];
        for t in &self.terms {
            if t.pulse >= channels {
                return Err(Error::IndexOutOfRange { what: "pulse channel", index: t.pulse, limit: channels });
            }
            if let TermKind::Encoding { input } = t.kind {
                if input >= self.m {
                    return Err(Error::IndexOutOfRange { what: "input", index: input, limit: self.m });
                }
            }
            if t.operator.dim() != d {
                return Err(Error::DimensionMismatch { expected: (d, d), found: t.operator.matrix().shape() });
            }
            match kinds[t.pulse] {
                None => kinds[t.pulse] = Some(t.kind),
                Some(k) if k != t.kind => {
                    return Err(Error::InvalidModel(format!(
                        "channel {} mixes term kinds {k:?} and {:?}",
                        t.pulse + 1,
                        t.kind
                    )))
                }
                _ => {}
            }
        }
        if let Some(c) = kinds.iter().position(Option::is_none) {
            return Err(Error::InvalidModel(format!("channel {} has no terms", c + 1)));
        }
        for i in 0..self.m {
            if !kinds.contains(&Some(TermKind::Encoding { input: i })) {
                return Err(Error::InvalidModel(format!("input {} is never encoded", i + 1)));
            }
        }
        if self.initial_state.len() != d {
            return Err(Error::DimensionMismatch { expected: (d, 1), found: (self.initial_state.len(), 1) });
        }
        let norm = linop::state_norm(&self.initial_state);
        if (norm - 1.0).abs() > 1e-10 {
            return Err(Error::InvalidModel(format!("initial state norm {norm} is not 1")));
        }
        if self.observable.dim() != d {
            return Err(Error::DimensionMismatch { expected: (d, d), found: self.observable.matrix().shape() });
        }
        if !linop::is_hermitian(self.observable.matrix(), HERMITIAN_TOL) {
            return Err(Error::InvalidModel("observable is not Hermitian".into()));
        }
        if !self.scale.is_finite() {
            return Err(Error::NonFinite("output scale"));
        }
        if self.domain.len() != self.m || self.domain.iter().any(|(lo, hi)| !(lo <= hi)) {
            return Err(Error::InvalidModel("domain must hold one interval per input".into()));
        }
        Ok(())
    }
}

/// Normalizes a state vector; fails on the zero vector.
pub fn normalized(psi: StateVector) -> Result<StateVector> {
    let norm = linop::state_norm(&psi);
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::InvalidModel("cannot normalize a zero state".into()));
    }
    Ok(psi / C64::new(norm, 0.0))
}

/// Product state from per-qubit amplitude pairs (first qubit most significant).
pub fn product_state(qubits: &[[C64; 2]]) -> Result<StateVector> {
    let mut psi = StateVector::from_element(1, C64::new(1.0, 0.0));
    for q in qubits {
        let local = StateVector::from_vec(q.to_vec());
        psi = psi.kronecker(&local);
    }
    normalized(psi)
}

/// `|0…0⟩` on `n` qubits.
pub fn zero_state(n: usize) -> StateVector {
    let mut psi = StateVector::zeros(1 << n);
    psi[0] = C64::new(1.0, 0.0);
    psi
}
