//! Constructors for the reference models: the two-qubit univariate and
//! bivariate fitting models and the four multi-qubit symmetry classes.

use std::fmt;
use std::str::FromStr;

use super::{
    product_state, site_pauli, spin_operators, zero_state, HamiltonianTerm, HermitianOperator, ModelSpec, PauliLetter,
    PauliString, PulseSchedule,
};
use crate::error::{Error, Result};
use crate::linop::{StateVector, C64};

/// Sampling period used by every reference experiment.
pub const DEFAULT_DT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BuiltinModel {
    /// su(2) spin representation: `x J_z + θ_1 J_x + θ_2 J_y`.
    Model1,
    /// Non-interacting qubits, su(2)^⊕n.
    Model2,
    /// Nearest-neighbour XY chain with so(n) symmetry.
    Model3,
    /// Ring-coupled, fully controllable.
    Model4,
    /// `x σz⊗σz + θ_1 σx⊗I + θ_2 I⊗σx`.
    Eq13,
    /// `x_1 θ_1 σy⊗σy + x_2 θ_2 σz⊗σz + θ_3 σx⊗I + θ_4 I⊗σx`.
    Eq15,
}

impl BuiltinModel {
    pub fn id(self) -> &'static str {
        match self {
            Self::Model1 => "1",
            Self::Model2 => "2",
            Self::Model3 => "3",
            Self::Model4 => "4",
            Self::Eq13 => "eq13",
            Self::Eq15 => "eq15",
        }
    }

    /// Smallest supported qubit count.
    pub fn min_qubits(self) -> usize {
        match self {
            Self::Model1 | Self::Model2 => 1,
            Self::Model3 => 3,
            Self::Model4 | Self::Eq13 | Self::Eq15 => 2,
        }
    }

    pub fn default_qubits(self) -> usize {
        match self {
            Self::Model3 => 3,
            _ => 2,
        }
    }

    fn default_duration(self) -> f64 {
        match self {
            Self::Eq15 => 4.0,
            _ => 20.0,
        }
    }
}

impl fmt::Display for BuiltinModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for BuiltinModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.strip_prefix("builtin:").unwrap_or(s);
        match s.to_ascii_lowercase().as_str() {
            "1" | "model1" => Ok(Self::Model1),
            "2" | "model2" => Ok(Self::Model2),
            "3" | "model3" => Ok(Self::Model3),
            "4" | "model4" => Ok(Self::Model4),
            "eq13" => Ok(Self::Eq13),
            "eq15" => Ok(Self::Eq15),
            other => Err(Error::UnsupportedModel(format!("unknown builtin model {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InitialChoice {
    /// The state each reference model is defined with.
    Reference,
    /// `|0…0⟩`.
    Zero,
    Custom(StateVector),
}

#[derive(Debug, Clone)]
pub struct BuiltinOptions {
    pub initial: InitialChoice,
    /// Pulse duration; `None` picks the model's reference value.
    pub duration: Option<f64>,
    pub dt: f64,
    /// Eq15 only: freeze both encoding pulses at 1.
    pub freeze_encoding: bool,
}

impl Default for BuiltinOptions {
    fn default() -> Self {
        Self { initial: InitialChoice::Reference, duration: None, dt: DEFAULT_DT, freeze_encoding: false }
    }
}

pub fn builtin_model(id: BuiltinModel, n: usize) -> Result<ModelSpec> {
    builtin_model_with(id, n, &BuiltinOptions::default())
}

fn pauli(n: usize, s: &str) -> Result<HermitianOperator> {
    super::build_pauli(n, s)
}

fn site(n: usize, k: usize, l: PauliLetter) -> Result<HermitianOperator> {
    HermitianOperator::from_paulis(vec![site_pauli(n, k, l)])
}

fn site_sum(n: usize, l: PauliLetter, coeff: f64) -> Result<HermitianOperator> {
    HermitianOperator::from_paulis((0..n).map(|k| site_pauli(n, k, l).with_coeff(coeff)).collect())
}

/// `σx^(i) σz^(i+1) … σz^(j−1) σy^(j)` on 0-based sites `i < j`.
pub(crate) fn jordan_wigner_xy(n: usize, i: usize, j: usize) -> PauliString {
    let mut letters = vec![PauliLetter::I; n];
    letters[i] = PauliLetter::X;
    for l in letters.iter_mut().take(j).skip(i + 1) {
        *l = PauliLetter::Z;
    }
    letters[j] = PauliLetter::Y;
    PauliString { letters, coeff: 1.0 }
}

pub fn builtin_model_with(id: BuiltinModel, n: usize, opts: &BuiltinOptions) -> Result<ModelSpec> {
    if n < id.min_qubits() || n > crate::linop::DEFAULT_MAX_QUBITS {
        return Err(Error::UnsupportedModel(format!("model {id} does not support n = {n}")));
    }
    if matches!(id, BuiltinModel::Eq13 | BuiltinModel::Eq15) && n != 2 {
        return Err(Error::UnsupportedModel(format!("model {id} is a two-qubit model, got n = {n}")));
    }
    if !(opts.dt > 0.0) {
        return Err(Error::InvalidConfig(format!("sampling period must be positive, got {}", opts.dt)));
    }
    let duration = opts.duration.unwrap_or_else(|| id.default_duration());
    let segments = (duration / opts.dt).round() as usize;

    let s = std::f64::consts::FRAC_1_SQRT_2;
    let c = |re: f64, im: f64| C64::new(re, im);
    let (m, terms, observable, reference_state) = match id {
        BuiltinModel::Model1 => {
            let spin = spin_operators(n)?;
            let d = (1usize << n) as f64;
            let terms = vec![
                HamiltonianTerm::encoding(0, 0, spin.jz.clone()),
                HamiltonianTerm::control(1, spin.jx.clone()),
                HamiltonianTerm::control(2, spin.jy.clone()),
            ];
            (1, terms, spin.jz.scaled(2.0 / (d - 1.0)), zero_state(n))
        }
        BuiltinModel::Model2 | BuiltinModel::Model4 => {
            let mut terms: Vec<HamiltonianTerm> = (0..n)
                .map(|k| site(n, k, PauliLetter::Z).map(|op| HamiltonianTerm::encoding(0, 0, op)))
                .collect::<Result<_>>()?;
            for k in 0..n {
                terms.push(HamiltonianTerm::control(1 + 2 * k, site(n, k, PauliLetter::X)?));
                terms.push(HamiltonianTerm::control(2 + 2 * k, site(n, k, PauliLetter::Y)?));
            }
            let observable = if id == BuiltinModel::Model2 {
                site_sum(n, PauliLetter::Z, 1.0 / n as f64)?
            } else {
                for k in 0..n {
                    let mut letters = vec![PauliLetter::I; n];
                    letters[k] = PauliLetter::Z;
                    letters[(k + 1) % n] = PauliLetter::Z;
                    let op = HermitianOperator::from_paulis(vec![PauliString { letters, coeff: 1.0 }])?;
                    terms.push(HamiltonianTerm::control(1 + 2 * n + k, op));
                }
                site(n, 0, PauliLetter::Z)?
            };
            (1, terms, observable, zero_state(n))
        }
        BuiltinModel::Model3 => {
            let mut terms =
                vec![HamiltonianTerm::encoding(0, 0, HermitianOperator::from_paulis(vec![jordan_wigner_xy(n, 0, 1)])?)];
            for k in 0..n - 1 {
                terms.push(HamiltonianTerm::control(
                    1 + k,
                    HermitianOperator::from_paulis(vec![jordan_wigner_xy(n, k, k + 1)])?,
                ));
            }
            let observable = HermitianOperator::from_paulis(vec![jordan_wigner_xy(n, n - 2, n - 1)])?;
            let mut qubits = vec![[c(1.0, 0.0), c(0.0, 0.0)]; n - 2];
            qubits.push([c(s, 0.0), c(s, 0.0)]);
            qubits.push([c(s, 0.0), c(0.0, s)]);
            (1, terms, observable, product_state(&qubits)?)
        }
        BuiltinModel::Eq13 => {
            let terms = vec![
                HamiltonianTerm::encoding(0, 0, pauli(2, "ZZ")?),
                HamiltonianTerm::control(1, pauli(2, "XI")?),
                HamiltonianTerm::control(2, pauli(2, "IX")?),
            ];
            let a = 2.0 / 5f64.sqrt();
            let b = 1.0 / 5f64.sqrt();
            let state = product_state(&[[c(a, 0.0), c(b, 0.0)], [c(1.0, 0.0), c(0.0, 0.0)]])?;
            (1, terms, pauli(2, "ZZ")?, state)
        }
        BuiltinModel::Eq15 => {
            let terms = vec![
                HamiltonianTerm::encoding(0, 0, pauli(2, "YY")?),
                HamiltonianTerm::encoding(1, 1, pauli(2, "ZZ")?),
                HamiltonianTerm::control(2, pauli(2, "XI")?),
                HamiltonianTerm::control(3, pauli(2, "IX")?),
            ];
            let observable =
                HermitianOperator::from_paulis(vec![PauliString::parse(2, "ZI")?, PauliString::parse(2, "IZ")?])?;
            let state = product_state(&[[c(1.0, 0.0), c(0.0, 0.0)], [c(s, 0.0), c(s, 0.0)]])?;
            (2, terms, observable, state)
        }
    };

    let initial_state = match &opts.initial {
        InitialChoice::Reference => reference_state,
        InitialChoice::Zero => zero_state(n),
        InitialChoice::Custom(psi) => super::normalized(psi.clone())?,
    };

    let channels = terms.iter().map(|t| t.pulse + 1).max().unwrap_or(0);
    let mut schedule = PulseSchedule::new(duration, segments, channels);
    match id {
        BuiltinModel::Eq15 => {
            if opts.freeze_encoding {
                schedule.set_channel(0, 1.0, false);
                schedule.set_channel(1, 1.0, false);
            }
        }
        // Single-input models carry the bare input on their encoding channel.
        _ => schedule.set_channel(0, 1.0, false),
    }

    let mut spec = ModelSpec::new(n, m, terms, initial_state, observable, schedule)?;
    spec.name = Some(format!("builtin:{id}"));
    Ok(spec)
}
