//! JSON model files.
//!
//! ```json
//! {
//!   "n": 2, "m": 1,
//!   "terms": [
//!     {"kind": "encoding", "input": 1, "pulse": 1, "pauli": [{"string": "ZZ", "coeff": 1.0}]},
//!     {"kind": "control", "pulse": 2, "pauli": "XI"},
//!     {"kind": "control", "pulse": 3, "dense": [[[0,0],[1,0]], [[1,0],[0,0]]]}
//!   ],
//!   "initial_state": [[1,0],[0,0],[0,0],[0,0]],
//!   "observable": {"pauli": "ZZ"},
//!   "schedule": {"T": 20.0, "K": 200, "amplitudes": [[...]], "tunable": [[...]]},
//!   "scale": 1.0
//! }
//! ```
//!
//! Input and pulse indices are 1-based. Complex numbers are `[re, im]`.
//! Floats are written with 17 significant digits so a save/load cycle is
//! bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize, Serializer};
use serde_json::value::RawValue;

use super::{HamiltonianTerm, HermitianOperator, ModelSpec, PauliString, PulseSchedule, TermKind};
use crate::error::{Error, Result};
use crate::linop::{CMatrix, StateVector, C64};

/// Scientific notation with 17 significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// `f64` that serializes as a 17-significant-digit JSON number.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(transparent)]
pub struct F17(pub f64);

impl Serialize for F17 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return Err(serde::ser::Error::custom("non-finite float"));
        }
        let raw = RawValue::from_string(fmt17(self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(s)
    }
}

type Complex17 = [F17; 2];

fn c17(z: C64) -> Complex17 {
    [F17(z.re), F17(z.im)]
}

#[derive(Debug, Serialize, Deserialize)]
struct PauliTermFile {
    string: String,
    #[serde(default = "one")]
    coeff: F17,
}

fn one() -> F17 {
    F17(1.0)
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum PauliFile {
    Single(String),
    Sum(Vec<PauliTermFile>),
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum OperatorFile {
    Pauli { pauli: PauliFile },
    Dense { dense: Vec<Vec<Complex17>> },
}

#[derive(Debug, Serialize, Deserialize)]
struct TermFile {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input: Option<usize>,
    pulse: usize,
    #[serde(flatten)]
    operator: OperatorFile,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScheduleFile {
    #[serde(rename = "T")]
    duration: F17,
    #[serde(rename = "K")]
    segments: usize,
    amplitudes: Vec<Vec<F17>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tunable: Option<Vec<Vec<bool>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    bounds: Option<Vec<Option<[F17; 2]>>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    n: usize,
    m: usize,
    terms: Vec<TermFile>,
    initial_state: Vec<Complex17>,
    observable: OperatorFile,
    schedule: ScheduleFile,
    #[serde(default = "one")]
    scale: F17,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    domain: Option<Vec<[F17; 2]>>,
}

fn operator_to_file(op: &HermitianOperator) -> OperatorFile {
    match op.paulis() {
        Some(ps) => OperatorFile::Pauli {
            pauli: PauliFile::Sum(
                ps.iter().map(|p| PauliTermFile { string: p.label(), coeff: F17(p.coeff) }).collect(),
            ),
        },
        None => {
            let m = op.matrix();
            OperatorFile::Dense {
                dense: (0..m.nrows()).map(|r| (0..m.ncols()).map(|c| c17(m[(r, c)])).collect()).collect(),
            }
        }
    }
}

fn operator_from_file(n: usize, f: &OperatorFile) -> Result<HermitianOperator> {
    match f {
        OperatorFile::Pauli { pauli: PauliFile::Single(s) } => super::build_pauli(n, s),
        OperatorFile::Pauli { pauli: PauliFile::Sum(terms) } => HermitianOperator::from_paulis(
            terms
                .iter()
                .map(|t| PauliString::parse(n, &t.string).map(|p| p.with_coeff(t.coeff.0)))
                .collect::<Result<_>>()?,
        ),
        OperatorFile::Dense { dense } => {
            let d = dense.len();
            if dense.iter().any(|row| row.len() != d) {
                return Err(Error::InvalidModel("dense operator must be square".into()));
            }
            let m = CMatrix::from_fn(d, d, |r, c| C64::new(dense[r][c][0].0, dense[r][c][1].0));
            HermitianOperator::from_dense(m)
        }
    }
}

fn to_file(spec: &ModelSpec) -> ModelFile {
    let terms = spec
        .terms
        .iter()
        .map(|t| {
            let (kind, input) = match t.kind {
                TermKind::Encoding { input } => ("encoding", Some(input + 1)),
                TermKind::Control => ("control", None),
            };
            TermFile { kind: kind.into(), input, pulse: t.pulse + 1, operator: operator_to_file(&t.operator) }
        })
        .collect();
    let s = &spec.schedule;
    ModelFile {
        name: spec.name.clone(),
        n: spec.n,
        m: spec.m,
        terms,
        initial_state: spec.initial_state.iter().map(|z| c17(*z)).collect(),
        observable: operator_to_file(&spec.observable),
        schedule: ScheduleFile {
            duration: F17(s.duration),
            segments: s.segments,
            amplitudes: s.amplitudes.iter().map(|row| row.iter().map(|a| F17(*a)).collect()).collect(),
            tunable: Some(s.tunable.clone()),
            bounds: if s.bounds.iter().all(Option::is_none) {
                None
            } else {
                Some(s.bounds.iter().map(|b| b.map(|(lo, hi)| [F17(lo), F17(hi)])).collect())
            },
        },
        scale: F17(spec.scale),
        domain: Some(spec.domain.iter().map(|(lo, hi)| [F17(*lo), F17(*hi)]).collect()),
    }
}

fn from_file(f: ModelFile) -> Result<ModelSpec> {
    let terms = f
        .terms
        .iter()
        .map(|t| {
            let pulse =
                t.pulse.checked_sub(1).ok_or_else(|| Error::InvalidModel("pulse indices are 1-based".into()))?;
            let kind = match (t.kind.as_str(), t.input) {
                ("encoding", Some(i)) if i >= 1 => TermKind::Encoding { input: i - 1 },
                ("encoding", _) => return Err(Error::InvalidModel("encoding terms need a 1-based input index".into())),
                ("control", None) => TermKind::Control,
                ("control", Some(_)) => return Err(Error::InvalidModel("control terms take no input".into())),
                (other, _) => return Err(Error::InvalidModel(format!("unknown term kind {other:?}"))),
            };
            Ok(HamiltonianTerm { kind, pulse, operator: operator_from_file(f.n, &t.operator)? })
        })
        .collect::<Result<Vec<_>>>()?;
    let channels = f.schedule.amplitudes.len();
    let segments = f.schedule.segments;
    let schedule = PulseSchedule {
        duration: f.schedule.duration.0,
        segments,
        amplitudes: f.schedule.amplitudes.iter().map(|r| r.iter().map(|a| a.0).collect()).collect(),
        tunable: f.schedule.tunable.unwrap_or_else(|| vec![vec![true; segments]; channels]),
        bounds: f
            .schedule
            .bounds
            .map(|bs| bs.into_iter().map(|b| b.map(|[lo, hi]| (lo.0, hi.0))).collect())
            .unwrap_or_else(|| vec![None; channels]),
    };
    let initial_state =
        StateVector::from_iterator(f.initial_state.len(), f.initial_state.iter().map(|[re, im]| C64::new(re.0, im.0)));
    let spec = ModelSpec {
        name: f.name,
        n: f.n,
        m: f.m,
        terms,
        initial_state,
        observable: operator_from_file(f.n, &f.observable)?,
        schedule,
        scale: f.scale.0,
        domain: f
            .domain
            .map(|d| d.into_iter().map(|[lo, hi]| (lo.0, hi.0)).collect())
            .unwrap_or_else(|| vec![(-1.0, 1.0); f.m]),
    };
    spec.validate()?;
    Ok(spec)
}

pub fn model_to_json(spec: &ModelSpec) -> Result<String> {
    Ok(serde_json::to_string_pretty(&to_file(spec))?)
}

pub fn model_from_json(text: &str) -> Result<ModelSpec> {
    from_file(serde_json::from_str(text)?)
}

pub fn save_model(spec: &ModelSpec, path: &Path) -> Result<()> {
    fs::write(path, model_to_json(spec)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ModelSpec> {
    model_from_json(&fs::read_to_string(path)?)
}
