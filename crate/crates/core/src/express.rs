//! Necessary-condition check for universal approximation.
//!
//! The coefficient of `x^k` in the output is a combination of
//! `⟨ψ0| L_{w} M |ψ0⟩` over words `w` with `k_i` letters on input `i`. Those
//! operators span `S_k`, built recursively as `S_{k+e_i} = 𝔐(L_i S_k)` from
//! `S_0 = 𝔐(M)`, where `𝔐` closes a span under the control Liouvillians. A
//! monomial can only appear if some element of `S_k` has a nonzero
//! expectation in the initial state.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linop::{self, CMatrix, Field, OrthoBasis, C64};
use crate::model::{ModelSpec, F17};
use crate::sim::{monomial_coefficient_with, DysonConfig};

pub const DEFAULT_CUTOFF: usize = 8;
pub const DEFAULT_WITNESS_TOL: f64 = 1e-8;
pub const DEFAULT_SPAN_TOL: f64 = 1e-10;

/// HS-orthonormal basis of a real span of Hermitian operators.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSpan {
    pub basis: Vec<CMatrix>,
    pub degree: Vec<usize>,
}

impl OperatorSpan {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    fn ortho(&self) -> OrthoBasis {
        OrthoBasis::from_orthonormal(Field::Real, self.basis.clone())
    }

    /// Whether `m` lies in the span within `tol` relative to its norm.
    pub fn contains(&self, m: &CMatrix, tol: f64) -> bool {
        self.ortho().contains(m, tol)
    }

    /// Same subspace: equal dimension and each basis inside the other span.
    pub fn same_span(&self, other: &OperatorSpan, tol: f64) -> bool {
        self.dim() == other.dim()
            && self.basis.iter().all(|b| other.contains(b, tol))
            && other.basis.iter().all(|b| self.contains(b, tol))
    }

    /// `max_j |⟨ψ|B_j|ψ⟩|`.
    pub fn witness(&self, psi: &crate::linop::StateVector) -> f64 {
        self.basis.iter().map(|b| linop::expectation(psi, b).norm()).fold(0.0, f64::max)
    }
}

/// `L X = −i[H, X]`.
fn liouvillian(h: &CMatrix, x: &CMatrix) -> CMatrix {
    let c = (h * x - x * h) * C64::new(0.0, -1.0);
    // Re-Hermitize so roundoff does not accumulate along long chains.
    (&c + c.adjoint()) * C64::new(0.5, 0.0)
}

/// Smallest span containing `seed` and closed under every `X ↦ −i[H, X]`
/// with `H` in `controls`.
pub fn submodule(seed: &[CMatrix], controls: &[CMatrix], tol: f64, max_dim: usize) -> Result<OperatorSpan> {
    let mut span = OrthoBasis::new(Field::Real);
    let insert = |span: &mut OrthoBasis, c: &CMatrix| -> Result<()> {
        let norm = linop::hs_norm(c);
        if norm > tol && span.insert(c, tol * norm) && span.len() > max_dim {
            return Err(Error::MaxDimExceeded { max_dim });
        }
        Ok(())
    };
    for s in seed {
        insert(&mut span, s)?;
    }
    let mut i = 0;
    while i < span.len() {
        let b = span.elements()[i].clone();
        for h in controls {
            insert(&mut span, &liouvillian(h, &b))?;
        }
        i += 1;
    }
    Ok(OperatorSpan { basis: span.into_elements(), degree: Vec::new() })
}

/// How the per-monomial condition is read.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
pub enum Reading {
    /// Some element of `S_k` has a nonzero expectation.
    #[default]
    Existence,
    /// Every word operator of the monomial (up to one extra control letter)
    /// has a nonzero expectation.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpressConfig {
    pub cutoff: usize,
    pub tol: f64,
    pub span_tol: f64,
    pub max_dim: Option<usize>,
    pub reading: Reading,
    pub dyson_crosscheck: bool,
    pub seed: u64,
}

impl Default for ExpressConfig {
    fn default() -> Self {
        Self {
            cutoff: DEFAULT_CUTOFF,
            tol: DEFAULT_WITNESS_TOL,
            span_tol: DEFAULT_SPAN_TOL,
            max_dim: None,
            reading: Reading::Existence,
            dyson_crosscheck: false,
            seed: 0,
        }
    }
}

/// Multi-indices of `m` inputs with total degree `d`, lexicographically
/// descending in the first component.
pub fn multi_indices(m: usize, d: usize) -> Vec<Vec<usize>> {
    if m == 0 {
        return if d == 0 { vec![Vec::new()] } else { Vec::new() };
    }
    if m == 1 {
        return vec![vec![d]];
    }
    let mut out = Vec::new();
    for first in (0..=d).rev() {
        for mut rest in multi_indices(m - 1, d - first) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

struct Liouvillians {
    controls: Vec<CMatrix>,
    /// Operators of the channels encoding each input.
    encodings: Vec<Vec<CMatrix>>,
}

impl Liouvillians {
    fn new(spec: &ModelSpec) -> Self {
        let ops = spec.channel_operators();
        let inputs = spec.channel_inputs();
        let mut encodings = vec![Vec::new(); spec.m];
        let mut controls = Vec::new();
        for (op, input) in ops.into_iter().zip(inputs) {
            match input {
                Some(i) => encodings[i].push(op),
                None => controls.push(op),
            }
        }
        Self { controls, encodings }
    }
}

fn predecessor(k: &[usize], i: usize) -> Vec<usize> {
    let mut p = k.to_vec();
    p[i] -= 1;
    p
}

/// `S_k` for every multi-index with total degree ≤ `cutoff`. Each set is the
/// closure of `L_i S_{k−e_i}` over every `i` with `k_i > 0`.
pub fn s_sets(spec: &ModelSpec, cutoff: usize) -> Result<BTreeMap<Vec<usize>, OperatorSpan>> {
    s_sets_with(spec, cutoff, DEFAULT_SPAN_TOL, default_max_dim(spec))
}

fn default_max_dim(spec: &ModelSpec) -> usize {
    spec.dim() * spec.dim()
}

pub fn s_sets_with(
    spec: &ModelSpec,
    cutoff: usize,
    tol: f64,
    max_dim: usize,
) -> Result<BTreeMap<Vec<usize>, OperatorSpan>> {
    let ls = Liouvillians::new(spec);
    let mut memo: BTreeMap<Vec<usize>, OperatorSpan> = BTreeMap::new();
    let mut base = submodule(&[spec.observable.matrix().clone()], &ls.controls, tol, max_dim)?;
    base.degree = vec![0; spec.m];
    memo.insert(base.degree.clone(), base);
    for d in 1..=cutoff {
        let shell: Vec<Result<OperatorSpan>> = multi_indices(spec.m, d)
            .into_par_iter()
            .map(|k| {
                let mut seed = Vec::new();
                for i in (0..spec.m).filter(|&i| k[i] > 0) {
                    for b in &memo[&predecessor(&k, i)].basis {
                        for h in &ls.encodings[i] {
                            seed.push(liouvillian(h, b));
                        }
                    }
                }
                let mut span = submodule(&seed, &ls.controls, tol, max_dim)?;
                span.degree = k;
                Ok(span)
            })
            .collect();
        for span in shell {
            let span = span?;
            memo.insert(span.degree.clone(), span);
        }
    }
    Ok(memo)
}

/// Spans of `S_k` reached through each single increment order
/// `k−e_i → k`, for comparing recursion paths.
pub fn s_set_paths(spec: &ModelSpec, k: &[usize]) -> Result<Vec<(usize, OperatorSpan)>> {
    let ls = Liouvillians::new(spec);
    let total: usize = k.iter().sum();
    let sets = s_sets(spec, total.saturating_sub(1))?;
    let mut out = Vec::new();
    for i in (0..spec.m).filter(|&i| k[i] > 0) {
        let prev = &sets[&predecessor(k, i)];
        let seed: Vec<CMatrix> =
            prev.basis.iter().flat_map(|b| ls.encodings[i].iter().map(move |h| liouvillian(h, b))).collect();
        let mut span = submodule(&seed, &ls.controls, DEFAULT_SPAN_TOL, default_max_dim(spec))?;
        span.degree = k.to_vec();
        out.push((i, span));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpressRow {
    pub degree: Vec<usize>,
    pub dim: usize,
    pub witness: F17,
    pub pass: bool,
    /// Largest `|C_k|` over random short schedules, when cross-checked.
    pub dyson: Option<F17>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpressivityReport {
    pub cutoff: usize,
    pub tol: F17,
    pub reading: Reading,
    pub rows: Vec<ExpressRow>,
    pub pass: bool,
}

impl ExpressivityReport {
    pub fn row(&self, degree: &[usize]) -> Option<&ExpressRow> {
        self.rows.iter().find(|r| r.degree == degree)
    }

    pub fn failing(&self) -> Vec<&ExpressRow> {
        self.rows.iter().filter(|r| !r.pass).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// One row per multi-index.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<16} {:>5} {:>24} {:>24}  verdict", "degree", "dim", "witness", "dyson");
        for r in &self.rows {
            let deg = format!("({})", r.degree.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(","));
            let dyson = r.dyson.map_or("-".to_string(), |v| crate::model::fmt17(v.0));
            let _ = writeln!(
                out,
                "{deg:<16} {:>5} {:>24} {dyson:>24}  {}",
                r.dim,
                crate::model::fmt17(r.witness.0),
                if r.pass { "pass" } else { "FAIL" }
            );
        }
        let _ = writeln!(out, "overall: {}", if self.pass { "pass" } else { "FAIL" });
        out
    }
}

/// Smallest `|⟨ψ0|L_w M|ψ0⟩|` over words of the monomial `k` with at most
/// one extra control letter.
fn literal_witness(spec: &ModelSpec, ls: &Liouvillians, k: &[usize]) -> f64 {
    let psi = &spec.initial_state;
    let mut letters: Vec<(Option<usize>, &CMatrix)> = Vec::new();
    for (i, ops) in ls.encodings.iter().enumerate() {
        letters.extend(ops.iter().map(|h| (Some(i), h)));
    }
    letters.extend(ls.controls.iter().map(|h| (None, h)));
    let total: usize = k.iter().sum();
    let mut worst = f64::INFINITY;
    let mut stack: Vec<(CMatrix, Vec<usize>, usize)> = vec![(spec.observable.matrix().clone(), vec![0; spec.m], 0)];
    while let Some((op, deg, controls)) = stack.pop() {
        if deg == k {
            worst = worst.min(linop::expectation(psi, &op).norm());
        }
        let used: usize = deg.iter().sum::<usize>() + controls;
        if used > total {
            continue;
        }
        for (input, h) in &letters {
            let mut next = deg.clone();
            let mut extra = controls;
            match input {
                Some(i) if next[*i] < k[*i] => next[*i] += 1,
                Some(_) => continue,
                None if controls == 0 => extra += 1,
                None => continue,
            }
            stack.push((liouvillian(h, &op), next, extra));
        }
    }
    if worst.is_finite() {
        worst
    } else {
        0.0
    }
}

/// Largest `|C_k|` over a few random short schedules.
fn dyson_crosscheck(spec: &ModelSpec, k: &[usize], seed: u64) -> Result<f64> {
    let dyson = DysonConfig::default();
    let total: usize = k.iter().sum();
    let max_len = (total + 2).min(dyson.max_order);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..3 {
        let mut short = spec.with_layout(0.5, 5)?;
        for (amps, mask) in short.schedule.amplitudes.iter_mut().zip(&short.schedule.tunable) {
            for (a, &t) in amps.iter_mut().zip(mask) {
                if t {
                    *a = rng.random_range(-1.0..1.0);
                }
            }
        }
        worst = worst.max(monomial_coefficient_with(&short, k, max_len, &dyson)?.abs());
    }
    Ok(worst)
}

pub fn check(spec: &ModelSpec, cutoff: usize, tol: f64) -> Result<ExpressivityReport> {
    check_with(spec, &ExpressConfig { cutoff, tol, ..Default::default() })
}

pub fn check_with(spec: &ModelSpec, cfg: &ExpressConfig) -> Result<ExpressivityReport> {
    let max_dim = cfg.max_dim.unwrap_or_else(|| default_max_dim(spec));
    let sets = s_sets_with(spec, cfg.cutoff, cfg.span_tol, max_dim)?;
    let ls = Liouvillians::new(spec);
    let mut rows = Vec::new();
    for d in 0..=cfg.cutoff {
        for k in multi_indices(spec.m, d) {
            let span = &sets[&k];
            let witness = match cfg.reading {
                Reading::Existence => span.witness(&spec.initial_state),
                Reading::Literal => literal_witness(spec, &ls, &k),
            };
            let dyson = if cfg.dyson_crosscheck {
                Some(F17(dyson_crosscheck(spec, &k, cfg.seed.wrapping_add(rows.len() as u64))?))
            } else {
                None
            };
            rows.push(ExpressRow {
                degree: k,
                dim: span.dim(),
                witness: F17(witness),
                pass: witness >= cfg.tol,
                dyson,
            });
        }
    }
    let pass = rows.iter().all(|r| r.pass);
    Ok(ExpressivityReport { cutoff: cfg.cutoff, tol: F17(cfg.tol), reading: cfg.reading, rows, pass })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        build_pauli, builtin_model, builtin_model_with, BuiltinModel, BuiltinOptions, HamiltonianTerm, InitialChoice,
        PulseSchedule,
    };

    fn p(n: usize, s: &str) -> CMatrix {
        build_pauli(n, s).unwrap().matrix().clone()
    }

    fn span_of(ops: &[&str]) -> OperatorSpan {
        let mats: Vec<CMatrix> = ops.iter().map(|s| p(2, s)).collect();
        OperatorSpan { basis: linop::orthonormalize_over(&mats, 1e-10, Field::Real), degree: Vec::new() }
    }

    fn eq13(initial: InitialChoice) -> ModelSpec {
        builtin_model_with(BuiltinModel::Eq13, 2, &BuiltinOptions { initial, ..Default::default() }).unwrap()
    }

    #[test]
    fn no_controls_keeps_seed() {
        let s = submodule(&[p(2, "ZZ")], &[], 1e-10, 16).unwrap();
        assert_eq!(s.dim(), 1);
    }

    #[test]
    fn eq13_base_set() {
        let s = submodule(&[p(2, "ZZ")], &[p(2, "XI"), p(2, "IX")], 1e-10, 16).unwrap();
        assert!(s.same_span(&span_of(&["ZZ", "YZ", "ZY", "YY"]), 1e-9));
    }

    #[test]
    fn eq13_alternating_sets() {
        let sets = s_sets(&eq13(InitialChoice::Reference), 3).unwrap();
        let even = span_of(&["ZZ", "YZ", "ZY", "YY"]);
        let odd = span_of(&["XI", "IX"]);
        assert!(sets[&vec![0]].same_span(&even, 1e-9));
        assert!(sets[&vec![1]].same_span(&odd, 1e-9));
        assert!(sets[&vec![2]].same_span(&even, 1e-9));
        assert!(sets[&vec![3]].same_span(&odd, 1e-9));
    }

    #[test]
    fn eq13_first_set_matches_word_enumeration() {
        // Words with exactly one encoding letter and up to six control letters.
        let spec = eq13(InitialChoice::Reference);
        let s1 = &s_sets(&spec, 1).unwrap()[&vec![1]];
        let zz = p(2, "ZZ");
        let controls = [p(2, "XI"), p(2, "IX")];
        let mut words: Vec<CMatrix> = Vec::new();
        let mut level: Vec<(CMatrix, bool)> = vec![(zz.clone(), false)];
        for _ in 0..7 {
            let mut next = Vec::new();
            for (op, encoded) in &level {
                if !encoded {
                    next.push((liouvillian(&zz, op), true));
                }
                for h in &controls {
                    next.push((liouvillian(h, op), *encoded));
                }
            }
            words.extend(next.iter().filter(|(_, e)| *e).map(|(op, _)| op.clone()));
            level = next;
        }
        for w in &words {
            assert!(s1.contains(w, 1e-8));
        }
        let found = linop::orthonormalize_over(&words, 1e-10, Field::Real);
        assert_eq!(found.len(), s1.dim());
    }

    #[test]
    fn eq15_even_and_odd_sets() {
        let spec = builtin_model(BuiltinModel::Eq15, 2).unwrap();
        let sets = s_sets(&spec, 2).unwrap();
        let even = span_of(&["YI", "IY", "ZI", "IZ"]);
        let odd = span_of(&["XY", "YX", "XZ", "ZX"]);
        for (k, s) in &sets {
            let want = if (k[0] + k[1]) % 2 == 0 { &even } else { &odd };
            assert!(s.same_span(want, 1e-9), "degree {k:?} has dim {}", s.dim());
        }
    }

    #[test]
    fn commuting_pair_gives_empty_first_set() {
        let z = build_pauli(1, "Z").unwrap();
        let spec = ModelSpec::new(
            1,
            1,
            vec![HamiltonianTerm::encoding(0, 0, z.clone())],
            crate::model::zero_state(1),
            z,
            PulseSchedule::new(1.0, 1, 1),
        )
        .unwrap();
        let sets = s_sets(&spec, 1).unwrap();
        assert_eq!(sets[&vec![1]].dim(), 0);
        let report = check(&spec, 1, DEFAULT_WITNESS_TOL).unwrap();
        assert!(!report.row(&[1]).unwrap().pass);
    }

    #[test]
    fn eq13_zero_state_fails_odd_degrees() {
        let report = check(&eq13(InitialChoice::Zero), 5, DEFAULT_WITNESS_TOL).unwrap();
        for r in &report.rows {
            assert_eq!(r.pass, r.degree[0] % 2 == 0, "degree {:?}", r.degree);
        }
        assert!(!report.pass);
    }

    #[test]
    fn eq13_reference_state_passes() {
        let report = check(&eq13(InitialChoice::Reference), 12, DEFAULT_WITNESS_TOL).unwrap();
        assert!(report.pass, "{}", report.to_table());
    }

    #[test]
    fn recursion_is_path_independent() {
        for spec in [builtin_model(BuiltinModel::Eq15, 2).unwrap()] {
            for k in [vec![1, 1], vec![2, 1], vec![1, 2]] {
                let paths = s_set_paths(&spec, &k).unwrap();
                let full = &s_sets(&spec, 3).unwrap()[&k];
                for (_, s) in &paths {
                    assert!(s.same_span(full, 1e-8));
                }
            }
        }
    }

    #[test]
    fn spans_close_under_controls() {
        let spec = builtin_model(BuiltinModel::Model2, 2).unwrap();
        let sets = s_sets(&spec, 3).unwrap();
        let ls = Liouvillians::new(&spec);
        for s in sets.values() {
            assert!(s.dim() <= 16);
            for b in &s.basis {
                for h in &ls.controls {
                    assert!(s.contains(&liouvillian(h, b), 1e-8));
                }
            }
        }
    }

    #[test]
    fn cutoff_zero_has_single_row() {
        let report = check(&eq13(InitialChoice::Zero), 0, DEFAULT_WITNESS_TOL).unwrap();
        assert_eq!(report.rows.len(), 1);
        assert!(report.pass);
    }

    #[test]
    fn dyson_column_agrees_with_failures() {
        let cfg = ExpressConfig { cutoff: 3, dyson_crosscheck: true, seed: 5, ..Default::default() };
        let report = check_with(&eq13(InitialChoice::Zero), &cfg).unwrap();
        for r in &report.rows {
            if !r.pass {
                assert!(r.dyson.unwrap().0 <= 1e-8);
            }
        }
        assert!(report.to_table().contains("FAIL"));
    }

    #[test]
    fn literal_reading_is_stricter() {
        let cfg = ExpressConfig { cutoff: 2, reading: Reading::Literal, ..Default::default() };
        let literal = check_with(&eq13(InitialChoice::Reference), &cfg).unwrap();
        // L_1 M = 0 for M = ZZ, so the bare word already vanishes.
        assert!(!literal.row(&[1]).unwrap().pass);
    }

    #[test]
    fn multi_index_shells() {
        assert_eq!(multi_indices(2, 2), vec![vec![2, 0], vec![1, 1], vec![0, 2]]);
        assert_eq!(multi_indices(3, 1).len(), 3);
        assert_eq!(multi_indices(1, 4), vec![vec![4]]);
    }
}
