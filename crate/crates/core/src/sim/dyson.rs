//! Truncated Dyson series of the evolved density matrix, regrouped by input
//! monomials.
//!
//! For a word `w = (j1, …, jn)` the coefficient is the chronological integral
//! `c_w = ∫ θ_{j1}(t1) ∫ θ_{j2}(t2) ⋯ ∫ θ_{jn}(tn)` with `T ≥ t1 ≥ … ≥ tn ≥ 0`,
//! and the operator is `L_{j1}(L_{j2}(⋯ L_{jn}(ρ0)))`, `L_j X = −i[H_j, X]`.
//! The first letter is the latest in time and is applied last.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::linop::{self, CMatrix, C64};
use crate::model::{HamiltonianTerm, HermitianOperator, ModelSpec, PauliLetter, PulseSchedule};

/// Sequence of 0-based channel indices; displayed 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Word {
    pub letters: Vec<usize>,
}

impl Word {
    pub fn new(letters: Vec<usize>) -> Self {
        Self { letters }
    }

    pub fn empty() -> Self {
        Self { letters: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.letters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.letters.is_empty()
    }

    pub fn reversed(&self) -> Self {
        Self { letters: self.letters.iter().rev().copied().collect() }
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.letters.iter().map(|l| (l + 1).to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// Continuous piecewise polynomial on a segment grid. Each interval stores
/// coefficients in the local variable `τ = t − t_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewisePoly {
    pub breakpoints: Vec<f64>,
    pub coeffs: Vec<Vec<f64>>,
}

impl PiecewisePoly {
    pub fn constant(breakpoints: Vec<f64>, value: f64) -> Self {
        let k = breakpoints.len().saturating_sub(1);
        Self { breakpoints, coeffs: vec![vec![value]; k] }
    }

    /// Uniform grid of a schedule.
    pub fn grid(schedule: &PulseSchedule) -> Vec<f64> {
        let dt = schedule.dt();
        (0..=schedule.segments).map(|k| k as f64 * dt).collect()
    }

    pub fn degree(&self) -> usize {
        self.coeffs.iter().map(|c| c.len().saturating_sub(1)).max().unwrap_or(0)
    }

    fn eval_local(c: &[f64], tau: f64) -> f64 {
        c.iter().rev().fold(0.0, |acc, &a| acc * tau + a)
    }

    pub fn eval(&self, t: f64) -> f64 {
        if self.coeffs.is_empty() {
            return 0.0;
        }
        let k = self.breakpoints[1..].partition_point(|&b| b < t).min(self.coeffs.len() - 1);
        Self::eval_local(&self.coeffs[k], t - self.breakpoints[k])
    }

    /// Value at the last breakpoint.
    pub fn end_value(&self) -> f64 {
        match self.coeffs.last() {
            Some(c) => {
                let k = self.coeffs.len() - 1;
                Self::eval_local(c, self.breakpoints[k + 1] - self.breakpoints[k])
            }
            None => 0.0,
        }
    }

    /// `J(t) = ∫_0^t a(s) p(s) ds` for the piecewise-constant `a`.
    pub fn integrate_against(&self, amplitudes: &[f64]) -> Self {
        let mut running = 0.0;
        let mut coeffs = Vec::with_capacity(self.coeffs.len());
        for (k, c) in self.coeffs.iter().enumerate() {
            let a = amplitudes[k];
            let mut out = Vec::with_capacity(c.len() + 1);
            out.push(running);
            out.extend(c.iter().enumerate().map(|(d, &v)| a * v / (d + 1) as f64));
            running = Self::eval_local(&out, self.breakpoints[k + 1] - self.breakpoints[k]);
            coeffs.push(out);
        }
        Self { breakpoints: self.breakpoints.clone(), coeffs }
    }
}

/// Chronological integral of a word against a schedule, evaluated at `T`.
pub fn iterated_integral(schedule: &PulseSchedule, word: &Word) -> Result<f64> {
    let channels = schedule.channels();
    if let Some(&bad) = word.letters.iter().find(|&&l| l >= channels) {
        return Err(Error::IndexOutOfRange { what: "word letter", index: bad, limit: channels });
    }
    if schedule.segments == 0 {
        return Ok(if word.is_empty() { 1.0 } else { 0.0 });
    }
    let mut poly = PiecewisePoly::constant(PiecewisePoly::grid(schedule), 1.0);
    for &l in word.letters.iter().rev() {
        poly = poly.integrate_against(&schedule.amplitudes[l]);
    }
    Ok(poly.end_value())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DysonConfig {
    pub max_order: usize,
    pub word_cap: u128,
}

impl Default for DysonConfig {
    fn default() -> Self {
        Self { max_order: 8, word_cap: 1_000_000 }
    }
}

struct Walker<'a> {
    ops: Vec<CMatrix>,
    inputs: Vec<Option<usize>>,
    schedule: &'a PulseSchedule,
    live: Vec<bool>,
    max_len: usize,
    /// Exact degree target; words that cannot reach it are pruned.
    target: Option<Vec<usize>>,
}

impl Walker<'_> {
    fn remaining_needed(&self, deg: &[usize]) -> usize {
        self.target.as_ref().map_or(0, |t| t.iter().zip(deg).map(|(t, d)| t - d).sum())
    }

    fn descend(
        &self,
        op: &CMatrix,
        poly: &PiecewisePoly,
        deg: &mut Vec<usize>,
        depth: usize,
        visit: &mut dyn FnMut(&[usize], f64, &CMatrix),
    ) {
        visit(deg, poly.end_value(), op);
        if depth == self.max_len {
            return;
        }
        for (j, h) in self.ops.iter().enumerate() {
            if !self.live[j] {
                continue;
            }
            let input = self.inputs[j];
            if let (Some(t), Some(i)) = (&self.target, input) {
                if deg[i] >= t[i] {
                    continue;
                }
            }
            let needed = self.remaining_needed(deg).saturating_sub(usize::from(input.is_some()));
            if needed > self.max_len - depth - 1 {
                continue;
            }
            let child = (h * op - op * h) * C64::new(0.0, -1.0);
            let child_poly = poly.integrate_against(&self.schedule.amplitudes[j]);
            if let Some(i) = input {
                deg[i] += 1;
            }
            self.descend(&child, &child_poly, deg, depth + 1, visit);
            if let Some(i) = input {
                deg[i] -= 1;
            }
        }
    }
}

fn walker<'a>(spec: &'a ModelSpec, max_len: usize, target: Option<Vec<usize>>) -> Walker<'a> {
    let schedule = &spec.schedule;
    Walker {
        ops: spec.channel_operators(),
        inputs: spec.channel_inputs(),
        live: schedule.amplitudes.iter().map(|a| a.iter().any(|v| *v != 0.0)).collect(),
        schedule,
        max_len,
        target,
    }
}

fn check_total_words(channels: usize, order: usize, cap: u128) -> Result<()> {
    let mut total: u128 = 0;
    let mut level: u128 = 1;
    for _ in 0..=order {
        total = total.saturating_add(level);
        level = level.saturating_mul(channels as u128);
    }
    if total > cap {
        return Err(Error::WordOverflow { needed: total, cap });
    }
    Ok(())
}

/// Number of words of length ≤ `max_len` with exactly `degrees[i]` letters
/// on channels encoding input `i`.
fn count_degree_words(spec: &ModelSpec, degrees: &[usize], max_len: usize) -> u128 {
    let inputs = spec.channel_inputs();
    let controls = inputs.iter().filter(|i| i.is_none()).count() as u128;
    let per_input: Vec<u128> = (0..spec.m).map(|i| inputs.iter().filter(|c| **c == Some(i)).count() as u128).collect();
    let base: usize = degrees.iter().sum();
    let mut total: u128 = 0;
    for extra in 0..=max_len.saturating_sub(base) {
        let len = base + extra;
        // Multinomial len! / (Π k_i! · extra!) built as a product of binomials.
        let mut count: u128 = 1;
        let mut placed = 0usize;
        for (&k, &e) in degrees.iter().zip(&per_input) {
            placed += k;
            count = count.saturating_mul(binomial(placed, k)).saturating_mul(e.saturating_pow(k as u32));
        }
        count = count.saturating_mul(binomial(len, extra)).saturating_mul(controls.saturating_pow(extra as u32));
        total = total.saturating_add(count);
    }
    total
}

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

/// Input-independent Dyson terms grouped by the degree vector of their
/// monomial, summed over all words up to length `order`.
pub fn dyson_terms_by_degree(
    spec: &ModelSpec,
    order: usize,
    cfg: &DysonConfig,
) -> Result<BTreeMap<Vec<usize>, CMatrix>> {
    if order > cfg.max_order {
        return Err(Error::OrderTooHigh { order, max: cfg.max_order });
    }
    check_total_words(spec.channel_count(), order, cfg.word_cap)?;
    let rho0 = linop::density(&spec.initial_state);
    let mut terms: BTreeMap<Vec<usize>, CMatrix> = BTreeMap::new();
    if spec.schedule.segments == 0 {
        terms.insert(vec![0; spec.m], rho0);
        return Ok(terms);
    }
    let w = walker(spec, order, None);
    let poly = PiecewisePoly::constant(PiecewisePoly::grid(&spec.schedule), 1.0);
    let mut deg = vec![0; spec.m];
    let mut visit = |deg: &[usize], c: f64, op: &CMatrix| {
        if c == 0.0 {
            return;
        }
        let slot = terms.entry(deg.to_vec()).or_insert_with(|| CMatrix::zeros(op.nrows(), op.ncols()));
        *slot += op * C64::new(c, 0.0);
    };
    w.descend(&rho0, &poly, &mut deg, 0, &mut visit);
    Ok(terms)
}

pub fn dyson_truncated(spec: &ModelSpec, x: &[f64], order: usize) -> Result<CMatrix> {
    dyson_truncated_with(spec, x, order, &DysonConfig::default())
}

/// `ρ(0) + Σ_{|w| ≤ order} c_w(Θ) x^{deg w} L_w ρ(0)`.
pub fn dyson_truncated_with(spec: &ModelSpec, x: &[f64], order: usize, cfg: &DysonConfig) -> Result<CMatrix> {
    spec.check_input(x)?;
    let terms = dyson_terms_by_degree(spec, order, cfg)?;
    let d = spec.dim();
    let mut rho = CMatrix::zeros(d, d);
    for (deg, op) in &terms {
        let mono: f64 = deg.iter().zip(x).map(|(&k, &xi)| xi.powi(k as i32)).product();
        rho += op * C64::new(mono, 0.0);
    }
    Ok(rho)
}

pub fn monomial_coefficient(spec: &ModelSpec, degrees: &[usize], max_word_len: usize) -> Result<f64> {
    monomial_coefficient_with(spec, degrees, max_word_len, &DysonConfig::default())
}

/// Coefficient of `x^degrees` in the output, summed over words of length at
/// most `max_word_len`.
pub fn monomial_coefficient_with(
    spec: &ModelSpec,
    degrees: &[usize],
    max_word_len: usize,
    cfg: &DysonConfig,
) -> Result<f64> {
    if degrees.len() != spec.m {
        return Err(Error::DimensionMismatch { expected: (spec.m, 1), found: (degrees.len(), 1) });
    }
    let total: usize = degrees.iter().sum();
    if total > max_word_len {
        return Err(Error::InvalidConfig(format!("total degree {total} exceeds the word length {max_word_len}")));
    }
    let needed = count_degree_words(spec, degrees, max_word_len);
    if needed > cfg.word_cap {
        return Err(Error::WordOverflow { needed, cap: cfg.word_cap });
    }
    let rho0 = linop::density(&spec.initial_state);
    let m = spec.observable.matrix();
    if spec.schedule.segments == 0 {
        return Ok(if total == 0 { linop::hs_inner_unchecked(m, &rho0).re } else { 0.0 });
    }
    let w = walker(spec, max_word_len, Some(degrees.to_vec()));
    let poly = PiecewisePoly::constant(PiecewisePoly::grid(&spec.schedule), 1.0);
    let mut deg = vec![0; spec.m];
    let mut acc = CMatrix::zeros(rho0.nrows(), rho0.ncols());
    let mut visit = |deg: &[usize], c: f64, op: &CMatrix| {
        if c != 0.0 && deg == degrees {
            acc += op * C64::new(c, 0.0);
        }
    };
    w.descend(&rho0, &poly, &mut deg, 0, &mut visit);
    Ok(linop::hs_inner_unchecked(m, &acc).re)
}

/// Checks the composition order of the engine against exact evolution.
///
/// A single qubit is driven by `X` then `Z` over two short segments. With the
/// correct orientation the second-order truncation is accurate to `O(T³)`;
/// the reversed composition is off at `O(T²)`.
pub fn orientation_self_test() -> Result<()> {
    let x_op = HermitianOperator::from_paulis(vec![crate::model::site_pauli(1, 0, PauliLetter::X)])?;
    let z_op = HermitianOperator::from_paulis(vec![crate::model::site_pauli(1, 0, PauliLetter::Z)])?;
    let mut schedule = PulseSchedule::new(0.02, 2, 2);
    schedule.amplitudes = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let psi0 = crate::model::product_state(&[[C64::new(1.0, 0.0), C64::new(0.6, 0.3)]])?;
    let spec = ModelSpec::new(
        1,
        1,
        vec![HamiltonianTerm::encoding(0, 0, x_op), HamiltonianTerm::control(1, z_op)],
        psi0,
        HermitianOperator::from_paulis(vec![crate::model::site_pauli(1, 0, PauliLetter::Y)])?,
        schedule,
    )?;
    let x = [1.0];
    let exact = super::final_density(&spec, &x)?;
    let ours = dyson_truncated(&spec, &x, 2)?;

    let ops = spec.channel_operators();
    let rho0 = linop::density(&spec.initial_state);
    let mut reversed = rho0.clone();
    let words: Vec<Word> =
        (0..2).map(|a| Word::new(vec![a])).chain((0..4).map(|ab| Word::new(vec![ab / 2, ab % 2]))).collect();
    for w in &words {
        let c = iterated_integral(&spec.schedule, &w.reversed())?;
        let mut op = rho0.clone();
        for &j in w.letters.iter().rev() {
            op = (&ops[j] * &op - &op * &ops[j]) * C64::new(0.0, -1.0);
        }
        reversed += op * C64::new(c, 0.0);
    }
    let err_ours = linop::hs_norm(&(&ours - &exact));
    let err_rev = linop::hs_norm(&(&reversed - &exact));
    if !(err_ours * 5.0 < err_rev && err_ours < 1e-4) {
        return Err(Error::SelfTest(format!(
            "Dyson orientation: truncation error {err_ours:e}, reversed composition {err_rev:e}"
        )));
    }
    Ok(())
}
