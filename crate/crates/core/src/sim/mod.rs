//! Exact piecewise-constant evolution, measurement and pulse sensitivities.

mod dyson;

pub use dyson::{
    dyson_terms_by_degree, dyson_truncated, dyson_truncated_with, iterated_integral, monomial_coefficient,
    monomial_coefficient_with, orientation_self_test, DysonConfig, PiecewisePoly, Word,
};

use nalgebra::DMatrix;

use crate::error::Result;
use crate::linop::{self, CMatrix, StateVector, C64};
use crate::model::{ModelSpec, PulseSchedule};

/// States at every segment boundary.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<StateVector>,
}

impl Trajectory {
    pub fn final_state(&self) -> &StateVector {
        self.states.last().expect("trajectory holds at least the initial state")
    }
}

/// Precomputed operators of a model, reusable across inputs and schedules.
#[derive(Debug, Clone)]
pub struct Simulator {
    dim: usize,
    /// Column-major channel operators.
    ops: Vec<Vec<C64>>,
    inputs: Vec<Option<usize>>,
    observable: CMatrix,
    psi0: StateVector,
    real: bool,
}

/// Eigendecomposition of one segment Hamiltonian.
///
/// `vecs` is column-major `d × d`; `half[p] = e^{iλ_p dt/2}`, so the
/// propagator is `V diag(conj(half)²) V†`.
struct Segments {
    d: usize,
    vals: Vec<f64>,
    half: Vec<C64>,
    vecs: Vec<C64>,
}

impl Segments {
    fn new(d: usize, count: usize) -> Self {
        Self {
            d,
            vals: vec![0.0; d * count],
            half: vec![C64::new(0.0, 0.0); d * count],
            vecs: vec![C64::new(0.0, 0.0); d * d * count],
        }
    }

    fn vals(&self, k: usize) -> &[f64] {
        &self.vals[k * self.d..(k + 1) * self.d]
    }

    fn half(&self, k: usize) -> &[C64] {
        &self.half[k * self.d..(k + 1) * self.d]
    }

    fn vecs(&self, k: usize) -> &[C64] {
        &self.vecs[k * self.d * self.d..(k + 1) * self.d * self.d]
    }
}

/// Fixed-size eigensolvers avoid heap traffic for the common small dimensions.
macro_rules! eigen_into {
    ($t:ty, $h:expr, $d:expr, $vals:expr, $vecs:expr, $lift:expr, [$($n:literal),*]) => {
        match $d {
            $($n => {
                let e = nalgebra::SMatrix::<$t, $n, $n>::from_column_slice($h).symmetric_eigen();
                $vals.copy_from_slice(e.eigenvalues.as_slice());
                for (dst, src) in $vecs.iter_mut().zip(e.eigenvectors.as_slice()) {
                    *dst = $lift(*src);
                }
            })*
            _ => {
                let e = DMatrix::<$t>::from_column_slice($d, $d, $h).symmetric_eigen();
                $vals.copy_from_slice(e.eigenvalues.as_slice());
                for (dst, src) in $vecs.iter_mut().zip(e.eigenvectors.as_slice()) {
                    *dst = $lift(*src);
                }
            }
        }
    };
}

/// `out = V† v` for column-major `V`.
fn ad_mul(v: &[C64], d: usize, x: &[C64], out: &mut [C64]) {
    for (p, o) in out.iter_mut().enumerate() {
        *o = v[p * d..(p + 1) * d].iter().zip(x).map(|(a, b)| a.conj() * b).sum();
    }
}

/// `out = V (phase ∘ y)`.
fn mul_phased(v: &[C64], d: usize, phase: impl Fn(usize) -> C64, y: &[C64], out: &mut [C64]) {
    out.iter_mut().for_each(|o| *o = C64::new(0.0, 0.0));
    for p in 0..d {
        let c = phase(p) * y[p];
        for (o, vr) in out.iter_mut().zip(&v[p * d..(p + 1) * d]) {
            *o += vr * c;
        }
    }
}

impl Simulator {
    pub fn new(spec: &ModelSpec) -> Self {
        let ops: Vec<Vec<C64>> = spec.channel_operators().iter().map(|o| o.as_slice().to_vec()).collect();
        let real = ops.iter().all(|o| o.iter().all(|z| z.im == 0.0));
        Self {
            dim: spec.dim(),
            ops,
            inputs: spec.channel_inputs(),
            observable: spec.observable.matrix().clone(),
            psi0: spec.initial_state.clone(),
            real,
        }
    }

    fn weights(&self, x: &[f64]) -> Vec<f64> {
        self.inputs.iter().map(|i| i.map_or(1.0, |i| x[i])).collect()
    }

    /// Diagonalizes segment `seg` into slot `slot` of `out`.
    fn diagonalize(
        &self,
        schedule: &PulseSchedule,
        weights: &[f64],
        seg: usize,
        dt: f64,
        out: &mut Segments,
        slot: usize,
    ) {
        let d = self.dim;
        let vals = &mut out.vals[slot * d..(slot + 1) * d];
        let vecs = &mut out.vecs[slot * d * d..(slot + 1) * d * d];
        if self.real {
            let mut h = vec![0.0; d * d];
            for (c, op) in self.ops.iter().enumerate() {
                let a = weights[c] * schedule.amplitudes[c][seg];
                if a != 0.0 {
                    h.iter_mut().zip(op).for_each(|(x, y)| *x += a * y.re);
                }
            }
            eigen_into!(f64, &h, d, vals, vecs, |x: f64| C64::new(x, 0.0), [2, 4, 8]);
        } else {
            let mut h = vec![C64::new(0.0, 0.0); d * d];
            for (c, op) in self.ops.iter().enumerate() {
                let a = weights[c] * schedule.amplitudes[c][seg];
                if a != 0.0 {
                    h.iter_mut().zip(op).for_each(|(x, y)| *x += y * a);
                }
            }
            eigen_into!(C64, &h, d, vals, vecs, |x: C64| x, [2, 4, 8]);
        }
        for (h, l) in out.half[slot * d..(slot + 1) * d].iter_mut().zip(vals.iter()) {
            *h = C64::from_polar(1.0, 0.5 * l * dt);
        }
    }

    /// `ψ ← V diag(e^{−iλ dt}) V† ψ` using `scratch` of length `d`.
    fn step(seg: &Segments, k: usize, psi: &mut [C64], scratch: &mut [C64]) {
        let (d, v, half) = (seg.d, seg.vecs(k), seg.half(k));
        ad_mul(v, d, psi, scratch);
        mul_phased(v, d, |p| (half[p] * half[p]).conj(), scratch, psi);
    }

    pub fn evolve(&self, schedule: &PulseSchedule, x: &[f64]) -> Trajectory {
        let weights = self.weights(x);
        let dt = schedule.dt();
        let d = self.dim;
        let mut seg = Segments::new(d, 1);
        let mut scratch = vec![C64::new(0.0, 0.0); d];
        let mut psi = self.psi0.clone();
        let mut times = Vec::with_capacity(schedule.segments + 1);
        let mut states = Vec::with_capacity(schedule.segments + 1);
        times.push(0.0);
        states.push(psi.clone());
        for k in 0..schedule.segments {
            self.diagonalize(schedule, &weights, k, dt, &mut seg, 0);
            Self::step(&seg, 0, psi.as_mut_slice(), &mut scratch);
            times.push(dt * (k + 1) as f64);
            states.push(psi.clone());
        }
        Trajectory { times, states }
    }

    pub fn final_state(&self, schedule: &PulseSchedule, x: &[f64]) -> StateVector {
        let weights = self.weights(x);
        let dt = schedule.dt();
        let mut seg = Segments::new(self.dim, 1);
        let mut scratch = vec![C64::new(0.0, 0.0); self.dim];
        let mut psi = self.psi0.clone();
        for k in 0..schedule.segments {
            self.diagonalize(schedule, &weights, k, dt, &mut seg, 0);
            Self::step(&seg, 0, psi.as_mut_slice(), &mut scratch);
        }
        psi
    }

    pub fn measure(&self, schedule: &PulseSchedule, x: &[f64]) -> f64 {
        let psi = self.final_state(schedule, x);
        linop::expectation(&psi, &self.observable).re
    }

    /// Output `f` and `∂f/∂θ_c[k]` for every channel and segment, frozen or not.
    ///
    /// Uses the adjoint method with the exact Fréchet derivative of each
    /// segment propagator in its eigenbasis.
    pub fn measure_with_gradient(&self, schedule: &PulseSchedule, x: &[f64]) -> (f64, Vec<Vec<f64>>) {
        let weights = self.weights(x);
        let dt = schedule.dt();
        let k_total = schedule.segments;
        let d = self.dim;
        let zero = C64::new(0.0, 0.0);
        let mut segs = Segments::new(d, k_total);
        let mut states = vec![zero; d * k_total];
        let mut scratch = vec![zero; d];
        let mut psi = self.psi0.clone();
        for k in 0..k_total {
            self.diagonalize(schedule, &weights, k, dt, &mut segs, k);
            states[k * d..(k + 1) * d].copy_from_slice(psi.as_slice());
            Self::step(&segs, k, psi.as_mut_slice(), &mut scratch);
        }
        let chi0 = &self.observable * &psi;
        let value = psi.dotc(&chi0).re;
        let mut chi = chi0.as_slice().to_vec();

        let mut grad = vec![vec![0.0; k_total]; self.ops.len()];
        let mut psi_t = vec![zero; d];
        let mut chi_t = vec![zero; d];
        let mut a = vec![zero; d * d];
        let mut va = vec![zero; d * d];
        let mut b = vec![zero; d * d];
        for k in (0..k_total).rev() {
            let (v, vals, half) = (segs.vecs(k), segs.vals(k), segs.half(k));
            ad_mul(v, d, &states[k * d..(k + 1) * d], &mut psi_t);
            ad_mul(v, d, &chi, &mut chi_t);
            // Divided differences of λ ↦ e^{−iλ dt}: −i dt sinc(½Δλ dt) e^{−i λ̄ dt}.
            // `a` holds Aᵀ column-major, i.e. a[q + p d] = A[q][p].
            for p in 0..d {
                for q in 0..d {
                    let half_arg = 0.5 * (vals[p] - vals[q]) * dt;
                    let sin_half = if half_arg.abs() < 1e-4 {
                        half_arg * (1.0 - half_arg * half_arg / 6.0 * (1.0 - half_arg * half_arg / 20.0))
                    } else {
                        (half[p] * half[q].conj()).im
                    };
                    let scale = if half_arg == 0.0 { dt } else { dt * sin_half / half_arg };
                    let phase = (half[p] * half[q]).conj();
                    let gamma = C64::new(phase.im * scale, -phase.re * scale);
                    a[q + p * d] = chi_t[p].conj() * gamma * psi_t[q];
                }
            }
            // ⟨χ|dU|ψ⟩ = Tr(B E) with B = V Aᵀ V†.
            va.iter_mut().for_each(|z| *z = zero);
            for col in 0..d {
                for (l, &alc) in a[col * d..(col + 1) * d].iter().enumerate() {
                    if alc == zero {
                        continue;
                    }
                    for (o, vil) in va[col * d..(col + 1) * d].iter_mut().zip(&v[l * d..(l + 1) * d]) {
                        *o += vil * alc;
                    }
                }
            }
            for col in 0..d {
                for row in 0..d {
                    b[row + col * d] = (0..d).map(|l| va[row + l * d] * v[col + l * d].conj()).sum();
                }
            }
            for (c, op) in self.ops.iter().enumerate() {
                if weights[c] == 0.0 {
                    continue;
                }
                let mut tr = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        let (x, y) = (b[i + j * d], op[j + i * d]);
                        tr += x.re * y.re - x.im * y.im;
                    }
                }
                grad[c][k] = 2.0 * weights[c] * tr;
            }
            mul_phased(v, d, |p| half[p] * half[p], &chi_t, &mut chi);
        }
        (value, grad)
    }
}

/// Piecewise-constant evolution of the model's initial state at input `x`.
pub fn evolve(spec: &ModelSpec, x: &[f64]) -> Result<Trajectory> {
    spec.check_input(x)?;
    Ok(Simulator::new(spec).evolve(&spec.schedule, x))
}

/// `⟨ψ(T;x)|M|ψ(T;x)⟩`.
pub fn measure(spec: &ModelSpec, x: &[f64]) -> Result<f64> {
    spec.check_input(x)?;
    Ok(Simulator::new(spec).measure(&spec.schedule, x))
}

/// `ρ(T) = |ψ(T)⟩⟨ψ(T)|`.
pub fn final_density(spec: &ModelSpec, x: &[f64]) -> Result<CMatrix> {
    spec.check_input(x)?;
    Ok(linop::density(&Simulator::new(spec).final_state(&spec.schedule, x)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::state_norm;
    use crate::model::{builtin_model, builtin_model_with, BuiltinModel, BuiltinOptions, InitialChoice};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn randomize(spec: &mut ModelSpec, rng: &mut ChaCha8Rng, amp: f64) {
        let s = &mut spec.schedule;
        for c in 0..s.channels() {
            for k in 0..s.segments {
                if s.tunable[c][k] {
                    s.amplitudes[c][k] = rng.random_range(-amp..amp);
                }
            }
        }
    }

    #[test]
    fn zero_hamiltonian_keeps_state() {
        let mut spec = builtin_model(BuiltinModel::Eq13, 2).unwrap().with_layout(1.0, 10).unwrap();
        spec.schedule.set_channel(0, 0.0, false);
        let traj = evolve(&spec, &[0.4]).unwrap();
        assert!((traj.final_state() - &spec.initial_state).norm() < 1e-15);
        assert_eq!(traj.times.len(), 11);
    }

    #[test]
    fn rabi_half_period() {
        let spec = {
            let text = r#"{"n":1,"m":1,
              "terms":[{"kind":"encoding","input":1,"pulse":1,"pauli":"Z"},{"kind":"control","pulse":2,"pauli":"X"}],
              "initial_state":[[1,0],[0,0]], "observable":{"pauli":"Z"},
              "schedule":{"T":2.0,"K":4,"amplitudes":[[0,0,0,0],[0.7853981633974483,0.7853981633974483,0.7853981633974483,0.7853981633974483]]}}"#;
            crate::model::model_from_json(text).unwrap()
        };
        let psi = evolve(&spec, &[0.0]).unwrap().final_state().clone();
        assert!((psi[1] - C64::new(0.0, -1.0)).norm() < 1e-14);
        assert!((measure(&spec, &[0.0]).unwrap() + 1.0).abs() < 1e-14);
    }

    #[test]
    fn empty_schedule_measures_initial_state() {
        let opts = BuiltinOptions { initial: InitialChoice::Zero, ..Default::default() };
        let spec = builtin_model_with(BuiltinModel::Eq13, 2, &opts).unwrap().with_layout(0.0, 0).unwrap();
        assert!((measure(&spec, &[0.3]).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn model1_zero_pulses_is_constant_one() {
        for n in 1..=4 {
            let spec = builtin_model(BuiltinModel::Model1, n).unwrap().with_layout(2.0, 20).unwrap();
            for x in [-1.0, -0.3, 0.0, 0.8] {
                assert!((measure(&spec, &[x]).unwrap() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eq13_zero_state_output_is_even() {
        let opts = BuiltinOptions { initial: InitialChoice::Zero, ..Default::default() };
        let mut spec = builtin_model_with(BuiltinModel::Eq13, 2, &opts).unwrap().with_layout(2.0, 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        randomize(&mut spec, &mut rng, 2.0);
        for x in [0.1, 0.5, 0.9] {
            let a = measure(&spec, &[x]).unwrap();
            let b = measure(&spec, &[-x]).unwrap();
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn norm_preserved_at_every_boundary() {
        let mut spec = builtin_model(BuiltinModel::Model4, 3).unwrap().with_layout(3.0, 30).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        randomize(&mut spec, &mut rng, 3.0);
        let traj = evolve(&spec, &[0.6]).unwrap();
        for psi in &traj.states {
            assert!((state_norm(psi) - 1.0).abs() < 1e-12);
        }
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn global_phase_does_not_change_output() {
        let mut spec = builtin_model(BuiltinModel::Model3, 3).unwrap().with_layout(1.0, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        randomize(&mut spec, &mut rng, 1.5);
        let before = measure(&spec, &[0.2]).unwrap();
        spec.initial_state *= C64::from_polar(1.0, 1.234);
        let after = measure(&spec, &[0.2]).unwrap();
        assert!((before - after).abs() < 1e-13);
    }

    fn check_gradient(spec: &ModelSpec, x: &[f64]) {
        let sim = Simulator::new(spec);
        let (f, grad) = sim.measure_with_gradient(&spec.schedule, x);
        assert!((f - sim.measure(&spec.schedule, x)).abs() < 1e-13);
        let h = 1e-5;
        for c in 0..spec.channel_count() {
            for k in 0..spec.schedule.segments {
                let mut plus = spec.schedule.clone();
                plus.amplitudes[c][k] += h;
                let mut minus = spec.schedule.clone();
                minus.amplitudes[c][k] -= h;
                let fd = (sim.measure(&plus, x) - sim.measure(&minus, x)) / (2.0 * h);
                let g = grad[c][k];
                assert!((g - fd).abs() <= 1e-6 * g.abs().max(1e-3), "c={c} k={k} exact={g} fd={fd}");
            }
        }
    }

    #[test]
    fn sensitivities_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for (id, n) in [(BuiltinModel::Eq13, 2), (BuiltinModel::Model1, 2), (BuiltinModel::Eq15, 2)] {
            let mut spec = builtin_model(id, n).unwrap().with_layout(0.6, 6).unwrap();
            randomize(&mut spec, &mut rng, 1.5);
            let x: Vec<f64> = (0..spec.m).map(|_| rng.random_range(-1.0..1.0)).collect();
            check_gradient(&spec, &x);
        }
    }

    #[test]
    fn sensitivities_with_degenerate_spectrum() {
        // Zero pulses leave only x·ZZ, whose spectrum is doubly degenerate.
        let spec = builtin_model(BuiltinModel::Eq13, 2).unwrap().with_layout(0.5, 5).unwrap();
        check_gradient(&spec, &[0.7]);
    }
}
