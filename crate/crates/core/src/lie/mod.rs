//! Dynamical Lie algebras of pulse models: closure, splitting into center and
//! simple ideals, projections, and the exact output variance.
//!
//! The algebra is the real span of anti-Hermitian matrices `iH` with the
//! Hilbert–Schmidt inner product. Hermitian inputs are multiplied by `i` on
//! entry.

mod sampled;

pub use sampled::{
    loss_variance_sampled, stationary_loss_variance, stationary_variance, variance_sampled, AmplitudeDist,
    SampledVariance, StationarityConfig, StationarityReport,
};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linop::{self, eigh_real, CMatrix, Field, OrthoBasis, C64};
use crate::model::{HermitianOperator, ModelSpec, F17};

pub const DEFAULT_CLOSURE_TOL: f64 = 1e-10;
pub const DEFAULT_SPLIT_TOL: f64 = 1e-8;
const SPLIT_SEEDS: [u64; 2] = [0x1d3a_5c7e, 0x2f4b_6d8a];

/// Where a basis element came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Origin {
    /// `i` times the given (0-based) generator.
    Generator(usize),
    /// Commutator of two earlier elements.
    Bracket(usize, usize),
    /// Linear combination produced by the ideal splitting.
    Split,
}

/// HS-orthonormal basis of anti-Hermitian matrices.
#[derive(Debug, Clone, Default)]
pub struct LieBasis {
    pub elements: Vec<CMatrix>,
    pub origins: Vec<Origin>,
}

impl LieBasis {
    pub fn dim(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    fn span(&self) -> OrthoBasis {
        OrthoBasis::from_orthonormal(Field::Real, self.elements.clone())
    }

    /// Largest deviation of the Gram matrix from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let g = linop::gram(&self.elements);
        let mut worst = 0.0f64;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let want = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - C64::new(want, 0.0)).norm());
            }
        }
        worst
    }

    /// Whether every `[B_i, B_j]` lies in the span within `tol` relative.
    pub fn is_closed(&self, tol: f64) -> bool {
        let span = self.span();
        for i in 0..self.dim() {
            for j in 0..i {
                let c = bracket(&self.elements[i], &self.elements[j]);
                if linop::hs_norm(&span.residual(&c)) > tol * linop::hs_norm(&c).max(1.0) {
                    return false;
                }
            }
        }
        true
    }

    /// `P(H) = Σ_j |Tr(B_j† iH)|²`.
    pub fn project_norm2(&self, h: &CMatrix) -> Result<f64> {
        if let Some(b) = self.elements.first() {
            if b.shape() != h.shape() {
                return Err(Error::DimensionMismatch { expected: b.shape(), found: h.shape() });
            }
        }
        let ih = h * linop::I;
        Ok(self.span().projection_norm2(&ih))
    }
}

/// `P(H)` of a Hermitian operator on one basis block.
pub fn project_norm2(block: &LieBasis, h: &HermitianOperator) -> Result<f64> {
    block.project_norm2(h.matrix())
}

fn bracket(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a * b - b * a
}

/// Orthonormal basis of the real Lie algebra generated by `{iH_k}`.
pub fn closure(generators: &[HermitianOperator], tol: f64, max_dim: usize) -> Result<LieBasis> {
    let anti: Vec<CMatrix> = generators.iter().map(|h| h.matrix() * linop::I).collect();
    closure_of(&anti, tol, max_dim)
}

/// Closure of anti-Hermitian generators under commutators.
pub fn closure_of(generators: &[CMatrix], tol: f64, max_dim: usize) -> Result<LieBasis> {
    if let Some(first) = generators.first() {
        for g in generators {
            if g.shape() != first.shape() || g.nrows() != g.ncols() {
                return Err(Error::DimensionMismatch { expected: first.shape(), found: g.shape() });
            }
            if !linop::is_anti_hermitian(g, 1e-10) {
                return Err(Error::InvalidModel("Lie generators must be anti-Hermitian".into()));
            }
        }
    }
    let mut span = OrthoBasis::new(Field::Real);
    let mut origins = Vec::new();
    let accept = |span: &mut OrthoBasis, origins: &mut Vec<Origin>, c: &CMatrix, origin: Origin| -> Result<()> {
        let norm = linop::hs_norm(c);
        if norm < tol {
            return Ok(());
        }
        if span.insert(c, tol * norm) {
            if span.len() > max_dim {
                return Err(Error::MaxDimExceeded { max_dim });
            }
            origins.push(origin);
        }
        Ok(())
    };
    for (k, g) in generators.iter().enumerate() {
        accept(&mut span, &mut origins, g, Origin::Generator(k))?;
    }
    let mut i = 1;
    while i < span.len() {
        for j in 0..i {
            let c = bracket(&span.elements()[i], &span.elements()[j]);
            // Keep the candidate exactly anti-Hermitian before orthogonalizing.
            let c = (&c - c.adjoint()) * C64::new(0.5, 0.0);
            accept(&mut span, &mut origins, &c, Origin::Bracket(i, j))?;
        }
        i += 1;
    }
    Ok(LieBasis { elements: span.into_elements(), origins })
}

/// Algebra generated by `i` times every channel operator of a model.
pub fn model_algebra(spec: &ModelSpec, tol: f64, max_dim: usize) -> Result<LieBasis> {
    let anti: Vec<CMatrix> = spec.channel_operators().iter().map(|h| h * linop::I).collect();
    closure_of(&anti, tol, max_dim)
}

/// `g = c ⊕ g_1 ⊕ … ⊕ g_k`.
#[derive(Debug, Clone)]
pub struct LieDecomposition {
    pub center: LieBasis,
    pub ideals: Vec<LieBasis>,
}

impl LieDecomposition {
    pub fn dim(&self) -> usize {
        self.center.dim() + self.ideals.iter().map(LieBasis::dim).sum::<usize>()
    }

    pub fn ideal_dims(&self) -> Vec<usize> {
        self.ideals.iter().map(LieBasis::dim).collect()
    }

    /// All elements, center first.
    pub fn union(&self) -> LieBasis {
        let mut out = self.center.clone();
        for b in &self.ideals {
            out.elements.extend(b.elements.iter().cloned());
            out.origins.extend(b.origins.iter().copied());
        }
        out
    }
}

/// Structure constants `ad_i[k, j] = Re Tr(B_k† [B_i, B_j])`.
fn adjoint_matrices(basis: &LieBasis) -> Vec<DMatrix<f64>> {
    let d = basis.dim();
    let b = &basis.elements;
    let mut ads = vec![DMatrix::<f64>::zeros(d, d); d];
    for i in 0..d {
        for j in 0..i {
            let c = bracket(&b[i], &b[j]);
            for k in 0..d {
                let v = linop::hs_inner_unchecked(&b[k], &c).re;
                ads[i][(k, j)] = v;
                ads[j][(k, i)] = -v;
            }
        }
    }
    ads
}

/// Groups sorted eigenvalues whose consecutive gaps are below `gap`.
fn clusters(vals: &[f64], gap: f64) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    for (i, v) in vals.iter().enumerate() {
        match out.last_mut() {
            Some(c) if v - vals[*c.last().unwrap()] <= gap => c.push(i),
            _ => out.push(vec![i]),
        }
    }
    out
}

fn random_combination(ops: &[DMatrix<f64>], rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let (r, c) = ops[0].shape();
    ops.iter().fold(DMatrix::zeros(r, c), |acc, a| {
        let w: f64 = rng.random_range(-1.0..1.0);
        acc + a * w
    })
}

/// Orthonormal basis (columns) of the symmetric matrices commuting with all
/// `ops`, returned as a list of `s × s` matrices.
///
/// Any such matrix commutes with `Aᵀ A` for a random `A` in the span, so it is
/// block diagonal in that matrix's eigenspaces; the linear system is solved
/// only over those blocks.
fn commutant(ops: &[DMatrix<f64>], tol: f64, rng: &mut ChaCha8Rng) -> Vec<DMatrix<f64>> {
    let s = ops[0].nrows();
    let a = random_combination(ops, rng);
    let (qv, qe) = eigh_real(&(a.transpose() * &a));
    let spread = qv.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let groups = clusters(qv.as_slice(), 1e-6 * spread.max(f64::MIN_POSITIVE));
    let mut cluster_of = vec![0; s];
    for (g, members) in groups.iter().enumerate() {
        for &p in members {
            cluster_of[p] = g;
        }
    }
    let unknowns: Vec<(usize, usize)> =
        (0..s).flat_map(|p| (0..s).map(move |q| (p, q))).filter(|&(p, q)| cluster_of[p] == cluster_of[q]).collect();
    let u = unknowns.len();
    let mut normal = DMatrix::<f64>::zeros(u, u);
    for op in ops {
        let ap = qe.transpose() * op * &qe;
        let g = ap.transpose() * &ap;
        let h = &ap * ap.transpose();
        for (x, &(p, q)) in unknowns.iter().enumerate() {
            for (y, &(r, t)) in unknowns.iter().enumerate() {
                let mut v = -ap[(r, p)] * ap[(t, q)] - ap[(p, r)] * ap[(q, t)];
                if q == t {
                    v += g[(p, r)];
                }
                if p == r {
                    v += h[(q, t)];
                }
                normal[(x, y)] += v;
            }
        }
    }
    let (nv, ne) = eigh_real(&normal);
    let top = nv.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut out = Vec::new();
    for (idx, &val) in nv.iter().enumerate() {
        if val > tol * top.max(f64::MIN_POSITIVE) {
            continue;
        }
        let mut y = DMatrix::<f64>::zeros(s, s);
        for (x, &(p, q)) in unknowns.iter().enumerate() {
            y[(p, q)] = ne[(x, idx)];
        }
        let x = &qe * y * qe.transpose();
        out.push((&x + x.transpose()) * 0.5);
    }
    out
}

/// Splits the invariant subspace spanned by the columns of `p` into minimal
/// invariant subspaces of the adjoint action.
fn split(ads: &[DMatrix<f64>], p: DMatrix<f64>, tol: f64, rng: &mut ChaCha8Rng, depth: usize) -> Vec<DMatrix<f64>> {
    let s = p.ncols();
    if s <= 1 || depth > 16 {
        return vec![p];
    }
    let restricted: Vec<DMatrix<f64>> = ads.iter().map(|a| p.transpose() * a * &p).collect();
    let comm = commutant(&restricted, tol, rng);
    if comm.len() <= 1 {
        return vec![p];
    }
    let x = random_combination(&comm, rng);
    let (xv, xe) = eigh_real(&x);
    let spread = xv[xv.len() - 1] - xv[0];
    let groups = clusters(xv.as_slice(), 1e-6 * spread.max(f64::MIN_POSITIVE));
    if groups.len() <= 1 {
        return vec![p];
    }
    let mut out = Vec::new();
    for g in groups {
        let w = DMatrix::from_fn(s, g.len(), |r, c| xe[(r, g[c])]);
        out.extend(split(ads, &p * w, tol, rng, depth + 1));
    }
    out
}

fn block_to_basis(basis: &LieBasis, coords: &DMatrix<f64>) -> LieBasis {
    let (n, _) = basis.elements.first().map(|b| b.shape()).unwrap_or((0, 0));
    let elements: Vec<CMatrix> = (0..coords.ncols())
        .map(|c| {
            basis
                .elements
                .iter()
                .enumerate()
                .fold(CMatrix::zeros(n, n), |acc, (i, b)| acc + b * C64::new(coords[(i, c)], 0.0))
        })
        .collect();
    let origins = vec![Origin::Split; elements.len()];
    LieBasis { elements, origins }
}

fn decompose_once(basis: &LieBasis, ads: &[DMatrix<f64>], tol: f64, seed: u64) -> LieDecomposition {
    let d = basis.dim();
    if d == 0 {
        return LieDecomposition { center: LieBasis::default(), ideals: Vec::new() };
    }
    let casimir = ads.iter().fold(DMatrix::<f64>::zeros(d, d), |acc, a| acc + a.transpose() * a);
    let (vals, vecs) = eigh_real(&casimir);
    let top = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (center_idx, semi_idx): (Vec<usize>, Vec<usize>) = (0..d).partition(|&i| vals[i] <= tol * top || top == 0.0);
    let center = DMatrix::from_fn(d, center_idx.len(), |r, c| vecs[(r, center_idx[c])]);
    let semi = DMatrix::from_fn(d, semi_idx.len(), |r, c| vecs[(r, semi_idx[c])]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocks = if semi.ncols() > 0 { split(ads, semi, tol, &mut rng, 0) } else { Vec::new() };
    blocks.sort_by_key(|b| b.ncols());
    let mut center = block_to_basis(basis, &center);
    if center_idx.is_empty() {
        center = LieBasis::default();
    }
    LieDecomposition { center, ideals: blocks.iter().map(|b| block_to_basis(basis, b)).collect() }
}

/// Center plus simple ideals. Two independent random splittings must agree
/// on the block dimensions.
pub fn decompose(basis: &LieBasis, tol: f64) -> Result<LieDecomposition> {
    decompose_with_seeds(basis, tol, SPLIT_SEEDS)
}

pub fn decompose_with_seeds(basis: &LieBasis, tol: f64, seeds: [u64; 2]) -> Result<LieDecomposition> {
    let ads = adjoint_matrices(basis);
    let first = decompose_once(basis, &ads, tol, seeds[0]);
    let second = decompose_once(basis, &ads, tol, seeds[1]);
    let dims = |d: &LieDecomposition| {
        let mut v = vec![d.center.dim()];
        v.extend(d.ideal_dims());
        v
    };
    if dims(&first) != dims(&second) {
        return Err(Error::DecompositionUnstable { first: dims(&first), second: dims(&second) });
    }
    Ok(first)
}

/// One simple ideal's share of the variance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdealVariance {
    pub dim: usize,
    pub p_rho: F17,
    pub p_m: F17,
    pub contribution: F17,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VarianceReport {
    pub algebra_dim: usize,
    pub center_dim: usize,
    pub ideals: Vec<IdealVariance>,
    pub total: F17,
    /// Traceless part of `ρ` lies in the algebra.
    pub rho_in_algebra: bool,
    /// Traceless part of `M` lies in the algebra.
    pub m_in_algebra: bool,
}

impl VarianceReport {
    pub fn total(&self) -> f64 {
        self.total.0
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

fn traceless(h: &CMatrix) -> CMatrix {
    let d = h.nrows();
    let tr = h.trace() / C64::new(d as f64, 0.0);
    h - linop::identity(d) * tr
}

fn member(algebra: &LieBasis, h: &CMatrix) -> bool {
    let t = traceless(h) * linop::I;
    algebra.span().contains(&t, 1e-8)
}

/// `Var f = Σ_j P_j(ρ) P_j(M) / dim g_j` over the simple ideals.
///
/// The membership hypothesis on `ρ` or `M` is reported, not enforced.
pub fn variance_exact(spec: &ModelSpec, decomposition: &LieDecomposition) -> Result<VarianceReport> {
    let rho = linop::density(&spec.initial_state);
    let m = spec.observable.matrix();
    let mut ideals = Vec::new();
    let mut total = 0.0;
    for block in &decomposition.ideals {
        let p_rho = block.project_norm2(&rho)?;
        let p_m = block.project_norm2(m)?;
        let contribution = p_rho * p_m / block.dim() as f64;
        total += contribution;
        ideals.push(IdealVariance {
            dim: block.dim(),
            p_rho: F17(p_rho),
            p_m: F17(p_m),
            contribution: F17(contribution),
        });
    }
    let all = decomposition.union();
    Ok(VarianceReport {
        algebra_dim: decomposition.dim(),
        center_dim: decomposition.center.dim(),
        ideals,
        total: F17(total),
        rho_in_algebra: member(&all, &rho),
        m_in_algebra: member(&all, m),
    })
}
