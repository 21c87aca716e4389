//! Dense complex linear algebra used throughout the crate.
//!
//! Matrices are plain `nalgebra` dynamic matrices over `Complex64`. Everything
//! here is a pure function of its inputs.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type StateVector = DVector<C64>;

/// Largest qubit count any Kronecker product may produce by default.
pub const DEFAULT_MAX_QUBITS: usize = 10;

/// Relative tolerance for rank and linear-independence decisions.
pub const DEFAULT_RANK_TOL: f64 = 1e-10;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

pub fn identity(dim: usize) -> CMatrix {
    CMatrix::identity(dim, dim)
}

pub fn sigma_x() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO])
}

pub fn sigma_y() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ZERO, -I, I, ZERO])
}

pub fn sigma_z() -> CMatrix {
    CMatrix::from_row_slice(2, 2, &[ONE, ZERO, ZERO, -ONE])
}

/// Kronecker product `a ⊗ b`, limited to `2^DEFAULT_MAX_QUBITS` rows/cols.
pub fn kron(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    kron_with_limit(a, b, 1 << DEFAULT_MAX_QUBITS)
}

pub fn kron_with_limit(a: &CMatrix, b: &CMatrix, max_dim: usize) -> Result<CMatrix> {
    let rows = a.nrows().checked_mul(b.nrows());
    let cols = a.ncols().checked_mul(b.ncols());
    match (rows, cols) {
        (Some(r), Some(c)) if r <= max_dim && c <= max_dim => Ok(a.kronecker(b)),
        _ => Err(Error::DimensionOverflow {
            rows: a.nrows().saturating_mul(b.nrows()),
            cols: a.ncols().saturating_mul(b.ncols()),
            max: max_dim,
        }),
    }
}

fn check_same_square(a: &CMatrix, b: &CMatrix) -> Result<()> {
    if !a.is_square() || a.shape() != b.shape() {
        return Err(Error::DimensionMismatch { expected: a.shape(), found: b.shape() });
    }
    Ok(())
}

/// `[a, b] = ab − ba`.
pub fn commutator(a: &CMatrix, b: &CMatrix) -> Result<CMatrix> {
    check_same_square(a, b)?;
    Ok(a * b - b * a)
}

/// Hilbert–Schmidt inner product `Tr(a† b)`.
pub fn hs_inner(a: &CMatrix, b: &CMatrix) -> Result<C64> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch { expected: a.shape(), found: b.shape() });
    }
    Ok(hs_inner_unchecked(a, b))
}

#[inline]
pub(crate) fn hs_inner_unchecked(a: &CMatrix, b: &CMatrix) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// Hilbert–Schmidt (Frobenius) norm.
pub fn hs_norm(a: &CMatrix) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn dagger(a: &CMatrix) -> CMatrix {
    a.adjoint()
}

pub fn is_hermitian(a: &CMatrix, tol: f64) -> bool {
    a.is_square() && hs_norm(&(a - a.adjoint())) <= tol * hs_norm(a).max(1.0)
}

pub fn is_anti_hermitian(a: &CMatrix, tol: f64) -> bool {
    a.is_square() && hs_norm(&(a + a.adjoint())) <= tol * hs_norm(a).max(1.0)
}

pub fn is_finite(a: &CMatrix) -> bool {
    a.iter().all(|z| z.re.is_finite() && z.im.is_finite())
}

fn is_real(a: &CMatrix) -> bool {
    a.iter().all(|z| z.im == 0.0)
}

/// Eigendecomposition of a Hermitian matrix: returns ascending eigenvalues and
/// the unitary whose columns are the eigenvectors.
///
/// Real symmetric inputs take a real solver, which is noticeably faster for
/// the small matrices that dominate training.
pub fn eigh(h: &CMatrix) -> (DVector<f64>, CMatrix) {
    let (vals, vecs) = if is_real(h) {
        let re = h.map(|z| z.re);
        let eig = re.symmetric_eigen();
        (eig.eigenvalues, eig.eigenvectors.map(|x| C64::new(x, 0.0)))
    } else {
        let eig = h.clone().symmetric_eigen();
        (eig.eigenvalues, eig.eigenvectors)
    };
    sort_eigen(vals, vecs)
}

fn sort_eigen(vals: DVector<f64>, vecs: CMatrix) -> (DVector<f64>, CMatrix) {
    let mut order: Vec<usize> = (0..vals.len()).collect();
    order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
    let sorted_vals = DVector::from_iterator(vals.len(), order.iter().map(|&i| vals[i]));
    let sorted_vecs = CMatrix::from_fn(vecs.nrows(), vecs.ncols(), |r, c| vecs[(r, order[c])]);
    (sorted_vals, sorted_vecs)
}

/// Real symmetric eigendecomposition with ascending eigenvalues.
pub(crate) fn eigh_real(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = (a + a.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let vals = DVector::from_iterator(order.len(), order.iter().map(|&i| eig.eigenvalues[i]));
    let vecs = DMatrix::from_fn(a.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (vals, vecs)
}

/// `exp(−i·dt·H)` for Hermitian `H`, via its eigendecomposition.
pub fn unitary_propagator(h: &CMatrix, dt: f64) -> CMatrix {
    let (vals, vecs) = eigh(h);
    let phases = DVector::from_iterator(vals.len(), vals.iter().map(|&l| C64::from_polar(1.0, -l * dt)));
    let scaled = CMatrix::from_fn(vecs.nrows(), vecs.ncols(), |r, c| vecs[(r, c)] * phases[c]);
    scaled * vecs.adjoint()
}

/// Matrix exponential.
///
/// Hermitian and anti-Hermitian inputs are exponentiated through an exact
/// eigendecomposition. Anything else goes through Padé-13 scaling and
/// squaring.
pub fn expm(a: &CMatrix) -> Result<CMatrix> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch { expected: (a.nrows(), a.nrows()), found: a.shape() });
    }
    if !is_finite(a) {
        return Err(Error::NonFinite("expm input"));
    }
    if a.nrows() == 0 {
        return Ok(a.clone());
    }
    const STRUCT_TOL: f64 = 1e-13;
    if is_anti_hermitian(a, STRUCT_TOL) {
        // a = −i·H with H = i·a Hermitian.
        let h = a.map(|z| z * I);
        let h = (&h + h.adjoint()) * C64::new(0.5, 0.0);
        return Ok(unitary_propagator(&h, 1.0));
    }
    if is_hermitian(a, STRUCT_TOL) {
        let h = (a + a.adjoint()) * C64::new(0.5, 0.0);
        let (vals, vecs) = eigh(&h);
        let scaled = CMatrix::from_fn(vecs.nrows(), vecs.ncols(), |r, c| vecs[(r, c)] * vals[c].exp());
        return Ok(scaled * vecs.adjoint());
    }
    expm_pade(a)
}

fn one_norm(a: &CMatrix) -> f64 {
    (0..a.ncols()).map(|c| a.column(c).iter().map(|z| z.norm()).sum::<f64>()).fold(0.0, f64::max)
}

/// Higham's scaling-and-squaring with a degree-13 Padé approximant.
fn expm_pade(a: &CMatrix) -> Result<CMatrix> {
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    const THETA_13: f64 = 5.371920351148152;

    let n = a.nrows();
    let norm = one_norm(a);
    let squarings = if norm > THETA_13 { (norm / THETA_13).log2().ceil() as i32 } else { 0 };
    let a = a * C64::new(2f64.powi(-squarings), 0.0);
    let ident = identity(n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;
    let c = |k: usize| C64::new(B[k], 0.0);

    let u_inner = &a6 * (&a6 * c(13) + &a4 * c(11) + &a2 * c(9)) + &a6 * c(7) + &a4 * c(5) + &a2 * c(3) + &ident * c(1);
    let u = &a * u_inner;
    let v = &a6 * (&a6 * c(12) + &a4 * c(10) + &a2 * c(8)) + &a6 * c(6) + &a4 * c(4) + &a2 * c(2) + &ident * c(0);

    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.lu().solve(&p).ok_or(Error::NonFinite("singular Padé denominator"))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    if !is_finite(&r) {
        return Err(Error::NonFinite("expm result"));
    }
    Ok(r)
}

/// Which scalars may multiply basis vectors when spanning.
///
/// Lie algebras of anti-Hermitian matrices and spans of Hermitian operators
/// are real vector spaces; projecting with the real part of the HS product
/// keeps roundoff from leaking in imaginary multiples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Real,
    Complex,
}

/// Incrementally grown HS-orthonormal basis (modified Gram–Schmidt with one
/// re-orthogonalization pass).
#[derive(Debug, Clone)]
pub struct OrthoBasis {
    field: Field,
    elems: Vec<CMatrix>,
}

impl OrthoBasis {
    pub fn new(field: Field) -> Self {
        Self { field, elems: Vec::new() }
    }

    /// Wraps elements that are already HS-orthonormal.
    pub(crate) fn from_orthonormal(field: Field, elems: Vec<CMatrix>) -> Self {
        Self { field, elems }
    }

    pub fn elements(&self) -> &[CMatrix] {
        &self.elems
    }

    pub fn into_elements(self) -> Vec<CMatrix> {
        self.elems
    }

    pub fn len(&self) -> usize {
        self.elems.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elems.is_empty()
    }

    fn coefficient(&self, q: &CMatrix, v: &CMatrix) -> C64 {
        let c = hs_inner_unchecked(q, v);
        match self.field {
            Field::Real => C64::new(c.re, 0.0),
            Field::Complex => c,
        }
    }

    /// Component of `m` orthogonal to the current span.
    pub fn residual(&self, m: &CMatrix) -> CMatrix {
        let mut v = m.clone();
        for _ in 0..2 {
            for q in &self.elems {
                let c = self.coefficient(q, &v);
                v.zip_apply(q, |x, y| *x -= c * y);
            }
        }
        v
    }

    /// Appends the normalized residual of `m` if its norm exceeds `threshold`.
    /// Returns whether the span grew.
    pub fn insert(&mut self, m: &CMatrix, threshold: f64) -> bool {
        if let Some(first) = self.elems.first() {
            if first.shape() != m.shape() {
                return false;
            }
        }
        let v = self.residual(m);
        let norm = hs_norm(&v);
        if norm > threshold && norm > 0.0 {
            self.elems.push(v / C64::new(norm, 0.0));
            true
        } else {
            false
        }
    }

    /// Squared HS norm of the orthogonal projection of `m` onto the span.
    pub fn projection_norm2(&self, m: &CMatrix) -> f64 {
        self.elems.iter().map(|q| hs_inner_unchecked(q, m).norm_sqr()).sum()
    }

    /// Whether `m` lies in the span within `tol` relative to its norm.
    pub fn contains(&self, m: &CMatrix, tol: f64) -> bool {
        hs_norm(&self.residual(m)) <= tol * hs_norm(m).max(f64::MIN_POSITIVE)
    }
}

/// HS-orthonormal basis of the complex span of `set`.
///
/// A vector is dropped when its residual norm is below `tol` times the
/// largest input norm.
pub fn orthonormalize(set: &[CMatrix], tol: f64) -> Vec<CMatrix> {
    orthonormalize_over(set, tol, Field::Complex)
}

pub fn orthonormalize_over(set: &[CMatrix], tol: f64, field: Field) -> Vec<CMatrix> {
    let scale = set.iter().map(hs_norm).fold(0.0, f64::max);
    let mut basis = OrthoBasis::new(field);
    for m in set {
        basis.insert(m, tol * scale);
    }
    basis.into_elements()
}

/// Gram matrix `G_ij = Tr(a_i† a_j)`.
pub fn gram(set: &[CMatrix]) -> CMatrix {
    CMatrix::from_fn(set.len(), set.len(), |i, j| hs_inner_unchecked(&set[i], &set[j]))
}

/// Numerical rank of a Hermitian positive semidefinite matrix.
pub fn psd_rank(g: &CMatrix, tol: f64) -> usize {
    if g.nrows() == 0 {
        return 0;
    }
    let (vals, _) = eigh(g);
    let max = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    vals.iter().filter(|v| **v > tol * max).count()
}

pub fn state_norm(psi: &StateVector) -> f64 {
    psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `|ψ⟩⟨ψ|`.
pub fn density(psi: &StateVector) -> CMatrix {
    psi * psi.adjoint()
}

/// `⟨ψ|A|ψ⟩`.
pub fn expectation(psi: &StateVector, a: &CMatrix) -> C64 {
    (psi.adjoint() * (a * psi))[(0, 0)]
}
