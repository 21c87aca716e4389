use super::HermitianOperator;
use crate::error::{Error, Result};
use crate::linop::{CMatrix, C64};

/// Spin-`(d−1)/2` irreducible representation of su(2) on `d = 2^n` levels.
///
/// Basis index `i` holds the `J_z` eigenstate with `s = (d−1)/2 − i`, so `J_z`
/// is diagonal with descending entries and `|0…0⟩` is the top state.
#[derive(Debug, Clone)]
pub struct SpinOperators {
    pub dim: usize,
    pub jx: HermitianOperator,
    pub jy: HermitianOperator,
    pub jz: HermitianOperator,
}

impl SpinOperators {
    /// `J_+ = J_x + iJ_y`.
    pub fn raising(&self) -> CMatrix {
        raising(self.dim)
    }
}

fn raising(d: usize) -> CMatrix {
    let j = (d as f64 - 1.0) / 2.0;
    let mut jp = CMatrix::zeros(d, d);
    // J+|s⟩ = sqrt((j − s)(j + 1 + s)) |s+1⟩, and |s+1⟩ sits one index up.
    for i in 1..d {
        let s = j - i as f64;
        jp[(i - 1, i)] = C64::new(((j - s) * (j + 1.0 + s)).sqrt(), 0.0);
    }
    jp
}

pub fn spin_operators(n: usize) -> Result<SpinOperators> {
    if n == 0 || n > crate::linop::DEFAULT_MAX_QUBITS {
        return Err(Error::UnsupportedModel(format!("spin operators need 1..=10 qubits, got {n}")));
    }
    let d = 1usize << n;
    let j = (d as f64 - 1.0) / 2.0;
    let jp = raising(d);
    let jm = jp.adjoint();
    let jx = (&jp + &jm) * C64::new(0.5, 0.0);
    let jy = (&jp - &jm) * C64::new(0.0, -0.5);
    let jz = CMatrix::from_fn(d, d, |r, c| if r == c { C64::new(j - r as f64, 0.0) } else { C64::new(0.0, 0.0) });
    Ok(SpinOperators {
        dim: d,
        jx: HermitianOperator::from_dense(jx)?,
        jy: HermitianOperator::from_dense(jy)?,
        jz: HermitianOperator::from_dense(jz)?,
    })
}
