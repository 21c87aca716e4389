use std::fmt;

use super::HermitianOperator;
use crate::error::{Error, Result};
use crate::linop::{self, CMatrix, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PauliLetter {
    I,
    X,
    Y,
    Z,
}

impl PauliLetter {
    pub fn from_char(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'I' | '.' | '_' => Some(Self::I),
            'X' => Some(Self::X),
            'Y' => Some(Self::Y),
            'Z' => Some(Self::Z),
            _ => None,
        }
    }

    pub fn as_char(self) -> char {
        match self {
            Self::I => 'I',
            Self::X => 'X',
            Self::Y => 'Y',
            Self::Z => 'Z',
        }
    }

    pub fn matrix(self) -> CMatrix {
        match self {
            Self::I => linop::identity(2),
            Self::X => linop::sigma_x(),
            Self::Y => linop::sigma_y(),
            Self::Z => linop::sigma_z(),
        }
    }
}

/// Real multiple of a tensor product of single-site Paulis. Site 1 is the
/// leftmost letter and the most significant Kronecker factor.
#[derive(Debug, Clone, PartialEq)]
pub struct PauliString {
    pub letters: Vec<PauliLetter>,
    pub coeff: f64,
}

impl PauliString {
    /// Parses `"XZZY"`-style site strings; `.` and `_` are accepted for `I`.
    pub fn parse(n: usize, spec: &str) -> Result<Self> {
        let letters = spec
            .chars()
            .map(|c| {
                PauliLetter::from_char(c).ok_or_else(|| Error::InvalidPauli {
                    spec: spec.to_string(),
                    reason: format!("invalid letter {c:?}"),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if letters.len() != n {
            return Err(Error::InvalidPauli {
                spec: spec.to_string(),
                reason: format!("expected {n} sites, got {}", letters.len()),
            });
        }
        if n == 0 {
            return Err(Error::InvalidPauli { spec: spec.to_string(), reason: "no sites".into() });
        }
        Ok(Self { letters, coeff: 1.0 })
    }

    pub fn with_coeff(mut self, coeff: f64) -> Self {
        self.coeff = coeff;
        self
    }

    pub fn n(&self) -> usize {
        self.letters.len()
    }

    pub fn label(&self) -> String {
        self.letters.iter().map(|l| l.as_char()).collect()
    }

    pub fn to_matrix(&self) -> Result<CMatrix> {
        if !self.coeff.is_finite() {
            return Err(Error::NonFinite("Pauli coefficient"));
        }
        let mut m = CMatrix::from_element(1, 1, C64::new(self.coeff, 0.0));
        for l in &self.letters {
            m = linop::kron(&m, &l.matrix())?;
        }
        Ok(m)
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}*{}", self.coeff, self.label())
    }
}

/// Kronecker realization of a single Pauli string.
pub fn build_pauli(n: usize, spec: &str) -> Result<HermitianOperator> {
    HermitianOperator::from_paulis(vec![PauliString::parse(n, spec)?])
}

/// `σ_α` on 0-based `site` of an `n`-qubit register.
pub fn site_pauli(n: usize, site: usize, letter: PauliLetter) -> PauliString {
    let mut letters = vec![PauliLetter::I; n];
    letters[site] = letter;
    PauliString { letters, coeff: 1.0 }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linop::{identity, kron, sigma_x, sigma_y, sigma_z};

    #[test]
    fn two_site_strings() {
        let zz = build_pauli(2, "ZZ").unwrap();
        assert_eq!(zz.matrix(), &kron(&sigma_z(), &sigma_z()).unwrap());
        let xi = build_pauli(2, "XI").unwrap();
        assert_eq!(xi.matrix(), &kron(&sigma_x(), &identity(2)).unwrap());
    }

    #[test]
    fn four_site_string_matches_kron_chain() {
        let op = build_pauli(4, "XZZY").unwrap();
        let oracle = kron(&kron(&kron(&sigma_x(), &sigma_z()).unwrap(), &sigma_z()).unwrap(), &sigma_y()).unwrap();
        assert_eq!(op.matrix(), &oracle);
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(matches!(build_pauli(2, "ZQ"), Err(Error::InvalidPauli { .. })));
        assert!(matches!(build_pauli(3, "ZZ"), Err(Error::InvalidPauli { .. })));
    }

    #[test]
    fn site_helper() {
        let p = site_pauli(3, 1, PauliLetter::Y);
        assert_eq!(p.label(), "IYI");
    }
}
