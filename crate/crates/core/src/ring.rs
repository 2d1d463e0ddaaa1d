//! Values of a quantity of interest: real scalars, or symmetric matrices
//! under elementwise (Hadamard) addition and multiplication.
//!
//! The Hadamard ring has the all-ones matrix as its multiplicative identity.
//! There is no division anywhere in the decomposition, so no inverse is offered.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use thiserror::Error;

/// Operations the lattice transforms and incidence algebra need.
///
/// Implementations may panic when combining values of different shapes;
/// tables validate shapes on construction so the transforms never do.
pub trait Ring: Clone + PartialEq + fmt::Debug {
    fn add_assign_ref(&mut self, rhs: &Self);
    fn sub_assign_ref(&mut self, rhs: &Self);
    fn mul_ref(&self, rhs: &Self) -> Self;
    fn zero_like(&self) -> Self;
    fn one_like(&self) -> Self;

    fn same_shape(&self, _other: &Self) -> bool {
        true
    }
}

impl Ring for f64 {
    fn add_assign_ref(&mut self, rhs: &Self) {
        *self += rhs;
    }
    fn sub_assign_ref(&mut self, rhs: &Self) {
        *self -= rhs;
    }
    fn mul_ref(&self, rhs: &Self) -> Self {
        self * rhs
    }
    fn zero_like(&self) -> Self {
        0.0
    }
    fn one_like(&self) -> Self {
        1.0
    }
}

impl Ring for i64 {
    fn add_assign_ref(&mut self, rhs: &Self) {
        *self += rhs;
    }
    fn sub_assign_ref(&mut self, rhs: &Self) {
        *self -= rhs;
    }
    fn mul_ref(&self, rhs: &Self) -> Self {
        self * rhs
    }
    fn zero_like(&self) -> Self {
        0
    }
    fn one_like(&self) -> Self {
        1
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RingError {
    #[error("cannot combine {0} with {1}")]
    VariantMismatch(&'static str, &'static str),
    #[error("matrix sizes differ ({0}×{0} vs {1}×{1})")]
    ShapeMismatch(usize, usize),
    #[error("matrix is not square")]
    NotSquare,
    #[error("matrix is not symmetric at ({0}, {1})")]
    NotSymmetric(usize, usize),
    #[error("matrix must be at least 1×1")]
    Empty,
}

/// A symmetric `k×k` matrix stored as its upper triangle, row-major.
#[derive(Clone, PartialEq)]
pub struct SymMatrix {
    k: usize,
    upper: Vec<f64>,
}

impl fmt::Debug for SymMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.to_rows()).finish()
    }
}

#[inline]
fn tri_index(k: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * k - i * (i + 1) / 2 + j
}

impl SymMatrix {
    pub fn zeros(k: usize) -> Self {
        Self {
            k,
            upper: vec![0.0; k * (k + 1) / 2],
        }
    }

    pub fn filled(k: usize, value: f64) -> Self {
        Self {
            k,
            upper: vec![value; k * (k + 1) / 2],
        }
    }

    pub fn identity(k: usize) -> Self {
        Self::from_fn(k, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    /// `f` is evaluated on the upper triangle only.
    pub fn from_fn(k: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut upper = Vec::with_capacity(k * (k + 1) / 2);
        for i in 0..k {
            for j in i..k {
                upper.push(f(i, j));
            }
        }
        Self { k, upper }
    }

    /// Requires exact symmetry.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, RingError> {
        let k = rows.len();
        if k == 0 {
            return Err(RingError::Empty);
        }
        if rows.iter().any(|r| r.len() != k) {
            return Err(RingError::NotSquare);
        }
        for (i, row) in rows.iter().enumerate() {
            if let Some(j) = (i + 1..k).find(|&j| row[j] != rows[j][i]) {
                return Err(RingError::NotSymmetric(i, j));
            }
        }
        Ok(Self::from_fn(k, |i, j| rows[i][j]))
    }

    pub fn dim(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.upper[tri_index(self.k, i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        let idx = tri_index(self.k, i, j);
        self.upper[idx] = value;
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.k).map(|i| self.get(i, i)).collect()
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.k)
            .map(|i| (0..self.k).map(|j| self.get(i, j)).collect())
            .collect()
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.k, self.k, |i, j| self.get(i, j))
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            k: self.k,
            upper: self.upper.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.upper.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// An element of one of the two supported commutative rings with identity.
#[derive(Clone, Debug, PartialEq)]
pub enum RingValue {
    Scalar(f64),
    HadamardMatrix(SymMatrix),
}

impl RingValue {
    fn kind(&self) -> &'static str {
        match self {
            RingValue::Scalar(_) => "scalar",
            RingValue::HadamardMatrix(_) => "matrix",
        }
    }

    fn check_compatible(&self, other: &RingValue) -> Result<(), RingError> {
        match (self, other) {
            (RingValue::Scalar(_), RingValue::Scalar(_)) => Ok(()),
            (RingValue::HadamardMatrix(a), RingValue::HadamardMatrix(b)) if a.k == b.k => Ok(()),
            (RingValue::HadamardMatrix(a), RingValue::HadamardMatrix(b)) => Err(RingError::ShapeMismatch(a.k, b.k)),
            _ => Err(RingError::VariantMismatch(self.kind(), other.kind())),
        }
    }

    /// Elementwise sum.
    pub fn ring_add(&self, other: &RingValue) -> Result<RingValue, RingError> {
        self.check_compatible(other)?;
        let mut out = self.clone();
        out.add_assign_ref(other);
        Ok(out)
    }

    /// Ordinary product for scalars, Hadamard product for matrices.
    pub fn ring_mul(&self, other: &RingValue) -> Result<RingValue, RingError> {
        self.check_compatible(other)?;
        Ok(self.mul_ref(other))
    }

    pub fn as_scalar(&self) -> Option<f64> {
        match self {
            RingValue::Scalar(v) => Some(*v),
            RingValue::HadamardMatrix(_) => None,
        }
    }

    pub fn as_matrix(&self) -> Option<&SymMatrix> {
        match self {
            RingValue::Scalar(_) => None,
            RingValue::HadamardMatrix(m) => Some(m),
        }
    }

    /// Applies `f` to every stored entry.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> RingValue {
        match self {
            RingValue::Scalar(v) => RingValue::Scalar(f(*v)),
            RingValue::HadamardMatrix(m) => RingValue::HadamardMatrix(m.map(f)),
        }
    }

    pub fn max_abs(&self) -> f64 {
        match self {
            RingValue::Scalar(v) => v.abs(),
            RingValue::HadamardMatrix(m) => m.max_abs(),
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            RingValue::Scalar(v) => v.is_finite(),
            RingValue::HadamardMatrix(m) => m.upper.iter().all(|v| v.is_finite()),
        }
    }
}

impl Ring for RingValue {
    fn add_assign_ref(&mut self, rhs: &Self) {
        match (self, rhs) {
            (RingValue::Scalar(a), RingValue::Scalar(b)) => *a += b,
            (RingValue::HadamardMatrix(a), RingValue::HadamardMatrix(b)) => {
                assert_eq!(a.k, b.k, "matrix shape mismatch");
                a.upper.iter_mut().zip(&b.upper).for_each(|(x, y)| *x += y);
            }
            (a, b) => panic!("cannot add {} and {}", a.kind(), b.kind()),
        }
    }

    fn sub_assign_ref(&mut self, rhs: &Self) {
        match (self, rhs) {
            (RingValue::Scalar(a), RingValue::Scalar(b)) => *a -= b,
            (RingValue::HadamardMatrix(a), RingValue::HadamardMatrix(b)) => {
                assert_eq!(a.k, b.k, "matrix shape mismatch");
                a.upper.iter_mut().zip(&b.upper).for_each(|(x, y)| *x -= y);
            }
            (a, b) => panic!("cannot subtract {} from {}", b.kind(), a.kind()),
        }
    }

    fn mul_ref(&self, rhs: &Self) -> Self {
        match (self, rhs) {
            (RingValue::Scalar(a), RingValue::Scalar(b)) => RingValue::Scalar(a * b),
            (RingValue::HadamardMatrix(a), RingValue::HadamardMatrix(b)) => {
                assert_eq!(a.k, b.k, "matrix shape mismatch");
                RingValue::HadamardMatrix(SymMatrix {
                    k: a.k,
                    upper: a.upper.iter().zip(&b.upper).map(|(x, y)| x * y).collect(),
                })
            }
            (a, b) => panic!("cannot multiply {} and {}", a.kind(), b.kind()),
        }
    }

    fn zero_like(&self) -> Self {
        match self {
            RingValue::Scalar(_) => RingValue::Scalar(0.0),
            RingValue::HadamardMatrix(m) => RingValue::HadamardMatrix(SymMatrix::zeros(m.k)),
        }
    }

    fn one_like(&self) -> Self {
        match self {
            RingValue::Scalar(_) => RingValue::Scalar(1.0),
            RingValue::HadamardMatrix(m) => RingValue::HadamardMatrix(SymMatrix::filled(m.k, 1.0)),
        }
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.check_compatible(other).is_ok()
    }
}

/// Why a matrix is not in the Hadamard ring of same-sign semidefinite matrices.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DkRejection {
    #[error("diagonal entry {index} is zero (|{value}| ≤ tolerance)")]
    ZeroDiagonal { index: usize, value: f64 },
    #[error("diagonal entries {first} and {second} have opposite signs")]
    MixedDiagonalSigns { first: usize, second: usize },
    #[error("matrix is indefinite (eigenvalues span [{min_eigenvalue}, {max_eigenvalue}])")]
    Indefinite { min_eigenvalue: f64, max_eigenvalue: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DkMembership {
    pub matrix: SymMatrix,
    /// `+1` for positive, `-1` for negative semidefinite.
    pub diag_sign: i8,
    pub eigenvalues: Vec<f64>,
}

/// Default eigenvalue tolerance, relative to the spectral norm.
pub const DK_TOLERANCE: f64 = 1e-8;

/// Checks same-sign nonzero diagonal and semidefiniteness.
///
/// Diagonal entries count as zero when `|m_ii| ≤ tol`; eigenvalues are
/// compared against `tol · ‖m‖₂`.
pub fn check_dk_membership(m: &SymMatrix, tol: f64) -> Result<DkMembership, DkRejection> {
    let diag = m.diagonal();
    if let Some((index, &value)) = diag.iter().enumerate().find(|(_, v)| v.abs() <= tol) {
        return Err(DkRejection::ZeroDiagonal { index, value });
    }
    let first_sign = diag[0].signum();
    if let Some(second) = diag.iter().position(|v| v.signum() != first_sign) {
        return Err(DkRejection::MixedDiagonalSigns { first: 0, second });
    }
    let eigenvalues: Vec<f64> = SymmetricEigen::new(m.to_dmatrix())
        .eigenvalues
        .iter()
        .copied()
        .collect();
    let norm = eigenvalues.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let slack = tol * norm;
    let semidefinite = if first_sign > 0.0 { min >= -slack } else { max <= slack };
    if !semidefinite {
        return Err(DkRejection::Indefinite {
            min_eigenvalue: min,
            max_eigenvalue: max,
        });
    }
    Ok(DkMembership {
        matrix: m.clone(),
        diag_sign: first_sign as i8,
        eigenvalues,
    })
}
