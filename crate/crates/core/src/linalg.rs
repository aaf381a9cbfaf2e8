//! Small linear-algebra helpers shared by the variational family and the
//! update kernels.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Covariance structure of a Gaussian variational factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CovStructure {
    Full,
    Diagonal,
}

/// A symmetric second-order quantity stored according to a [`CovStructure`]:
/// a dense symmetric matrix, or the diagonal of a diagonal matrix.
///
/// Used for precisions, the second natural parameter, the `m2` score block and
/// the matching gradient/coefficient blocks.
#[derive(Debug, Clone, PartialEq)]
pub enum SymBlock {
    Full(DMatrix<f64>),
    Diagonal(DVector<f64>),
}

impl SymBlock {
    pub fn zeros(structure: CovStructure, d: usize) -> Self {
        match structure {
            CovStructure::Full => SymBlock::Full(DMatrix::zeros(d, d)),
            CovStructure::Diagonal => SymBlock::Diagonal(DVector::zeros(d)),
        }
    }

    /// `value * I` in the requested storage.
    pub fn scaled_identity(structure: CovStructure, d: usize, value: f64) -> Self {
        match structure {
            CovStructure::Full => SymBlock::Full(DMatrix::identity(d, d) * value),
            CovStructure::Diagonal => SymBlock::Diagonal(DVector::from_element(d, value)),
        }
    }

    pub fn structure(&self) -> CovStructure {
        match self {
            SymBlock::Full(_) => CovStructure::Full,
            SymBlock::Diagonal(_) => CovStructure::Diagonal,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            SymBlock::Full(m) => m.nrows(),
            SymBlock::Diagonal(v) => v.len(),
        }
    }

    /// Number of stored scalars (`d*d` or `d`).
    pub fn flat_len(&self) -> usize {
        match self {
            SymBlock::Full(m) => m.len(),
            SymBlock::Diagonal(v) => v.len(),
        }
    }

    pub fn scale(&self, a: f64) -> Self {
        self.map(|x| a * x)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        match self {
            SymBlock::Full(m) => SymBlock::Full(m.map(f)),
            SymBlock::Diagonal(v) => SymBlock::Diagonal(v.map(f)),
        }
    }

    /// `a * self + b * other`. Panics on mismatched storage.
    pub fn lin_comb(&self, a: f64, other: &SymBlock, b: f64) -> Self {
        match (self, other) {
            (SymBlock::Full(x), SymBlock::Full(y)) => SymBlock::Full(x * a + y * b),
            (SymBlock::Diagonal(x), SymBlock::Diagonal(y)) => SymBlock::Diagonal(x * a + y * b),
            _ => panic!("SymBlock storage mismatch"),
        }
    }

    pub fn add(&self, other: &SymBlock) -> Self {
        self.lin_comb(1.0, other, 1.0)
    }

    pub fn sub(&self, other: &SymBlock) -> Self {
        self.lin_comb(1.0, other, -1.0)
    }

    /// Elementwise product in the stored representation.
    pub fn hadamard(&self, other: &SymBlock) -> Self {
        match (self, other) {
            (SymBlock::Full(x), SymBlock::Full(y)) => SymBlock::Full(x.component_mul(y)),
            (SymBlock::Diagonal(x), SymBlock::Diagonal(y)) => {
                SymBlock::Diagonal(x.component_mul(y))
            }
            _ => panic!("SymBlock storage mismatch"),
        }
    }

    /// Row-major flattening (matches the on-disk layout of the CLI).
    pub fn to_flat(&self) -> Vec<f64> {
        match self {
            SymBlock::Full(m) => {
                let d = m.nrows();
                let mut out = Vec::with_capacity(d * d);
                for i in 0..d {
                    for j in 0..d {
                        out.push(m[(i, j)]);
                    }
                }
                out
            }
            SymBlock::Diagonal(v) => v.iter().copied().collect(),
        }
    }

    pub fn from_flat(structure: CovStructure, d: usize, data: &[f64]) -> Result<Self> {
        match structure {
            CovStructure::Full => {
                if data.len() != d * d {
                    return Err(Error::DimMismatch { expected: d * d, got: data.len() });
                }
                Ok(SymBlock::Full(DMatrix::from_row_slice(d, d, data)))
            }
            CovStructure::Diagonal => {
                if data.len() != d {
                    return Err(Error::DimMismatch { expected: d, got: data.len() });
                }
                Ok(SymBlock::Diagonal(DVector::from_column_slice(data)))
            }
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match self {
            SymBlock::Full(m) => m.clone(),
            SymBlock::Diagonal(v) => DMatrix::from_diagonal(v),
        }
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        match self {
            SymBlock::Full(m) => m * x,
            SymBlock::Diagonal(v) => v.component_mul(x),
        }
    }

    pub fn diagonal(&self) -> DVector<f64> {
        match self {
            SymBlock::Full(m) => m.diagonal(),
            SymBlock::Diagonal(v) => v.clone(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.to_flat().iter().fold(0.0, |acc, x| acc.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &SymBlock) -> f64 {
        self.sub(other).max_abs()
    }

    pub fn is_finite(&self) -> bool {
        self.to_flat().iter().all(|x| x.is_finite())
    }

    pub fn symmetrized(self) -> Self {
        match self {
            SymBlock::Full(m) => SymBlock::Full(symmetrize(m)),
            d => d,
        }
    }
}

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

/// Cholesky factorization of a symmetric matrix, `NotSpd` on failure.
pub fn cholesky(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if m.iter().any(|x| !x.is_finite()) {
        return Err(Error::NotSpd);
    }
    Cholesky::new(m.clone()).ok_or(Error::NotSpd)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |acc, &x| acc.min(x))
}

pub fn max_abs_diff_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}
