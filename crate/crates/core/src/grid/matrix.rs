//! Small dense symmetric matrices (dimension 1 to 3) evaluated pointwise on a grid.

use nalgebra::DMatrix;
use thiserror::Error;

/// Largest supported real dimension.
pub const MAX_DIM: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MatrixError {
    #[error("matrix dimension {0} is outside 1..={MAX_DIM}")]
    UnsupportedDimension(usize),
    #[error("expected {expected} entries for an {dim}x{dim} matrix, got {got}")]
    WrongLength { dim: usize, expected: usize, got: usize },
    #[error("matrix is not symmetric: entry ({row},{col}) = {upper} but ({col},{row}) = {lower}")]
    NotSymmetric { row: usize, col: usize, upper: f64, lower: f64 },
    #[error("matrix has a non-finite entry")]
    NonFinite,
}

/// Symmetric `n x n` matrix stored densely in a fixed 3x3 buffer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymMat {
    dim: usize,
    a: [f64; 9],
}

impl SymMat {
    pub fn zeros(dim: usize) -> Self {
        assert!((1..=MAX_DIM).contains(&dim), "dimension {dim} unsupported");
        SymMat { dim, a: [0.0; 9] }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scalar(dim, 1.0)
    }

    pub fn scalar(dim: usize, s: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.a[3 * i + i] = s;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.a[3 * i + i] = d;
        }
        m
    }

    /// Builds a matrix from row-major entries. Off-diagonal pairs must agree to
    /// within `1e-12` relative; the stored matrix is the exact symmetrization.
    pub fn from_row_major(dim: usize, entries: &[f64]) -> Result<Self, MatrixError> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(MatrixError::UnsupportedDimension(dim));
        }
        if entries.len() != dim * dim {
            return Err(MatrixError::WrongLength { dim, expected: dim * dim, got: entries.len() });
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(MatrixError::NonFinite);
        }
        let scale = entries.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                let upper = entries[i * dim + j];
                let lower = entries[j * dim + i];
                if (upper - lower).abs() > 1e-12 * scale {
                    return Err(MatrixError::NotSymmetric { row: i, col: j, upper, lower });
                }
                m.set(i, j, 0.5 * (upper + lower));
            }
        }
        Ok(m)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[3 * i + j]
    }

    /// Sets entries `(i,j)` and `(j,i)` together.
    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.a[3 * i + j] = v;
        self.a[3 * j + i] = v;
    }

    pub fn to_row_major(&self) -> Vec<f64> {
        let n = self.dim;
        (0..n * n).map(|k| self.get(k / n, k % n)).collect()
    }

    pub fn add(&self, other: &SymMat) -> SymMat {
        debug_assert_eq!(self.dim, other.dim);
        let mut out = *self;
        for (o, b) in out.a.iter_mut().zip(other.a.iter()) {
            *o += b;
        }
        out
    }

    pub fn scale(&self, s: f64) -> SymMat {
        let mut out = *self;
        for o in out.a.iter_mut() {
            *o *= s;
        }
        out
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// Frobenius pairing `sum_ab self_ab * other_ab`.
    pub fn contract(&self, other: &SymMat) -> f64 {
        let n = self.dim;
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += self.get(i, j) * other.get(i, j);
            }
        }
        s
    }

    pub fn det(&self) -> f64 {
        let a = &self.a;
        match self.dim {
            1 => a[0],
            2 => a[0] * a[4] - a[1] * a[3],
            _ => {
                a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6])
                    + a[2] * (a[3] * a[7] - a[4] * a[6])
            }
        }
    }

    /// Inverse by cofactors; `None` when the determinant vanishes.
    pub fn inverse(&self) -> Option<SymMat> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        let a = &self.a;
        let mut inv = SymMat::zeros(self.dim);
        match self.dim {
            1 => inv.a[0] = 1.0 / a[0],
            2 => {
                inv.set(0, 0, a[4] / d);
                inv.set(1, 1, a[0] / d);
                inv.set(0, 1, -a[1] / d);
            }
            _ => {
                inv.set(0, 0, (a[4] * a[8] - a[5] * a[7]) / d);
                inv.set(0, 1, (a[2] * a[7] - a[1] * a[8]) / d);
                inv.set(0, 2, (a[1] * a[5] - a[2] * a[4]) / d);
                inv.set(1, 1, (a[0] * a[8] - a[2] * a[6]) / d);
                inv.set(1, 2, (a[2] * a[3] - a[0] * a[5]) / d);
                inv.set(2, 2, (a[0] * a[4] - a[1] * a[3]) / d);
            }
        }
        Some(inv)
    }

    /// Sylvester's criterion on the leading principal minors.
    pub fn is_positive_definite(&self) -> bool {
        let a = &self.a;
        let m1 = a[0];
        if !(m1 > 0.0) {
            return false;
        }
        if self.dim == 1 {
            return true;
        }
        let m2 = a[0] * a[4] - a[1] * a[3];
        if !(m2 > 0.0) {
            return false;
        }
        self.dim == 2 || self.det() > 0.0
    }

    fn to_dmatrix(self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut ev: Vec<f64> = self.to_dmatrix().symmetric_eigenvalues().iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    /// Smallest and largest eigenvalue of `base^{-1} self` for positive definite
    /// `base`, computed as the spectrum of `L^{-1} self L^{-T}` with `base = L L^T`.
    pub fn relative_eigen_range(&self, base: &SymMat) -> Option<(f64, f64)> {
        if self.dim == 1 {
            let r = self.a[0] / base.a[0];
            return Some((r, r));
        }
        let chol = base.to_dmatrix().cholesky()?;
        let l = chol.l();
        let linv = l.clone().try_inverse()?;
        let sym = &linv * self.to_dmatrix() * linv.transpose();
        let sym = (&sym + sym.transpose()) * 0.5;
        let ev = sym.symmetric_eigenvalues();
        Some((ev.min(), ev.max()))
    }
}
