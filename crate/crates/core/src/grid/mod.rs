//! Uniform periodic grids on the unit torus, centered difference operators,
//! quadrature, and the Krylov solvers used by the Newton steps.
//!
//! Points are indexed lexicographically with the first axis varying slowest:
//! the point with integer coordinates `(i_1, ..., i_n)` has index
//! `i_1 N^{n-1} + ... + i_n` and position `(i_1 / N, ..., i_n / N)`.

mod field_io;
pub mod krylov;
pub mod matrix;
pub mod spectral;

use serde::Serialize;
use thiserror::Error;

pub use field_io::{read_field, read_field_file, write_field, write_field_file, FIELD_HEADER_TAG};
pub use krylov::{gmres, solve_mean_zero_linear, KrylovOptions, KrylovOutcome, LinearMap, LinearSolveError};
pub use matrix::{MatrixError, SymMat, MAX_DIM};

#[derive(Debug, Error)]
pub enum GridError {
    #[error("grid dimension {0} is unsupported (expected 1, 2 or 3)")]
    UnsupportedDimension(usize),
    #[error("points per axis must be even and at least 4, got {0}")]
    BadResolution(usize),
    #[error("field has {got} values but the grid has {expected} points")]
    LengthMismatch { expected: usize, got: usize },
    #[error("field value at point {index} is not finite ({value})")]
    NonFinite { index: usize, value: f64 },
    #[error("malformed field file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An `n`-dimensional uniform periodic lattice with `N` points per axis on `[0,1)^n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct PeriodicGrid {
    dim: usize,
    points_per_axis: usize,
}

impl PeriodicGrid {
    pub fn new(dim: usize, points_per_axis: usize) -> Result<Self, GridError> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(GridError::UnsupportedDimension(dim));
        }
        if points_per_axis < 4 || points_per_axis % 2 != 0 {
            return Err(GridError::BadResolution(points_per_axis));
        }
        Ok(PeriodicGrid { dim, points_per_axis })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    /// Total number of points `N^n`.
    #[inline]
    pub fn len(&self) -> usize {
        self.points_per_axis.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Grid spacing `h = 1/N`.
    #[inline]
    pub fn spacing(&self) -> f64 {
        1.0 / self.points_per_axis as f64
    }

    /// Quadrature weight `h^n = 1/P`.
    #[inline]
    pub fn cell_volume(&self) -> f64 {
        1.0 / self.len() as f64
    }

    /// `1/h^2 = N^2`, exact in floating point.
    #[inline]
    pub(crate) fn inv_h2(&self) -> f64 {
        (self.points_per_axis * self.points_per_axis) as f64
    }

    #[inline]
    pub(crate) fn stride(&self, axis: usize) -> usize {
        self.points_per_axis.pow((self.dim - 1 - axis) as u32)
    }

    /// Integer coordinate of point `p` along `axis`.
    #[inline]
    pub fn coordinate_index(&self, p: usize, axis: usize) -> usize {
        (p / self.stride(axis)) % self.points_per_axis
    }

    /// Position of point `p` in `[0,1)^n`; unused trailing entries are zero.
    pub fn position(&self, p: usize) -> [f64; MAX_DIM] {
        let mut x = [0.0; MAX_DIM];
        for (axis, xa) in x.iter_mut().enumerate().take(self.dim) {
            *xa = self.coordinate_index(p, axis) as f64 / self.points_per_axis as f64;
        }
        x
    }

    /// Index of the neighbour of `p` displaced by `delta` cells along `axis`, with wrap-around.
    #[inline]
    pub fn shift(&self, p: usize, axis: usize, delta: isize) -> usize {
        let n = self.points_per_axis as isize;
        let s = self.stride(axis);
        let i = ((p / s) % self.points_per_axis) as isize;
        let j = (i + delta).rem_euclid(n);
        (p as isize + (j - i) * s as isize) as usize
    }
}

/// Real values at every grid point; always finite.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalarField {
    #[serde(skip)]
    grid: PeriodicGrid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: PeriodicGrid, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::LengthMismatch { expected: grid.len(), got: values.len() });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(GridError::NonFinite { index, value });
        }
        Ok(ScalarField { grid, values })
    }

    pub fn zeros(grid: PeriodicGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: PeriodicGrid, c: f64) -> Self {
        assert!(c.is_finite());
        ScalarField { grid, values: vec![c; grid.len()] }
    }

    /// Samples `f` at every grid position.
    pub fn from_fn(grid: PeriodicGrid, f: impl Fn(&[f64]) -> f64) -> Result<Self, GridError> {
        let values = (0..grid.len())
            .map(|p| {
                let x = grid.position(p);
                f(&x[..grid.dim()])
            })
            .collect();
        Self::new(grid, values)
    }

    pub(crate) fn from_values_unchecked(grid: PeriodicGrid, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        ScalarField { grid, values }
    }

    #[inline]
    pub fn grid(&self) -> PeriodicGrid {
        self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn mean(&self) -> f64 {
        mean(&self.values)
    }

    /// `max - min`.
    pub fn oscillation(&self) -> f64 {
        self.max() - self.min()
    }

    pub fn sup_norm(&self) -> f64 {
        sup_norm(&self.values)
    }

    pub fn shifted(&self, c: f64) -> ScalarField {
        let values = self.values.iter().map(|v| v + c).collect();
        ScalarField { grid: self.grid, values }
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &ScalarField, b: f64) -> ScalarField {
        assert_eq!(self.grid, other.grid, "fields live on different grids");
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        ScalarField { grid: self.grid, values }
    }

    /// Largest pointwise difference to `other`.
    pub fn sup_distance(&self, other: &ScalarField) -> f64 {
        assert_eq!(self.grid, other.grid, "fields live on different grids");
        self.values.iter().zip(&other.values).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }
}

/// Per-point symmetric matrices of second centered differences.
#[derive(Clone, Debug, PartialEq)]
pub struct HessianField {
    grid: PeriodicGrid,
    mats: Vec<SymMat>,
}

impl HessianField {
    #[inline]
    pub fn grid(&self) -> PeriodicGrid {
        self.grid
    }

    #[inline]
    pub fn at(&self, p: usize) -> &SymMat {
        &self.mats[p]
    }

    pub fn matrices(&self) -> &[SymMat] {
        &self.mats
    }

    /// Pointwise trace, i.e. the discrete Laplacian.
    pub fn trace(&self) -> ScalarField {
        ScalarField::from_values_unchecked(self.grid, self.mats.iter().map(SymMat::trace).collect())
    }

    /// Pointwise `background + hessian`.
    pub fn offset_by(&self, background: &SymMat) -> Vec<SymMat> {
        self.mats.iter().map(|h| background.add(h)).collect()
    }
}

/// Centered second differences with periodic wrap; mixed entries are nested
/// centered first differences, stored once so the matrix is exactly symmetric.
pub fn hessian(psi: &ScalarField) -> HessianField {
    let grid = psi.grid();
    HessianField { grid, mats: hessian_of_values(grid, psi.values()) }
}

pub(crate) fn hessian_of_values(grid: PeriodicGrid, v: &[f64]) -> Vec<SymMat> {
    let mut out = vec![SymMat::zeros(grid.dim()); grid.len()];
    hessian_into(grid, v, &mut out);
    out
}

pub(crate) fn hessian_into(grid: PeriodicGrid, v: &[f64], out: &mut [SymMat]) {
    let n = grid.dim();
    let s = grid.inv_h2();
    let q = 0.25 * s;
    for (p, m) in out.iter_mut().enumerate() {
        for a in 0..n {
            let up = grid.shift(p, a, 1);
            let dn = grid.shift(p, a, -1);
            m.set(a, a, (v[up] - 2.0 * v[p] + v[dn]) * s);
            for b in (a + 1)..n {
                let pp = grid.shift(up, b, 1);
                let pm = grid.shift(up, b, -1);
                let mp = grid.shift(dn, b, 1);
                let mm = grid.shift(dn, b, -1);
                m.set(a, b, (v[pp] - v[pm] - v[mp] + v[mm]) * q);
            }
        }
    }
}

/// Periodic trapezoidal rule `h^n * sum_p u_p`, summed in index order.
pub fn integrate(u: &ScalarField) -> f64 {
    integrate_values(u.grid(), u.values())
}

pub(crate) fn integrate_values(grid: PeriodicGrid, u: &[f64]) -> f64 {
    sum(u) * grid.cell_volume()
}

#[inline]
pub(crate) fn sum(u: &[f64]) -> f64 {
    u.iter().fold(0.0, |acc, v| acc + v)
}

#[inline]
pub(crate) fn mean(u: &[f64]) -> f64 {
    sum(u) / u.len() as f64
}

#[inline]
pub(crate) fn sup_norm(u: &[f64]) -> f64 {
    u.iter().fold(0.0, |m, v| m.max(v.abs()))
}
