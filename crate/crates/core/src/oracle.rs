//! Brute-force reference solvers for tiny grids.
//!
//! Everything here works on dense vectors with finite-difference Jacobians and
//! uses only the grid primitives and the functionals; none of the slice
//! solver's linearization is reused.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::functionals::{ding, PotentialTuple};
use crate::grid::{hessian, PeriodicGrid, ScalarField, SymMat};
use crate::monge_ampere::{BackgroundGeometry, Sign};

/// Largest number of grid points per class the oracle accepts.
pub const ORACLE_POINT_CAP: usize = 64;

#[derive(Clone, Debug, PartialEq, Error)]
pub enum OracleError {
    #[error("oracle is limited to {cap} points per class, got {points}")]
    Intractable { points: usize, cap: usize },
    #[error("oracle did not converge (residual {residual:.3e} after {iterations} iterations)")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("descent is only defined for lambda = -1")]
    WrongSign,
    /// In dimension two and up the discrete Ding functional is not invariant under
    /// constant shifts and decreases without bound along them.
    #[error("descent is only available in dimension one, got {0}")]
    UnsupportedDimension(usize),
}

#[derive(Clone, Copy, Debug)]
pub struct OracleOptions {
    pub tol: f64,
    /// Residual accepted when damping can make no further progress.
    pub accept_tol: f64,
    pub max_iter: usize,
    /// Relative finite-difference step, scaled by `1 + |u|`.
    pub fd_step: f64,
    pub cap: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions { tol: 1e-12, accept_tol: 1e-10, max_iter: 100, fd_step: 1e-6, cap: ORACLE_POINT_CAP }
    }
}

fn check_cap(grid: PeriodicGrid, cap: usize) -> Result<(), OracleError> {
    if grid.len() > cap {
        return Err(OracleError::Intractable { points: grid.len(), cap });
    }
    Ok(())
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `log det(A + D^2 psi)` at every point, `None` if some determinant is not positive.
fn log_det(grid: PeriodicGrid, a: &SymMat, psi: &[f64]) -> Option<Vec<f64>> {
    let field = ScalarField::new(grid, psi.to_vec()).ok()?;
    hessian(&field)
        .matrices()
        .iter()
        .map(|h| {
            let d = a.add(h).det();
            (d > 0.0).then(|| d.ln())
        })
        .collect()
}

/// Damped Newton on a square system with a central-difference Jacobian.
fn dense_newton(
    mut u: Vec<f64>,
    residual: impl Fn(&[f64]) -> Option<Vec<f64>>,
    opts: &OracleOptions,
) -> Result<(Vec<f64>, f64, usize), OracleError> {
    let mut r = residual(&u).ok_or(OracleError::NoConvergence { iterations: 0, residual: f64::INFINITY })?;
    let m = u.len();
    for it in 0..opts.max_iter {
        if sup(&r) <= opts.tol {
            return Ok((u, sup(&r), it));
        }
        let mut jac = DMatrix::<f64>::zeros(r.len(), m);
        for col in 0..m {
            let h = opts.fd_step * (1.0 + u[col].abs());
            let mut up = u.clone();
            up[col] += h;
            let mut dn = u.clone();
            dn[col] -= h;
            let (Some(rp), Some(rm)) = (residual(&up), residual(&dn)) else {
                return Err(OracleError::NoConvergence { iterations: it, residual: sup(&r) });
            };
            for row in 0..r.len() {
                jac[(row, col)] = (rp[row] - rm[row]) / (2.0 * h);
            }
        }
        let rhs = DVector::from_iterator(r.len(), r.iter().map(|v| -v));
        let Some(step) = jac.lu().solve(&rhs) else {
            return Err(OracleError::NoConvergence { iterations: it, residual: sup(&r) });
        };
        let norm = l2(&r);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let trial: Vec<f64> = u.iter().zip(step.iter()).map(|(a, b)| a + t * b).collect();
            if let Some(rt) = residual(&trial) {
                if l2(&rt) <= (1.0 - 1e-4 * t) * norm {
                    accepted = Some((trial, rt));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((nu, nr)) => {
                u = nu;
                r = nr;
            }
            None if sup(&r) <= opts.accept_tol => return Ok((u, sup(&r), it)),
            None => return Err(OracleError::NoConvergence { iterations: it, residual: sup(&r) }),
        }
    }
    if sup(&r) <= opts.accept_tol {
        return Ok((u, sup(&r), opts.max_iter));
    }
    Err(OracleError::NoConvergence { iterations: opts.max_iter, residual: sup(&r) })
}

#[derive(Clone, Debug)]
pub struct OracleSolution {
    /// Mean-zero potentials.
    pub tuple: PotentialTuple,
    /// `s_i` with `log det(A_i + D^2 psi_i) + lambda sum_j psi_j - log f = s_i`.
    pub log_constants: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
}

/// Solves the whole coupled system at once: unknowns are all `k P` potential
/// values and the `k` constants, with one mean-zero row per class.
pub fn oracle_fixed_point(geom: &BackgroundGeometry, opts: &OracleOptions) -> Result<OracleSolution, OracleError> {
    let grid = geom.grid();
    check_cap(grid, opts.cap)?;
    let (k, p) = (geom.k(), grid.len());
    let lambda = geom.lambda().value();
    let log_f: Vec<f64> = geom.f().values().iter().map(|v| v.ln()).collect();
    let residual = |u: &[f64]| -> Option<Vec<f64>> {
        let mut sum = vec![0.0; p];
        for i in 0..k {
            for (s, v) in sum.iter_mut().zip(&u[i * p..(i + 1) * p]) {
                *s += v;
            }
        }
        let mut out = Vec::with_capacity(k * p + k);
        for i in 0..k {
            let ld = log_det(grid, geom.background(i), &u[i * p..(i + 1) * p])?;
            let s_i = u[k * p + i];
            out.extend((0..p).map(|x| ld[x] + lambda * sum[x] - s_i - log_f[x]));
        }
        for i in 0..k {
            out.push(u[i * p..(i + 1) * p].iter().sum::<f64>() / p as f64);
        }
        Some(out)
    };
    let (u, res, iterations) = dense_newton(vec![0.0; k * p + k], residual, opts)?;
    let fields = (0..k).map(|i| ScalarField::new(grid, u[i * p..(i + 1) * p].to_vec()).expect("finite")).collect();
    let tuple = PotentialTuple::new(geom, fields).map_err(|_| OracleError::NoConvergence { iterations, residual: res })?;
    Ok(OracleSolution { tuple, log_constants: u[k * p..].to_vec(), residual: res, iterations })
}

/// Dense solve of `log det(A + D^2 psi) + coupling psi - s = rhs` with mean-zero `psi`.
/// Returns `(psi, s, residual)`.
pub fn oracle_slice_solve(
    grid: PeriodicGrid,
    a: &SymMat,
    coupling: f64,
    rhs: &ScalarField,
    opts: &OracleOptions,
) -> Result<(ScalarField, f64, f64), OracleError> {
    check_cap(grid, opts.cap)?;
    let p = grid.len();
    let residual = |u: &[f64]| -> Option<Vec<f64>> {
        let ld = log_det(grid, a, &u[..p])?;
        let mut out: Vec<f64> = (0..p).map(|x| ld[x] + coupling * u[x] - u[p] - rhs.values()[x]).collect();
        out.push(u[..p].iter().sum::<f64>() / p as f64);
        Some(out)
    };
    let (u, res, _) = dense_newton(vec![0.0; p + 1], residual, opts)?;
    Ok((ScalarField::new(grid, u[..p].to_vec()).expect("finite"), u[p], res))
}

#[derive(Clone, Copy, Debug)]
pub struct DescentOptions {
    /// Stop once the gradient, measured against `integrate`, has this sup-norm.
    pub grad_tol: f64,
    pub max_iter: usize,
    pub fd_step: f64,
    pub initial_step: f64,
    pub cap: usize,
}

impl Default for DescentOptions {
    fn default() -> Self {
        DescentOptions { grad_tol: 1e-6, max_iter: 20_000, fd_step: 1e-6, initial_step: 1.0, cap: ORACLE_POINT_CAP }
    }
}

#[derive(Clone, Debug)]
pub struct DescentResult {
    pub tuple: PotentialTuple,
    pub ding: f64,
    /// `D` after every accepted step, starting from the zero tuple.
    pub trace: Vec<f64>,
    pub gradient_norm: f64,
    pub iterations: usize,
}

/// Minimizes the Ding functional over nodal potentials by preconditioned
/// gradient descent from zero.
///
/// The gradient is taken by central differences of [`ding`]. The search
/// direction applies `(I - Delta_h)^{-1}` per class, and the step is chosen by
/// Armijo backtracking that also rejects non-admissible trial points.
pub fn oracle_ding_descent(geom: &BackgroundGeometry, opts: &DescentOptions) -> Result<DescentResult, OracleError> {
    if geom.lambda() != Sign::Negative {
        return Err(OracleError::WrongSign);
    }
    let grid = geom.grid();
    if grid.dim() != 1 {
        return Err(OracleError::UnsupportedDimension(grid.dim()));
    }
    check_cap(grid, opts.cap)?;
    let (k, p) = (geom.k(), grid.len());
    let eval = |u: &[f64]| -> Option<f64> {
        let fields = (0..k).map(|i| ScalarField::new(grid, u[i * p..(i + 1) * p].to_vec()).ok()).collect::<Option<Vec<_>>>()?;
        let tuple = PotentialTuple::new(geom, fields).ok()?;
        Some(ding(geom, &tuple))
    };
    let precond = smoothing_inverse(grid);
    let mut u = vec![0.0; k * p];
    let mut d = eval(&u).expect("zero tuple is admissible");
    let mut trace = vec![d];
    let mut step = opts.initial_step;
    let mut grad_norm = f64::INFINITY;
    for it in 0..opts.max_iter {
        let mut grad = vec![0.0; k * p];
        for (col, gc) in grad.iter_mut().enumerate() {
            let h = opts.fd_step * (1.0 + u[col].abs());
            let mut up = u.clone();
            up[col] += h;
            let mut dn = u.clone();
            dn[col] -= h;
            let (Some(a), Some(b)) = (eval(&up), eval(&dn)) else {
                return Err(OracleError::NoConvergence { iterations: it, residual: grad_norm });
            };
            *gc = (a - b) / (2.0 * h);
        }
        // nodal derivative times P is the density of the gradient against integrate
        grad_norm = sup(&grad) * p as f64;
        if grad_norm <= opts.grad_tol {
            let tuple = tuple_from(geom, &u);
            return Ok(DescentResult { tuple, ding: d, trace, gradient_norm: grad_norm, iterations: it });
        }
        let mut dir = vec![0.0; k * p];
        for i in 0..k {
            let g = DVector::from_column_slice(&grad[i * p..(i + 1) * p]);
            let di = &precond * g;
            for (x, v) in di.iter().enumerate() {
                dir[i * p + x] = -v * p as f64;
            }
        }
        let slope: f64 = grad.iter().zip(&dir).map(|(g, d)| g * d).sum();
        let mut t = step * 2.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = u.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
            if let Some(dt) = eval(&trial) {
                if dt <= d + 1e-4 * t * slope {
                    accepted = Some((trial, dt));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((nu, nd)) = accepted else {
            return Err(OracleError::NoConvergence { iterations: it, residual: grad_norm });
        };
        step = t;
        u = nu;
        d = nd;
        trace.push(d);
    }
    Err(OracleError::NoConvergence { iterations: opts.max_iter, residual: grad_norm })
}

fn tuple_from(geom: &BackgroundGeometry, u: &[f64]) -> PotentialTuple {
    let p = geom.grid().len();
    let fields = (0..geom.k()).map(|i| ScalarField::new(geom.grid(), u[i * p..(i + 1) * p].to_vec()).expect("finite")).collect();
    PotentialTuple::new(geom, fields).expect("descent keeps admissibility")
}

/// `(I - Delta_h)^{-1}` with `Delta_h` the trace of the stencil Hessian.
fn smoothing_inverse(grid: PeriodicGrid) -> DMatrix<f64> {
    let p = grid.len();
    let mut m = DMatrix::<f64>::identity(p, p);
    for col in 0..p {
        let mut e = vec![0.0; p];
        e[col] = 1.0;
        let lap = hessian(&ScalarField::new(grid, e).expect("finite")).trace();
        for (row, v) in lap.values().iter().enumerate() {
            m[(row, col)] -= v;
        }
    }
    m.try_inverse().expect("I - Delta_h is positive definite")
}
