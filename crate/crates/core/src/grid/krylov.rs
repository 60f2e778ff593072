//! Krylov solvers for the linear systems inside Newton steps.
//!
//! [`solve_mean_zero_linear`] is conjugate gradients restricted to mean-zero
//! fields, for operators that are symmetric and negative definite there (the
//! discrete Laplacian and its negative shifts). [`gmres`] handles the general
//! nonsymmetric case such as the linearized Monge-Ampere operator.

use thiserror::Error;

use super::{mean, ScalarField};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinearSolveError {
    #[error("linear solver did not converge in {iterations} iterations (relative residual {relative_residual:.3e})")]
    NoConvergence { iterations: usize, relative_residual: f64 },
    #[error("linear operator broke down (non-positive curvature {0:.3e})")]
    Breakdown(f64),
}

/// A linear map on `R^dim`.
pub trait LinearMap {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
}

/// Wraps a closure as a [`LinearMap`].
pub struct FnMap<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64])> FnMap<F> {
    pub fn new(dim: usize, f: F) -> Self {
        FnMap { dim, f }
    }
}

impl<F: Fn(&[f64], &mut [f64])> LinearMap for FnMap<F> {
    fn dim(&self) -> usize {
        self.dim
    }
    fn apply(&self, x: &[f64], y: &mut [f64]) {
        (self.f)(x, y)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct KrylovOptions {
    pub rel_tol: f64,
    pub max_iter: usize,
    pub restart: usize,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        KrylovOptions { rel_tol: 1e-12, max_iter: 2000, restart: 80 }
    }
}

#[derive(Clone, Debug)]
pub struct KrylovOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `||A x - b|| / ||b||`, recomputed from the returned `x`.
    pub relative_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |s, (x, y)| s + x * y)
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn project_mean_zero(v: &mut [f64]) {
    let m = mean(v);
    v.iter_mut().for_each(|x| *x -= m);
}

/// Solves `L x = rhs` for mean-zero `x` with `||L x - rhs||_2 <= rel_tol ||rhs||_2`.
///
/// `apply_l` must be symmetric and negative definite on mean-zero fields; `rhs`
/// is expected to have zero mean and is projected if it does not.
pub fn solve_mean_zero_linear(
    apply_l: impl Fn(&[f64], &mut [f64]),
    rhs: &ScalarField,
    rel_tol: f64,
) -> Result<ScalarField, LinearSolveError> {
    let grid = rhs.grid();
    let n = grid.len();
    let max_iter = 10 * n + 100;
    let mut b = rhs.values().to_vec();
    project_mean_zero(&mut b);
    let bnorm = norm(&b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok(ScalarField::from_values_unchecked(grid, x));
    }
    // CG on the positive definite operator -L applied to -b.
    let mut r: Vec<f64> = b.iter().map(|v| -v).collect();
    let mut p = r.clone();
    let mut ap = vec![0.0; n];
    let mut rr = dot(&r, &r);
    let mut iterations = 0;
    let tol = rel_tol * bnorm;
    while rr.sqrt() > tol {
        if iterations >= max_iter {
            return Err(LinearSolveError::NoConvergence { iterations, relative_residual: rr.sqrt() / bnorm });
        }
        apply_l(&p, &mut ap);
        ap.iter_mut().for_each(|v| *v = -*v);
        project_mean_zero(&mut ap);
        let curv = dot(&p, &ap);
        if curv <= 0.0 {
            return Err(LinearSolveError::Breakdown(curv));
        }
        let alpha = rr / curv;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
        iterations += 1;
    }
    project_mean_zero(&mut x);
    // recursive residuals drift; confirm against the operator
    let mut lx = vec![0.0; n];
    apply_l(&x, &mut lx);
    let res: Vec<f64> = lx.iter().zip(&b).map(|(a, c)| a - c).collect();
    let rel = norm(&res) / bnorm;
    if rel > rel_tol {
        return Err(LinearSolveError::NoConvergence { iterations, relative_residual: rel });
    }
    Ok(ScalarField::from_values_unchecked(grid, x))
}

/// Restarted GMRES with right preconditioning, starting from `x0` (zero when `None`).
///
/// Convergence is declared on the true residual `||b - A x||_2 <= rel_tol ||b||_2`.
pub fn gmres(
    op: &dyn LinearMap,
    precond: Option<&dyn LinearMap>,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: &KrylovOptions,
) -> Result<KrylovOutcome, LinearSolveError> {
    let n = op.dim();
    assert_eq!(b.len(), n);
    let bnorm = norm(b);
    let mut x = x0.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; n]);
    if bnorm == 0.0 {
        return Ok(KrylovOutcome { x: vec![0.0; n], iterations: 0, relative_residual: 0.0 });
    }
    let tol = opts.rel_tol * bnorm;
    let m = opts.restart.max(1).min(n.max(1) + 1);
    let mut iterations = 0;
    let mut r = vec![0.0; n];
    let mut tmp = vec![0.0; n];

    loop {
        op.apply(&x, &mut tmp);
        for i in 0..n {
            r[i] = b[i] - tmp[i];
        }
        let beta = norm(&r);
        if beta <= tol {
            return Ok(KrylovOutcome { x, iterations, relative_residual: beta / bnorm });
        }
        if iterations >= opts.max_iter {
            return Err(LinearSolveError::NoConvergence { iterations, relative_residual: beta / bnorm });
        }

        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        let mut zs: Vec<Vec<f64>> = Vec::with_capacity(m);
        basis.push(r.iter().map(|v| v / beta).collect());
        let mut hess = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut cols = 0;

        for j in 0..m {
            let z = match precond {
                Some(pc) => {
                    let mut z = vec![0.0; n];
                    pc.apply(&basis[j], &mut z);
                    z
                }
                None => basis[j].clone(),
            };
            let mut w = vec![0.0; n];
            op.apply(&z, &mut w);
            zs.push(z);
            for (i, v) in basis.iter().enumerate() {
                let hij = dot(&w, v);
                hess[i][j] = hij;
                w.iter_mut().zip(v).for_each(|(wk, vk)| *wk -= hij * vk);
            }
            let hnext = norm(&w);
            hess[j + 1][j] = hnext;
            for i in 0..j {
                let t = cs[i] * hess[i][j] + sn[i] * hess[i + 1][j];
                hess[i + 1][j] = -sn[i] * hess[i][j] + cs[i] * hess[i + 1][j];
                hess[i][j] = t;
            }
            let denom = hess[j][j].hypot(hess[j + 1][j]);
            if denom == 0.0 {
                cs[j] = 1.0;
                sn[j] = 0.0;
            } else {
                cs[j] = hess[j][j] / denom;
                sn[j] = hess[j + 1][j] / denom;
            }
            hess[j][j] = cs[j] * hess[j][j] + sn[j] * hess[j + 1][j];
            hess[j + 1][j] = 0.0;
            g[j + 1] = -sn[j] * g[j];
            g[j] *= cs[j];
            cols = j + 1;
            iterations += 1;
            if g[j + 1].abs() <= 0.5 * tol || hnext == 0.0 || iterations >= opts.max_iter {
                break;
            }
            basis.push(w.iter().map(|v| v / hnext).collect());
        }

        let mut y = vec![0.0; cols];
        for i in (0..cols).rev() {
            let mut s = g[i];
            for l in (i + 1)..cols {
                s -= hess[i][l] * y[l];
            }
            y[i] = if hess[i][i] != 0.0 { s / hess[i][i] } else { 0.0 };
        }
        for (yi, z) in y.iter().zip(&zs) {
            x.iter_mut().zip(z).for_each(|(xk, zk)| *xk += yi * zk);
        }
    }
}
