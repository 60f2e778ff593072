//! Damped Newton for one slice `log det(A + D^2 psi) + coupling * psi - s = rhs`.
//!
//! The linearization `delta -> tr(M^{-1} D^2 delta) + coupling * delta` is not
//! symmetric on the grid (the coefficient varies pointwise), so directions are
//! computed with right-preconditioned GMRES. The preconditioner inverts the
//! constant-coefficient operator built from the grid average of `M^{-1}`.
//!
//! The scalar `s = log c` is either held fixed (when `coupling < 0` the field
//! equation alone is uniquely solvable) or appended as an unknown together
//! with the mean-zero row ("bordered").

use crate::grid::spectral::SpectralOperator;
use crate::grid::{
    gmres, hessian_into, mean, sup_norm, KrylovOptions, LinearMap, LinearSolveError, PeriodicGrid, SymMat,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstantHandling {
    /// `s` is a parameter; unknowns are the `P` field values.
    Fixed,
    /// `s` is an unknown; the extra row is `mean(psi) = 0`.
    Bordered,
}

/// Data of one slice equation on a grid.
#[derive(Clone, Debug)]
pub struct SliceEquation {
    grid: PeriodicGrid,
    background: SymMat,
    coupling: f64,
    rhs: Vec<f64>,
}

/// Pointwise state at an admissible iterate.
pub(crate) struct Linearization {
    pub residual: Vec<f64>,
    pub inverses: Vec<SymMat>,
}

impl SliceEquation {
    pub fn new(grid: PeriodicGrid, background: SymMat, coupling: f64, rhs: Vec<f64>) -> Self {
        assert_eq!(background.dim(), grid.dim());
        assert_eq!(rhs.len(), grid.len());
        SliceEquation { grid, background, coupling, rhs }
    }

    pub fn grid(&self) -> PeriodicGrid {
        self.grid
    }

    pub fn coupling(&self) -> f64 {
        self.coupling
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    pub fn background(&self) -> &SymMat {
        &self.background
    }

    fn matrices(&self, psi: &[f64]) -> Vec<SymMat> {
        let mut mats = vec![SymMat::zeros(self.grid.dim()); self.grid.len()];
        hessian_into(self.grid, psi, &mut mats);
        for m in mats.iter_mut() {
            *m = self.background.add(m);
        }
        mats
    }

    /// Field residual, or `None` when `A + D^2 psi` fails to be positive definite somewhere.
    pub fn residual(&self, psi: &[f64], s: f64) -> Option<Vec<f64>> {
        self.linearize(psi, s).map(|l| l.residual)
    }

    pub(crate) fn linearize(&self, psi: &[f64], s: f64) -> Option<Linearization> {
        let mats = self.matrices(psi);
        let mut residual = Vec::with_capacity(psi.len());
        let mut inverses = Vec::with_capacity(psi.len());
        for (p, m) in mats.iter().enumerate() {
            if !m.is_positive_definite() {
                return None;
            }
            let r = m.det().ln() + self.coupling * psi[p] - s - self.rhs[p];
            if !r.is_finite() {
                return None;
            }
            residual.push(r);
            inverses.push(m.inverse()?);
        }
        Some(Linearization { residual, inverses })
    }

    /// Applies the Jacobian at `psi` to `(delta, sigma)`; returns the field part
    /// `tr(M^{-1} D^2 delta) + coupling * delta - sigma`.
    pub fn apply_jacobian(&self, psi: &[f64], delta: &[f64], sigma: f64) -> Option<Vec<f64>> {
        let lin = self.linearize(psi, 0.0)?;
        let mut out = vec![0.0; delta.len()];
        apply_field_jacobian(self.grid, &lin.inverses, self.coupling, delta, &mut out);
        out.iter_mut().for_each(|v| *v -= sigma);
        Some(out)
    }
}

fn apply_field_jacobian(grid: PeriodicGrid, inverses: &[SymMat], coupling: f64, x: &[f64], y: &mut [f64]) {
    let mut h = vec![SymMat::zeros(grid.dim()); grid.len()];
    hessian_into(grid, x, &mut h);
    for p in 0..x.len() {
        y[p] = inverses[p].contract(&h[p]) + coupling * x[p];
    }
}

struct JacobianOp<'a> {
    grid: PeriodicGrid,
    inverses: &'a [SymMat],
    coupling: f64,
    mode: ConstantHandling,
}

impl LinearMap for JacobianOp<'_> {
    fn dim(&self) -> usize {
        match self.mode {
            ConstantHandling::Fixed => self.grid.len(),
            ConstantHandling::Bordered => self.grid.len() + 1,
        }
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let np = self.grid.len();
        apply_field_jacobian(self.grid, self.inverses, self.coupling, &x[..np], &mut y[..np]);
        if self.mode == ConstantHandling::Bordered {
            let sigma = x[np];
            y[..np].iter_mut().for_each(|v| *v -= sigma);
            y[np] = mean(&x[..np]);
        }
    }
}

struct Preconditioner {
    op: SpectralOperator,
    coupling: f64,
    mode: ConstantHandling,
}

impl Preconditioner {
    fn new(grid: PeriodicGrid, inverses: &[SymMat], coupling: f64, mode: ConstantHandling) -> Self {
        let mut avg = SymMat::zeros(grid.dim());
        for m in inverses {
            avg = avg.add(m);
        }
        let avg = avg.scale(1.0 / inverses.len() as f64);
        Preconditioner { op: SpectralOperator::new(grid, &avg, 0.0), coupling, mode }
    }
}

impl LinearMap for Preconditioner {
    fn dim(&self) -> usize {
        let np = self.op.grid().len();
        match self.mode {
            ConstantHandling::Fixed => np,
            ConstantHandling::Bordered => np + 1,
        }
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let np = self.op.grid().len();
        let shift = self.coupling.abs();
        match self.mode {
            ConstantHandling::Fixed => self.op.solve_with(x, y, |_, s| s - shift),
            ConstantHandling::Bordered => {
                self.op.solve_with(&x[..np], &mut y[..np], |p, s| if p == 0 { 0.0 } else { s - shift });
                let r_sigma = x[np];
                y[..np].iter_mut().for_each(|v| *v += r_sigma);
                y[np] = self.coupling * r_sigma - mean(&x[..np]);
            }
        }
    }
}

/// A Newton correction and the linear-model residual it leaves.
#[derive(Clone, Debug)]
pub struct NewtonDirection {
    pub delta: Vec<f64>,
    /// Correction to `s`; zero in fixed mode.
    pub delta_constant: f64,
    /// Sup-norm of `R + J (delta, delta_constant)` including the mean row when bordered.
    pub predicted_residual: f64,
    pub linear_iterations: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct NewtonOptions {
    /// Stop once the merit (residual sup-norm, and `|mean psi|` when bordered) is at most this.
    pub tol: f64,
    /// A stalled line search still counts as success at or below this merit.
    pub accept_tol: f64,
    pub max_iter: usize,
    pub max_backtracks: usize,
    pub krylov_restart: usize,
    pub krylov_max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions { tol: 2.5e-11, accept_tol: 1e-10, max_iter: 50, max_backtracks: 30, krylov_restart: 60, krylov_max_iter: 3000 }
    }
}

fn merit(residual: &[f64], psi: &[f64], mode: ConstantHandling) -> f64 {
    let r = sup_norm(residual);
    match mode {
        ConstantHandling::Fixed => r,
        ConstantHandling::Bordered => r.max(mean(psi).abs()),
    }
}

/// Computes the Newton direction at an admissible `psi`, solving the linear
/// system to relative residual `1e-12`. Returns `Ok(None)` when `psi` is not admissible.
pub fn newton_step(
    eq: &SliceEquation,
    psi: &[f64],
    s: f64,
    mode: ConstantHandling,
) -> Result<Option<NewtonDirection>, LinearSolveError> {
    let Some(lin) = eq.linearize(psi, s) else { return Ok(None) };
    direction_from(eq, psi, &lin, mode, 1e-12, &NewtonOptions::default()).map(Some)
}

fn forcing(merit: f64) -> f64 {
    merit.clamp(1e-12, 1e-3)
}

fn direction_from(
    eq: &SliceEquation,
    psi: &[f64],
    lin: &Linearization,
    mode: ConstantHandling,
    rel_tol: f64,
    opts: &NewtonOptions,
) -> Result<NewtonDirection, LinearSolveError> {
    let grid = eq.grid;
    let np = grid.len();
    let op = JacobianOp { grid, inverses: &lin.inverses, coupling: eq.coupling, mode };
    let pc = Preconditioner::new(grid, &lin.inverses, eq.coupling, mode);
    let mut b: Vec<f64> = lin.residual.iter().map(|r| -r).collect();
    if mode == ConstantHandling::Bordered {
        b.push(-mean(psi));
    }
    let kopts = KrylovOptions { rel_tol, max_iter: opts.krylov_max_iter, restart: opts.krylov_restart };
    let out = gmres(&op, Some(&pc), &b, None, &kopts)?;
    let mut jx = vec![0.0; b.len()];
    op.apply(&out.x, &mut jx);
    let predicted_residual = jx.iter().zip(&b).fold(0.0_f64, |m, (a, c)| m.max((a - c).abs()));
    let mut x = out.x;
    let delta_constant = if mode == ConstantHandling::Bordered { x.pop().unwrap_or(0.0) } else { 0.0 };
    debug_assert_eq!(x.len(), np);
    Ok(NewtonDirection { delta: x, delta_constant, predicted_residual, linear_iterations: out.iterations })
}

#[derive(Clone, Debug, Default)]
pub struct NewtonTrace {
    pub iterations: usize,
    pub linear_iterations: usize,
    /// Accepted step lengths, one per iteration.
    pub damping: Vec<f64>,
    /// Merit before each iteration and after the last one.
    pub residuals: Vec<f64>,
}

#[derive(Clone, Debug)]
pub enum NewtonFailureKind {
    NotAdmissibleStart,
    /// Every trial step left the positivity cone.
    NonAdmissibleStep,
    /// Backtracking found no decrease, or the iteration budget ran out.
    NoConvergence,
    Linear(LinearSolveError),
}

#[derive(Clone, Debug)]
pub struct NewtonFailure {
    pub kind: NewtonFailureKind,
    pub trace: NewtonTrace,
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct NewtonSolution {
    pub psi: Vec<f64>,
    pub s: f64,
    pub trace: NewtonTrace,
}

/// Armijo-damped Newton on the sup-norm merit with a positivity guard.
pub fn solve_newton(
    eq: &SliceEquation,
    psi0: Vec<f64>,
    s0: f64,
    mode: ConstantHandling,
    opts: &NewtonOptions,
) -> Result<NewtonSolution, NewtonFailure> {
    let mut trace = NewtonTrace::default();
    let mut psi = psi0;
    let mut s = s0;
    let Some(mut lin) = eq.linearize(&psi, s) else {
        return Err(NewtonFailure { kind: NewtonFailureKind::NotAdmissibleStart, trace, residual: f64::INFINITY });
    };
    let mut current = merit(&lin.residual, &psi, mode);
    trace.residuals.push(current);
    let mut trial = vec![0.0; psi.len()];
    loop {
        if current <= opts.tol {
            return Ok(NewtonSolution { psi, s, trace });
        }
        if trace.iterations >= opts.max_iter {
            if current <= opts.accept_tol {
                return Ok(NewtonSolution { psi, s, trace });
            }
            return Err(NewtonFailure { kind: NewtonFailureKind::NoConvergence, trace, residual: current });
        }
        let dir = match direction_from(eq, &psi, &lin, mode, forcing(current), opts) {
            Ok(d) => d,
            Err(e) => {
                return Err(NewtonFailure { kind: NewtonFailureKind::Linear(e), trace, residual: current });
            }
        };
        trace.linear_iterations += dir.linear_iterations;
        let mut alpha = 1.0;
        let mut any_admissible = false;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            for ((t, p), d) in trial.iter_mut().zip(&psi).zip(&dir.delta) {
                *t = p + alpha * d;
            }
            let s_trial = s + alpha * dir.delta_constant;
            if let Some(l) = eq.linearize(&trial, s_trial) {
                any_admissible = true;
                let m = merit(&l.residual, &trial, mode);
                if m <= (1.0 - 1e-4 * alpha) * current {
                    accepted = Some((l, m, s_trial));
                    break;
                }
            }
            alpha *= 0.5;
        }
        trace.iterations += 1;
        match accepted {
            Some((l, m, s_new)) => {
                std::mem::swap(&mut psi, &mut trial);
                s = s_new;
                lin = l;
                current = m;
                trace.damping.push(alpha);
                trace.residuals.push(current);
            }
            None if current <= opts.accept_tol => {
                // rounding floor: no further decrease is measurable
                trace.iterations -= 1;
                return Ok(NewtonSolution { psi, s, trace });
            }
            None => {
                let kind =
                    if any_admissible { NewtonFailureKind::NoConvergence } else { NewtonFailureKind::NonAdmissibleStep };
                return Err(NewtonFailure { kind, trace, residual: current });
            }
        }
    }
}
