//! Discrete Monge-Ampere densities, mixed discriminants, and the slice solver
//!
//! ```text
//! det(A_i + D^2 psi) = c * exp(-lambda (psi + g)) * f
//! ```
//!
//! with `c > 0` an unknown constant. For `lambda = -1` the slice is solved
//! directly by damped Newton. For `lambda = +1` a direct Newton solve from a
//! warm start is tried first; otherwise the path
//! `log det(A + D^2 psi_t) + t psi_t = log f - g + const_t` is followed from
//! the Calabi-Yau problem at `t = 0` to `t = 1`.

pub mod newton;

use serde::Serialize;
use thiserror::Error;

use crate::grid::{hessian, integrate_values, GridError, LinearSolveError, PeriodicGrid, ScalarField, SymMat};
pub use newton::{
    newton_step, solve_newton, ConstantHandling, NewtonDirection, NewtonFailure, NewtonFailureKind, NewtonOptions,
    NewtonSolution, NewtonTrace, SliceEquation,
};

/// The sign `lambda`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Sign {
    #[serde(rename = "+1")]
    Positive,
    #[serde(rename = "-1")]
    Negative,
}

impl Sign {
    pub fn from_value(v: f64) -> Option<Sign> {
        if v == 1.0 {
            Some(Sign::Positive)
        } else if v == -1.0 {
            Some(Sign::Negative)
        } else {
            None
        }
    }

    pub fn value(self) -> f64 {
        match self {
            Sign::Positive => 1.0,
            Sign::Negative => -1.0,
        }
    }
}

#[derive(Debug, Clone, Error)]
#[error("invalid background geometry: {}", violations.join("; "))]
pub struct GeometryError {
    pub violations: Vec<String>,
}

/// Sign, background matrices `A_i` and reference density `f`.
#[derive(Clone, Debug)]
pub struct BackgroundGeometry {
    lambda: Sign,
    backgrounds: Vec<SymMat>,
    volumes: Vec<f64>,
    f: ScalarField,
    f_total: f64,
}

impl BackgroundGeometry {
    /// Checks every condition and reports all violations together.
    pub fn new(lambda: Sign, backgrounds: Vec<SymMat>, f: ScalarField) -> Result<Self, GeometryError> {
        let grid = f.grid();
        let mut violations = Vec::new();
        if backgrounds.is_empty() {
            violations.push("at least one class is required".to_string());
        }
        for (i, a) in backgrounds.iter().enumerate() {
            if a.dim() != grid.dim() {
                violations.push(format!("A_{} is {}x{} but the grid has dimension {}", i + 1, a.dim(), a.dim(), grid.dim()));
            } else if !a.is_positive_definite() {
                violations.push(format!("A_{} is not positive definite (eigenvalues {:?})", i + 1, a.eigenvalues()));
            }
        }
        let (argmin, fmin) =
            f.values().iter().copied().enumerate().fold((0, f64::INFINITY), |b, (p, v)| if v < b.1 { (p, v) } else { b });
        if fmin <= 0.0 {
            let x = grid.position(argmin);
            violations.push(format!("f is not positive: f = {fmin} at x = {:?}", &x[..grid.dim()]));
        }
        if !violations.is_empty() {
            return Err(GeometryError { violations });
        }
        let volumes = backgrounds.iter().map(SymMat::det).collect();
        let f_total = integrate_values(grid, f.values());
        Ok(BackgroundGeometry { lambda, backgrounds, volumes, f, f_total })
    }

    pub fn lambda(&self) -> Sign {
        self.lambda
    }

    pub fn grid(&self) -> PeriodicGrid {
        self.f.grid()
    }

    pub fn k(&self) -> usize {
        self.backgrounds.len()
    }

    pub fn background(&self, i: usize) -> &SymMat {
        &self.backgrounds[i]
    }

    pub fn backgrounds(&self) -> &[SymMat] {
        &self.backgrounds
    }

    /// `V_i = det A_i`.
    pub fn volume(&self, i: usize) -> f64 {
        self.volumes[i]
    }

    pub fn f(&self) -> &ScalarField {
        &self.f
    }

    /// `integrate(f)`.
    pub fn f_total(&self) -> f64 {
        self.f_total
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("potential {index} is not admissible at point {point} (det = {det:e})")]
pub struct NotAdmissible {
    pub index: usize,
    pub point: usize,
    pub det: f64,
}

/// A potential with `A_i + D^2 psi` positive definite at every grid point.
#[derive(Clone, Debug)]
pub struct AdmissiblePotential {
    index: usize,
    psi: ScalarField,
    mats: Vec<SymMat>,
}

impl AdmissiblePotential {
    pub fn new(index: usize, background: &SymMat, psi: ScalarField) -> Result<Self, NotAdmissible> {
        let mats = hessian(&psi).offset_by(background);
        if let Some((point, m)) = mats.iter().enumerate().find(|(_, m)| !m.is_positive_definite()) {
            return Err(NotAdmissible { index, point, det: m.det() });
        }
        Ok(AdmissiblePotential { index, psi, mats })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn psi(&self) -> &ScalarField {
        &self.psi
    }

    pub fn into_psi(self) -> ScalarField {
        self.psi
    }

    /// `M(x) = A_i + D^2 psi(x)`.
    pub fn metric(&self) -> &[SymMat] {
        &self.mats
    }

    pub fn density(&self) -> ScalarField {
        ScalarField::from_values_unchecked(self.psi.grid(), self.mats.iter().map(SymMat::det).collect())
    }
}

/// Pointwise `det(A + D^2 psi)`; no admissibility check.
pub fn ma_density(a: &SymMat, psi: &ScalarField) -> ScalarField {
    let values = hessian(psi).offset_by(a).iter().map(SymMat::det).collect();
    ScalarField::from_values_unchecked(psi.grid(), values)
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DiscriminantError {
    #[error("mixed discriminant needs as many matrices as their dimension (got {count} of dimension {dim})")]
    Arity { count: usize, dim: usize },
    #[error("mixed discriminant is only implemented for dimension up to 3, got {0}")]
    UnsupportedDimension(usize),
}

/// Symmetric multilinear form with `D(M, ..., M) = det M`, by polarization
/// `D = (1/n!) sum_{S} (-1)^{n-|S|} det(sum_{a in S} M_a)`.
pub fn mixed_discriminant(mats: &[SymMat]) -> Result<f64, DiscriminantError> {
    let n = mats.len();
    if n > 3 {
        return Err(DiscriminantError::UnsupportedDimension(n));
    }
    if n == 0 || mats.iter().any(|m| m.dim() != n) {
        return Err(DiscriminantError::Arity { count: n, dim: mats.first().map_or(0, SymMat::dim) });
    }
    let factorial = [1.0, 1.0, 2.0, 6.0][n];
    let mut total = 0.0;
    for subset in 1usize..(1 << n) {
        let mut sum = SymMat::zeros(n);
        for (a, m) in mats.iter().enumerate() {
            if subset & (1 << a) != 0 {
                sum = sum.add(m);
            }
        }
        let sign = if (n - subset.count_ones() as usize) % 2 == 0 { 1.0 } else { -1.0 };
        total += sign * sum.det();
    }
    Ok(total / factorial)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    /// `max psi = 0`.
    Sup,
    /// `mean psi = 0`.
    Mean,
}

impl NormMode {
    /// Returns the normalized field and the constant added.
    pub fn apply(self, psi: &ScalarField) -> (ScalarField, f64) {
        let shift = match self {
            NormMode::Sup => -psi.max(),
            NormMode::Mean => -psi.mean(),
        };
        let mut out = psi.shifted(shift);
        if self == NormMode::Mean {
            // one more pass removes the rounding left by the first shift
            let m = out.mean();
            out = out.shifted(-m);
            return (out, shift - m);
        }
        (out, shift)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct InnerOptions {
    /// Sup-norm bound on the returned residual.
    pub tol: f64,
    pub max_newton: usize,
    pub max_backtracks: usize,
    /// First continuity step; doubled after success up to this value.
    pub dt0: f64,
    pub dt_min: f64,
}

impl Default for InnerOptions {
    fn default() -> Self {
        InnerOptions { tol: 1e-10, max_newton: 50, max_backtracks: 30, dt0: 0.1, dt_min: 1e-4 }
    }
}

impl InnerOptions {
    fn newton(&self) -> NewtonOptions {
        NewtonOptions { tol: 0.25 * self.tol, accept_tol: 0.5 * self.tol, max_iter: self.max_newton, max_backtracks: self.max_backtracks, ..Default::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveOutcome {
    /// Damped Newton from the initial guess.
    Newton,
    /// Continuity path in `t`.
    Continuity,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ContinuityStep {
    pub t: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    pub outcome: SolveOutcome,
    pub newton_iterations: usize,
    pub linear_iterations: usize,
    pub damping_factors: Vec<f64>,
    /// Merit before each Newton iteration, concatenated over all sub-solves.
    pub residual_history: Vec<f64>,
    /// Sup-norm of the slice residual evaluated on the returned potential and constant.
    pub final_residual: f64,
    pub constant: f64,
    /// Constant added to the raw Newton output by the normalization.
    pub normalization_shift: f64,
    pub continuity_trace: Vec<ContinuityStep>,
}

impl SolveReport {
    fn new(outcome: SolveOutcome) -> Self {
        SolveReport {
            outcome,
            newton_iterations: 0,
            linear_iterations: 0,
            damping_factors: Vec::new(),
            residual_history: Vec::new(),
            final_residual: f64::NAN,
            constant: f64::NAN,
            normalization_shift: 0.0,
            continuity_trace: Vec::new(),
        }
    }

    fn absorb(&mut self, trace: &NewtonTrace) {
        self.newton_iterations += trace.iterations;
        self.linear_iterations += trace.linear_iterations;
        self.damping_factors.extend_from_slice(&trace.damping);
        self.residual_history.extend_from_slice(&trace.residuals);
    }
}

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("damping exhausted without staying in the positivity cone (residual {residual:.3e} after {iterations} iterations)")]
    NonAdmissibleStep { iterations: usize, residual: f64 },
    #[error("Newton did not converge (residual {residual:.3e} after {iterations} iterations)")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("continuity path broke down (last good t = {}, step {dt:.2e}): {reason}", last_good_t.map_or("none".to_string(), |t| format!("{t:.6}")))]
    ContinuityBreakdown { last_good_t: Option<f64>, dt: f64, reason: String },
    #[error(transparent)]
    NotAdmissible(#[from] NotAdmissible),
    #[error("linear solve failed: {0}")]
    Linear(#[from] LinearSolveError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("slice index {index} out of range for {k} classes")]
    BadIndex { index: usize, k: usize },
}

impl SolveError {
    /// Stable snake_case name of the variant.
    pub fn label(&self) -> &'static str {
        match self {
            SolveError::NonAdmissibleStep { .. } => "non_admissible_step",
            SolveError::NoConvergence { .. } => "no_convergence",
            SolveError::ContinuityBreakdown { .. } => "continuity_breakdown",
            SolveError::NotAdmissible(_) => "not_admissible",
            SolveError::Linear(_) => "linear",
            SolveError::Grid(_) => "grid",
            SolveError::BadIndex { .. } => "bad_index",
        }
    }

    fn from_newton(f: &NewtonFailure) -> SolveError {
        match &f.kind {
            NewtonFailureKind::NonAdmissibleStep => {
                SolveError::NonAdmissibleStep { iterations: f.trace.iterations, residual: f.residual }
            }
            NewtonFailureKind::Linear(e) => SolveError::Linear(e.clone()),
            NewtonFailureKind::NoConvergence | NewtonFailureKind::NotAdmissibleStart => {
                SolveError::NoConvergence { iterations: f.trace.iterations, residual: f.residual }
            }
        }
    }
}

fn check_index(geom: &BackgroundGeometry, i: usize) -> Result<(), SolveError> {
    if i >= geom.k() {
        return Err(SolveError::BadIndex { index: i, k: geom.k() });
    }
    Ok(())
}

fn log_values(u: &ScalarField) -> Vec<f64> {
    u.values().iter().map(|v| v.ln()).collect()
}

/// Pointwise `log det(A_i + D^2 psi) - log c + lambda (psi + g) - log f`.
pub fn tke_residual(
    geom: &BackgroundGeometry,
    i: usize,
    g: &ScalarField,
    psi: &ScalarField,
    c: f64,
) -> Result<ScalarField, SolveError> {
    check_index(geom, i)?;
    let pot = AdmissiblePotential::new(i, geom.background(i), psi.clone())?;
    let lambda = geom.lambda().value();
    let log_c = c.ln();
    let values = pot
        .density()
        .values()
        .iter()
        .zip(psi.values())
        .zip(g.values())
        .zip(geom.f().values())
        .map(|(((d, p), gv), fv)| d.ln() - log_c + lambda * (p + gv) - fv.ln())
        .collect();
    Ok(ScalarField::new(psi.grid(), values)?)
}

/// Pointwise `log det(A + D^2 psi) - log c - log rho`.
pub fn calabi_yau_residual(a: &SymMat, rho: &ScalarField, psi: &ScalarField, c: f64) -> Result<ScalarField, SolveError> {
    let pot = AdmissiblePotential::new(0, a, psi.clone())?;
    let log_c = c.ln();
    let values = pot.density().values().iter().zip(rho.values()).map(|(d, r)| d.ln() - log_c - r.ln()).collect();
    Ok(ScalarField::new(psi.grid(), values)?)
}

/// `c` from `integrate(det M) = c * integrate(exp(-lambda (psi + g)) f)`.
fn compatible_constant(geom: &BackgroundGeometry, i: usize, g: &ScalarField, psi: &ScalarField) -> f64 {
    let grid = psi.grid();
    let lambda = geom.lambda().value();
    let mass = integrate_values(grid, ma_density(geom.background(i), psi).values());
    let weights: Vec<f64> = psi
        .values()
        .iter()
        .zip(g.values())
        .zip(geom.f().values())
        .map(|((p, gv), fv)| (-lambda * (p + gv)).exp() * fv)
        .collect();
    mass / integrate_values(grid, &weights)
}

/// `log c` that makes the constant compatible with the initial guess.
fn initial_log_constant(eq: &SliceEquation, psi0: &[f64]) -> f64 {
    let grid = eq.grid();
    let psi = ScalarField::from_values_unchecked(grid, psi0.to_vec());
    let mass = integrate_values(grid, ma_density(eq.background(), &psi).values());
    let weights: Vec<f64> = psi0.iter().zip(eq.rhs()).map(|(p, r)| (r - eq.coupling() * p).exp()).collect();
    mass.ln() - integrate_values(grid, &weights).ln()
}

/// Solves slice `i` against the twist `g` from `psi = 0` with default options.
pub fn solve_tke(
    geom: &BackgroundGeometry,
    i: usize,
    g: &ScalarField,
    norm_mode: NormMode,
) -> Result<(AdmissiblePotential, SolveReport), SolveError> {
    solve_tke_with(geom, i, g, norm_mode, None, &InnerOptions::default())
}

/// As [`solve_tke`], optionally warm-started from `warm`.
pub fn solve_tke_with(
    geom: &BackgroundGeometry,
    i: usize,
    g: &ScalarField,
    norm_mode: NormMode,
    warm: Option<&ScalarField>,
    opts: &InnerOptions,
) -> Result<(AdmissiblePotential, SolveReport), SolveError> {
    check_index(geom, i)?;
    let grid = geom.grid();
    let lambda = geom.lambda().value();
    let log_f = log_values(geom.f());
    let rhs: Vec<f64> = log_f.iter().zip(g.values()).map(|(lf, gv)| lf - lambda * gv).collect();
    let eq = SliceEquation::new(grid, *geom.background(i), lambda, rhs);
    let psi0 = match warm {
        Some(w) => {
            AdmissiblePotential::new(i, geom.background(i), w.clone())?;
            w.values().to_vec()
        }
        None => vec![0.0; grid.len()],
    };
    match geom.lambda() {
        Sign::Negative => {
            let s0 = initial_log_constant(&eq, &psi0);
            let mut report = SolveReport::new(SolveOutcome::Newton);
            let sol = solve_newton(&eq, psi0, s0, ConstantHandling::Fixed, &opts.newton()).map_err(|f| {
                report.absorb(&f.trace);
                SolveError::from_newton(&f)
            })?;
            report.absorb(&sol.trace);
            finish_tke(geom, i, g, sol.psi, norm_mode, report, opts.tol)
        }
        Sign::Positive => {
            if warm.is_some() {
                let mut centered = psi0.clone();
                let m = crate::grid::mean(&centered);
                centered.iter_mut().for_each(|v| *v -= m);
                let s0 = initial_log_constant(&eq, &centered);
                if let Ok(sol) = solve_newton(&eq, centered, s0, ConstantHandling::Bordered, &opts.newton()) {
                    let mut report = SolveReport::new(SolveOutcome::Newton);
                    report.absorb(&sol.trace);
                    if let Ok(done) = finish_tke(geom, i, g, sol.psi, norm_mode, report, opts.tol) {
                        return Ok(done);
                    }
                }
            }
            continuity_solve_with(geom, i, g, norm_mode, opts)
        }
    }
}

fn finish_tke(
    geom: &BackgroundGeometry,
    i: usize,
    g: &ScalarField,
    raw: Vec<f64>,
    norm_mode: NormMode,
    mut report: SolveReport,
    tol: f64,
) -> Result<(AdmissiblePotential, SolveReport), SolveError> {
    let raw = ScalarField::new(geom.grid(), raw)?;
    let (psi, shift) = norm_mode.apply(&raw);
    let c = compatible_constant(geom, i, g, &psi);
    report.final_residual = tke_residual(geom, i, g, &psi, c)?.sup_norm();
    if report.final_residual > tol {
        return Err(SolveError::NoConvergence { iterations: report.newton_iterations, residual: report.final_residual });
    }
    report.constant = c;
    report.normalization_shift = shift;
    let pot = AdmissiblePotential::new(i, geom.background(i), psi)?;
    Ok((pot, report))
}

/// Continuity path for `lambda = +1` from `psi = 0` with default options and sup normalization.
pub fn continuity_solve(
    geom: &BackgroundGeometry,
    i: usize,
    g: &ScalarField,
) -> Result<(AdmissiblePotential, SolveReport), SolveError> {
    continuity_solve_with(geom, i, g, NormMode::Sup, &InnerOptions::default())
}

/// Follows `log det(A_i + D^2 psi_t) + t psi_t = log f - g + const_t` from `t = 0` to `t = 1`.
///
/// The step in `t` starts at `dt0`, is halved after a failed sub-solve and
/// doubled (up to `dt0`) after a success. Once it drops below `dt_min` the
/// path is abandoned with [`SolveError::ContinuityBreakdown`].
pub fn continuity_solve_with(
    geom: &BackgroundGeometry,
    i: usize,
    g: &ScalarField,
    norm_mode: NormMode,
    opts: &InnerOptions,
) -> Result<(AdmissiblePotential, SolveReport), SolveError> {
    check_index(geom, i)?;
    let grid = geom.grid();
    let a = *geom.background(i);
    let rhs: Vec<f64> = log_values(geom.f()).iter().zip(g.values()).map(|(lf, gv)| lf - gv).collect();
    let nopts = opts.newton();
    let mut report = SolveReport::new(SolveOutcome::Continuity);

    let eq0 = SliceEquation::new(grid, a, 0.0, rhs.clone());
    let zero = vec![0.0; grid.len()];
    let s0 = initial_log_constant(&eq0, &zero);
    let start = solve_newton(&eq0, zero, s0, ConstantHandling::Bordered, &nopts).map_err(|f| {
        SolveError::ContinuityBreakdown {
            last_good_t: None,
            dt: opts.dt0,
            reason: format!("Calabi-Yau start failed: {}", SolveError::from_newton(&f)),
        }
    })?;
    report.absorb(&start.trace);
    report.continuity_trace.push(ContinuityStep { t: 0.0, iterations: start.trace.iterations });

    let (mut psi, mut s) = (start.psi, start.s);
    let mut t = 0.0_f64;
    let mut dt = opts.dt0;
    while t < 1.0 {
        let t_next = if t + dt > 1.0 - 1e-9 { 1.0 } else { t + dt };
        let eq = SliceEquation::new(grid, a, t_next, rhs.clone());
        // the coupling term shifts by (t_next - t) psi; fold its mean into s
        let s_guess = s + (t_next - t) * crate::grid::mean(&psi);
        match solve_newton(&eq, psi.clone(), s_guess, ConstantHandling::Bordered, &nopts) {
            Ok(sol) => {
                report.absorb(&sol.trace);
                report.continuity_trace.push(ContinuityStep { t: t_next, iterations: sol.trace.iterations });
                psi = sol.psi;
                s = sol.s;
                t = t_next;
                dt = (2.0 * dt).min(opts.dt0);
            }
            Err(f) => {
                report.absorb(&f.trace);
                dt *= 0.5;
                if dt < opts.dt_min {
                    return Err(SolveError::ContinuityBreakdown {
                        last_good_t: Some(t),
                        dt,
                        reason: SolveError::from_newton(&f).to_string(),
                    });
                }
            }
        }
    }
    finish_tke(geom, i, g, psi, norm_mode, report, opts.tol)
}

/// Solves `det(A + D^2 psi) = c rho` with `mean psi = 0`; `c` is reported in the report.
pub fn solve_calabi_yau(a: &SymMat, rho: &ScalarField) -> Result<(AdmissiblePotential, SolveReport), SolveError> {
    solve_calabi_yau_with(a, rho, &InnerOptions::default())
}

pub fn solve_calabi_yau_with(
    a: &SymMat,
    rho: &ScalarField,
    opts: &InnerOptions,
) -> Result<(AdmissiblePotential, SolveReport), SolveError> {
    let grid = rho.grid();
    if let Some((p, &v)) = rho.values().iter().enumerate().find(|(_, v)| **v <= 0.0) {
        return Err(SolveError::Grid(GridError::Format(format!("target density must be positive, got {v} at point {p}"))));
    }
    let eq = SliceEquation::new(grid, *a, 0.0, log_values(rho));
    let zero = vec![0.0; grid.len()];
    let s0 = initial_log_constant(&eq, &zero);
    let mut report = SolveReport::new(SolveOutcome::Newton);
    let sol = solve_newton(&eq, zero, s0, ConstantHandling::Bordered, &opts.newton())
        .map_err(|f| SolveError::from_newton(&f))?;
    report.absorb(&sol.trace);
    let raw = ScalarField::new(grid, sol.psi)?;
    let (psi, shift) = NormMode::Mean.apply(&raw);
    let c = integrate_values(grid, ma_density(a, &psi).values()) / integrate_values(grid, rho.values());
    report.final_residual = calabi_yau_residual(a, rho, &psi, c)?.sup_norm();
    report.constant = c;
    report.normalization_shift = shift;
    Ok((AdmissiblePotential::new(0, a, psi)?, report))
}
