//! Outer coupled iteration: Gauss–Seidel and Jacobi sweeps over the slice solves,
//! the fixed-point stopping rule, and the Ding monotonicity check.

use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use crate::functionals::{EnergyLedger, LedgerRow, PotentialTuple, VolumeConvention};
use crate::grid::ScalarField;
use crate::monge_ampere::{
    solve_tke_with, AdmissiblePotential, BackgroundGeometry, InnerOptions, NormMode, Sign, SolveError, SolveOutcome,
    SolveReport,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Slice `i` sees the already updated slices `j < i`.
    GaussSeidel,
    /// Every slice sees the previous tuple.
    Jacobi,
}

#[derive(Clone, Copy, Debug)]
pub struct IterationConfig {
    pub mode: SweepMode,
    pub norm_mode: NormMode,
    /// Stop once `max_i ||rho_i||_inf` is at most this.
    pub tol_fixed_point: f64,
    pub max_outer: usize,
    pub inner: InnerOptions,
    /// Ledger stride. Row 0 and the final row are always kept.
    pub record_every: usize,
    /// Sweep the classes from `k` down to 1.
    pub reverse_order: bool,
    /// Volume used by the residual certificate.
    pub convention: VolumeConvention,
}

impl Default for IterationConfig {
    fn default() -> Self {
        IterationConfig {
            mode: SweepMode::GaussSeidel,
            norm_mode: NormMode::Sup,
            tol_fixed_point: 1e-8,
            max_outer: 200,
            inner: InnerOptions::default(),
            record_every: 1,
            reverse_order: false,
            convention: VolumeConvention::DiscreteMass,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
#[error("invalid iteration config: {}", .0.join("; "))]
pub struct ConfigError(pub Vec<String>);

impl IterationConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut v = Vec::new();
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !positive(self.tol_fixed_point) {
            v.push(format!("tol_fixed_point must be positive, got {}", self.tol_fixed_point));
        }
        if !positive(self.inner.tol) {
            v.push(format!("inner tol must be positive, got {}", self.inner.tol));
        }
        if !positive(self.inner.dt0) || !positive(self.inner.dt_min) || self.inner.dt_min > self.inner.dt0 {
            v.push(format!("continuity steps need 0 < dt_min <= dt0, got {} and {}", self.inner.dt_min, self.inner.dt0));
        }
        if self.max_outer == 0 {
            v.push("max_outer must be at least 1".into());
        }
        if self.inner.max_newton == 0 {
            v.push("max_newton must be at least 1".into());
        }
        if self.record_every == 0 {
            v.push("record_every must be at least 1".into());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(v))
        }
    }
}

/// Inner solve failure with the class it happened in.
#[derive(Debug, Error)]
#[error("slice {class} failed: {error}")]
pub struct StepError {
    pub class: usize,
    pub error: SolveError,
}

/// Result of one sweep.
#[derive(Clone, Debug)]
pub struct Sweep {
    pub tuple: PotentialTuple,
    /// Normalization constant added to each class by the inner solve.
    pub shifts: Vec<f64>,
    /// Newton iterations summed over the slices.
    pub inner_iters: usize,
    pub reports: Vec<SolveReport>,
}

fn order(k: usize, reverse: bool) -> Vec<usize> {
    if reverse {
        (0..k).rev().collect()
    } else {
        (0..k).collect()
    }
}

fn solve_slice(
    geom: &BackgroundGeometry,
    i: usize,
    g: &ScalarField,
    warm: Option<&ScalarField>,
    config: &IterationConfig,
) -> Result<(AdmissiblePotential, SolveReport), StepError> {
    solve_tke_with(geom, i, g, config.norm_mode, warm, &config.inner).map_err(|error| StepError { class: i, error })
}

fn assemble(k: usize, tuple: PotentialTuple, solved: Vec<(usize, AdmissiblePotential, SolveReport)>) -> Sweep {
    let mut shifts = vec![0.0; k];
    let mut reports: Vec<Option<SolveReport>> = vec![None; k];
    let mut inner_iters = 0;
    let mut tuple = tuple;
    for (i, pot, report) in solved {
        shifts[i] = report.normalization_shift;
        inner_iters += report.newton_iterations;
        tuple.set(pot);
        reports[i] = Some(report);
    }
    Sweep { tuple, shifts, inner_iters, reports: reports.into_iter().map(|r| r.expect("every class solved")).collect() }
}

/// One Gauss–Seidel sweep: slice `i` is solved against the sum of the other
/// slices, using the new values of those already visited in this sweep.
/// Each slice solve is warm-started from its previous potential.
pub fn step_gauss_seidel(
    geom: &BackgroundGeometry,
    tuple: &PotentialTuple,
    config: &IterationConfig,
) -> Result<Sweep, StepError> {
    gauss_seidel(geom, tuple, config, true)
}

/// One Jacobi sweep: every slice is solved against the previous tuple.
/// Slices are solved on scoped threads and merged in index order.
pub fn step_jacobi(geom: &BackgroundGeometry, tuple: &PotentialTuple, config: &IterationConfig) -> Result<Sweep, StepError> {
    jacobi(geom, tuple, config, true)
}

fn gauss_seidel(geom: &BackgroundGeometry, tuple: &PotentialTuple, config: &IterationConfig, warm: bool) -> Result<Sweep, StepError> {
    let k = tuple.k();
    let mut current = tuple.clone();
    let mut solved = Vec::with_capacity(k);
    for i in order(k, config.reverse_order) {
        let g = current.sum_except(i);
        let (pot, report) = solve_slice(geom, i, &g, warm.then(|| tuple.field(i)), config)?;
        current.set(pot.clone());
        solved.push((i, pot, report));
    }
    Ok(assemble(k, current, solved))
}

fn jacobi(geom: &BackgroundGeometry, tuple: &PotentialTuple, config: &IterationConfig, warm: bool) -> Result<Sweep, StepError> {
    let k = tuple.k();
    let results: Vec<Result<(AdmissiblePotential, SolveReport), StepError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = order(k, config.reverse_order)
            .into_iter()
            .map(|i| {
                let g = tuple.sum_except(i);
                scope.spawn(move || solve_slice(geom, i, &g, warm.then(|| tuple.field(i)), config))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("slice solve panicked")).collect()
    });
    let mut solved = Vec::with_capacity(k);
    let mut first_err: Option<StepError> = None;
    for r in results {
        match r {
            Ok((pot, report)) => solved.push((pot.index(), pot, report)),
            Err(e) => {
                if first_err.as_ref().map_or(true, |f| e.class < f.class) {
                    first_err = Some(e);
                }
            }
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    Ok(assemble(k, tuple.clone(), solved))
}

#[derive(Debug)]
pub enum TerminationReason {
    Converged,
    MaxOuter,
    /// The sweep producing `step` failed in class `class`.
    InnerFailure { step: usize, class: usize, error: SolveError },
}

impl TerminationReason {
    pub fn label(&self) -> &'static str {
        match self {
            TerminationReason::Converged => "converged",
            TerminationReason::MaxOuter => "max_outer",
            TerminationReason::InnerFailure { .. } => "inner_failure",
        }
    }
}

#[derive(Debug)]
pub struct IterationState {
    /// Number of completed sweeps.
    pub step: usize,
    pub tuple: PotentialTuple,
    pub ledger: EnergyLedger,
    pub converged: bool,
    pub reason: TerminationReason,
    /// Normalization constants from the last completed sweep.
    pub shifts: Vec<f64>,
    /// `max_i ||rho_i||_inf` of the returned tuple.
    pub rho_max: f64,
    /// How each slice was solved, per completed sweep.
    pub outcomes: Vec<Vec<SolveOutcome>>,
    pub wall_ms: f64,
}

/// Runs sweeps from `init` until the certificate `max_i ||rho_i||_inf <= tol_fixed_point`
/// holds, `max_outer` sweeps are done, or an inner solve fails.
///
/// For `lambda = +1` the first sweep solves every slice by the continuity path from zero;
/// later sweeps are warm-started.
pub fn run(geom: &BackgroundGeometry, init: PotentialTuple, config: &IterationConfig) -> Result<IterationState, ConfigError> {
    config.validate()?;
    let start = Instant::now();
    let elapsed = || start.elapsed().as_secs_f64() * 1e3;
    let mut ledger = EnergyLedger::new();
    let mut tuple = init;
    let mut row = LedgerRow::evaluate(geom, &tuple, 0, 0, elapsed(), config.convention);
    let mut shifts = vec![0.0; tuple.k()];
    let mut step = 0;
    let mut recorded = true;
    let mut rho_max = row.max_rho();
    let mut outcomes = Vec::new();
    ledger.push(row.clone());

    let reason = loop {
        if rho_max <= config.tol_fixed_point {
            break TerminationReason::Converged;
        }
        if step == config.max_outer {
            break TerminationReason::MaxOuter;
        }
        let warm = step > 0 || geom.lambda() == Sign::Negative;
        let sweep = match config.mode {
            SweepMode::GaussSeidel => gauss_seidel(geom, &tuple, config, warm),
            SweepMode::Jacobi => jacobi(geom, &tuple, config, warm),
        };
        let sweep = match sweep {
            Ok(s) => s,
            Err(e) => break TerminationReason::InnerFailure { step: step + 1, class: e.class, error: e.error },
        };
        step += 1;
        tuple = sweep.tuple;
        shifts = sweep.shifts;
        outcomes.push(sweep.reports.iter().map(|r| r.outcome).collect());
        row = LedgerRow::evaluate(geom, &tuple, step, sweep.inner_iters, elapsed(), config.convention);
        rho_max = row.max_rho();
        recorded = step % config.record_every == 0;
        if recorded {
            ledger.push(row.clone());
        }
    };
    if !recorded {
        ledger.push(row);
    }
    Ok(IterationState {
        step,
        tuple,
        ledger,
        converged: matches!(reason, TerminationReason::Converged),
        reason,
        shifts,
        rho_max,
        outcomes,
        wall_ms: elapsed(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MonotoneViolation {
    /// `D` rose by `delta` between row `row - 1` and row `row`.
    Increase { row: usize, step: usize, delta: f64 },
    /// `D` stayed flat for three consecutive transitions ending at `row`
    /// while the residual was still `rho_max`.
    Stagnation { row: usize, step: usize, rho_max: f64 },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct MonotoneReport {
    pub violations: Vec<MonotoneViolation>,
}

impl MonotoneReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Relative slack on `D` increases.
pub const MONOTONE_SLACK: f64 = 1e-9;
/// Residual above which a flat `D` counts as stagnation.
pub const STAGNATION_RHO: f64 = 1e-3;
const STAGNATION_RUN: usize = 3;

/// Flags `D` increases beyond `1e-9 (1 + |D|)` and flat stretches away from a fixed point.
pub fn check_monotone(ledger: &EnergyLedger) -> MonotoneReport {
    let mut violations = Vec::new();
    let mut flat = 0;
    for (r, pair) in ledger.rows.windows(2).enumerate() {
        let (prev, next) = (&pair[0], &pair[1]);
        let slack = MONOTONE_SLACK * (1.0 + prev.d.abs());
        let delta = next.d - prev.d;
        if delta > slack {
            violations.push(MonotoneViolation::Increase { row: r + 1, step: next.step, delta });
        }
        if delta.abs() <= slack && prev.max_rho() >= STAGNATION_RHO {
            flat += 1;
            if flat == STAGNATION_RUN {
                violations.push(MonotoneViolation::Stagnation { row: r + 1, step: next.step, rho_max: prev.max_rho() });
            }
        } else {
            flat = 0;
        }
    }
    MonotoneReport { violations }
}
