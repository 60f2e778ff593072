//! Drives one run and writes its outputs.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use cri_core::grid::write_field_file;
use cri_core::iteration::{check_monotone, run, IterationState, MonotoneReport, SweepMode, TerminationReason};
use serde::Serialize;
use thiserror::Error;

use crate::config::RunConfig;

pub const EXIT_CONVERGED: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_MAX_OUTER: i32 = 2;
pub const EXIT_INNER_FAILURE: i32 = 3;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("cannot write {path}: {message}")]
    Output { path: String, message: String },
}

fn output_err(path: &Path, e: impl std::fmt::Display) -> RunError {
    RunError::Output { path: path.display().to_string(), message: e.to_string() }
}

pub fn exit_code(reason: &TerminationReason) -> i32 {
    match reason {
        TerminationReason::Converged => EXIT_CONVERGED,
        TerminationReason::MaxOuter => EXIT_MAX_OUTER,
        TerminationReason::InnerFailure { .. } => EXIT_INNER_FAILURE,
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Failure {
    pub step: usize,
    /// One-based class index.
    pub class: usize,
    pub kind: &'static str,
    pub message: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub scenario: String,
    pub mode: SweepMode,
    pub lambda: f64,
    pub n: usize,
    #[serde(rename = "N")]
    pub points: usize,
    pub k: usize,
    pub steps: usize,
    pub converged: bool,
    pub reason: &'static str,
    #[serde(rename = "final_D")]
    pub final_d: f64,
    pub final_rho_max: f64,
    pub wall_ms: f64,
    pub exit_code: i32,
    pub failure: Option<Failure>,
    /// Checked for Gauss–Seidel runs only.
    pub monotone: Option<MonotoneReport>,
    pub normalization_shifts: Vec<f64>,
    pub ledger_rows: usize,
    pub seed: u64,
}

#[derive(Serialize)]
struct ConfigFailure<'a> {
    converged: bool,
    reason: &'static str,
    exit_code: i32,
    errors: &'a [String],
}

/// Writes a summary for a config that never ran.
pub fn write_config_failure(out: &Path, errors: &[String]) -> Result<(), RunError> {
    std::fs::create_dir_all(out).map_err(|e| output_err(out, e))?;
    let body = ConfigFailure { converged: false, reason: "config_error", exit_code: EXIT_CONFIG, errors };
    write_json(&out.join("summary.json"), &body)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), RunError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| output_err(path, e))?);
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| output_err(path, e))?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| output_err(path, e))
}

fn write_dat(path: &Path, header: &str, rows: impl Iterator<Item = (usize, f64)>) -> Result<(), RunError> {
    let mut w = BufWriter::new(File::create(path).map_err(|e| output_err(path, e))?);
    let body = || -> std::io::Result<()> {
        writeln!(w, "# {header}")?;
        for (s, v) in rows {
            writeln!(w, "{s} {v:.16e}")?;
        }
        w.flush()
    };
    body().map_err(|e| output_err(path, e))
}

pub struct RunOutcome {
    pub state: IterationState,
    pub summary: Summary,
}

/// Runs the iteration and writes `ledger.csv`, `summary.json`, `psi_<i>.field`,
/// `ding.dat` and `residual.dat` into `out`.
pub fn run_scenario(cfg: &RunConfig, out: &Path) -> Result<RunOutcome, RunError> {
    std::fs::create_dir_all(out).map_err(|e| output_err(out, e))?;
    let geom = cfg.geometry();
    let state = run(geom, cfg.initial_tuple(), &cfg.iteration).expect("iteration config validated at load");

    let ledger_path = out.join("ledger.csv");
    let file = File::create(&ledger_path).map_err(|e| output_err(&ledger_path, e))?;
    state.ledger.write_csv(BufWriter::new(file)).map_err(|e| output_err(&ledger_path, e))?;
    for (i, psi) in state.tuple.fields().enumerate() {
        let path = out.join(format!("psi_{}.field", i + 1));
        write_field_file(psi, &path).map_err(|e| output_err(&path, e))?;
    }
    write_dat(&out.join("ding.dat"), "step D", state.ledger.rows.iter().map(|r| (r.step, r.d)))?;
    write_dat(&out.join("residual.dat"), "step max_rho", state.ledger.rows.iter().map(|r| (r.step, r.max_rho())))?;

    let failure = match &state.reason {
        TerminationReason::InnerFailure { step, class, error } => {
            Some(Failure { step: *step, class: class + 1, kind: error.label(), message: error.to_string() })
        }
        _ => None,
    };
    let summary = Summary {
        scenario: cfg.name.clone(),
        mode: cfg.iteration.mode,
        lambda: cfg.lambda.value(),
        n: cfg.n,
        points: cfg.points,
        k: cfg.k,
        steps: state.step,
        converged: state.converged,
        reason: state.reason.label(),
        final_d: state.ledger.last().map_or(f64::NAN, |r| r.d),
        final_rho_max: state.rho_max,
        wall_ms: state.wall_ms,
        exit_code: exit_code(&state.reason),
        failure,
        monotone: (cfg.iteration.mode == SweepMode::GaussSeidel).then(|| check_monotone(&state.ledger)),
        normalization_shifts: state.shifts.clone(),
        ledger_rows: state.ledger.len(),
        seed: cfg.seed,
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(RunOutcome { state, summary })
}
