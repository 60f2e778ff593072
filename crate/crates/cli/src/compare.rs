//! Engine versus reference oracles on a coarse copy of a run.

use cri_core::functionals::{ding, PotentialTuple};
use cri_core::iteration::run;
use cri_core::monge_ampere::{NormMode, Sign};
use cri_core::oracle::{oracle_ding_descent, oracle_fixed_point, DescentOptions, OracleError, OracleOptions};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::config::RunConfig;

#[derive(Debug, Error)]
pub enum CompareError {
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("cannot build the coarse geometry: {0}")]
    Geometry(String),
}

#[derive(Clone, Debug)]
pub struct OracleReport {
    pub points: usize,
    /// Sup-norm distance per class after sup normalization.
    pub psi_sup_err: Vec<f64>,
    pub d_err: f64,
    pub engine_d: f64,
    pub oracle_d: f64,
    pub oracle_residual: f64,
    pub engine_converged: bool,
    pub engine_steps: usize,
    /// `|D_descent - D_fixed_point|`, for `lambda = -1` in dimension one only.
    pub descent_d_err: Option<f64>,
}

impl OracleReport {
    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("N".into(), json!(self.points));
        for (i, e) in self.psi_sup_err.iter().enumerate() {
            m.insert(format!("psi_sup_err_{}", i + 1), json!(e));
        }
        m.insert("D_err".into(), json!(self.d_err));
        m.insert("descent_D_err".into(), json!(self.descent_d_err));
        m.insert("engine_D".into(), json!(self.engine_d));
        m.insert("oracle_D".into(), json!(self.oracle_d));
        m.insert("oracle_residual".into(), json!(self.oracle_residual));
        m.insert("engine_converged".into(), json!(self.engine_converged));
        m.insert("engine_steps".into(), json!(self.engine_steps));
        Value::Object(m)
    }
}

/// Default coarse resolution: at most 8 per axis and at most the oracle's point cap.
pub fn default_points(cfg: &RunConfig) -> usize {
    let mut nn = cfg.points.min(8);
    while nn > 4 && nn.pow(cfg.n as u32) > cri_core::oracle::ORACLE_POINT_CAP {
        nn -= 2;
    }
    nn
}

pub fn compare_oracle(cfg: &RunConfig, points: Option<usize>) -> Result<OracleReport, CompareError> {
    let nn = points.unwrap_or_else(|| default_points(cfg));
    let cap = cri_core::oracle::ORACLE_POINT_CAP;
    let total = nn.checked_pow(cfg.n as u32).unwrap_or(usize::MAX);
    if total > cap {
        return Err(OracleError::Intractable { points: total, cap }.into());
    }
    let geom = cfg.geometry_at(nn).map_err(CompareError::Geometry)?;
    let fp = oracle_fixed_point(&geom, &OracleOptions::default())?;
    let state = run(&geom, PotentialTuple::zeros(&geom), &cfg.iteration).expect("iteration config validated at load");
    let psi_sup_err = state
        .tuple
        .fields()
        .zip(fp.tuple.fields())
        .map(|(a, b)| NormMode::Sup.apply(a).0.sup_distance(&NormMode::Sup.apply(b).0))
        .collect();
    // D is evaluated on sup-normalized tuples; in dimension two and up it depends on the shift
    let sup_tuple = |t: &PotentialTuple| {
        PotentialTuple::new(&geom, t.fields().map(|f| NormMode::Sup.apply(f).0).collect()).expect("shifts keep admissibility")
    };
    let engine_d = ding(&geom, &sup_tuple(&state.tuple));
    let oracle_d = ding(&geom, &sup_tuple(&fp.tuple));
    let descent_d_err = if geom.lambda() == Sign::Negative && cfg.n == 1 {
        let descent = oracle_ding_descent(&geom, &DescentOptions::default())?;
        Some((descent.ding - oracle_d).abs())
    } else {
        None
    };
    Ok(OracleReport {
        points: nn,
        psi_sup_err,
        d_err: (engine_d - oracle_d).abs(),
        engine_d,
        oracle_d,
        oracle_residual: fp.residual,
        engine_converged: state.converged,
        engine_steps: state.step,
        descent_d_err,
    })
}
