use std::f64::consts::PI;

use cri_core::functionals::{ding, PotentialTuple};
use cri_core::grid::{PeriodicGrid, ScalarField, SymMat};
use cri_core::iteration::{run, IterationConfig};
use cri_core::monge_ampere::{solve_calabi_yau, solve_tke, BackgroundGeometry, NormMode, Sign};
use cri_core::oracle::*;

fn sine_geometry(lambda: Sign, nn: usize, k: usize) -> BackgroundGeometry {
    let g = PeriodicGrid::new(1, nn).unwrap();
    let f = ScalarField::from_fn(g, |x| 1.0 + 0.5 * (2.0 * PI * x[0]).sin()).unwrap();
    BackgroundGeometry::new(lambda, vec![SymMat::scalar(1, 1.0); k], f).unwrap()
}

fn normalized(t: &PotentialTuple, mode: NormMode) -> Vec<ScalarField> {
    t.fields().map(|f| mode.apply(f).0).collect()
}

fn distance(a: &PotentialTuple, b: &PotentialTuple, mode: NormMode) -> f64 {
    normalized(a, mode).iter().zip(normalized(b, mode).iter()).fold(0.0, |m, (x, y)| m.max(x.sup_distance(y)))
}

#[test]
fn constant_data_gives_the_zero_tuple() {
    let g = PeriodicGrid::new(1, 8).unwrap();
    let geom = BackgroundGeometry::new(Sign::Negative, vec![SymMat::scalar(1, 2.0); 2], ScalarField::constant(g, 3.0))
        .unwrap();
    let fp = oracle_fixed_point(&geom, &OracleOptions::default()).unwrap();
    assert!(fp.tuple.sup_distance(&PotentialTuple::zeros(&geom)) <= 1e-14);
    let descent = oracle_ding_descent(&geom, &DescentOptions::default()).unwrap();
    assert_eq!(descent.iterations, 0);
    assert!((descent.ding - (3.0f64).ln()).abs() <= 1e-14);
}

#[test]
fn large_grids_are_refused() {
    let geom = sine_geometry(Sign::Negative, 128, 2);
    assert_eq!(
        oracle_fixed_point(&geom, &OracleOptions::default()).unwrap_err(),
        OracleError::Intractable { points: 128, cap: 64 }
    );
    assert!(matches!(oracle_ding_descent(&geom, &DescentOptions::default()), Err(OracleError::Intractable { .. })));
    let g2 = PeriodicGrid::new(2, 16).unwrap();
    let rhs = ScalarField::zeros(g2);
    assert!(matches!(
        oracle_slice_solve(g2, &SymMat::identity(2), -1.0, &rhs, &OracleOptions::default()),
        Err(OracleError::Intractable { points: 256, .. })
    ));
}

#[test]
fn negative_slice_matches_dense_solve() {
    let geom = sine_geometry(Sign::Negative, 16, 1);
    let g = geom.grid();
    let (pot, report) = solve_tke(&geom, 0, &ScalarField::zeros(g), NormMode::Mean).unwrap();
    let log_f = ScalarField::from_fn(g, |x| (1.0 + 0.5 * (2.0 * PI * x[0]).sin()).ln()).unwrap();
    let (psi, s, res) = oracle_slice_solve(g, &SymMat::scalar(1, 1.0), -1.0, &log_f, &OracleOptions::default()).unwrap();
    assert!(res <= 1e-12);
    assert!(pot.psi().sup_distance(&psi) <= 1e-8);
    assert!((report.constant.ln() - s).abs() <= 1e-8);
}

#[test]
fn calabi_yau_matches_dense_solve() {
    let g = PeriodicGrid::new(1, 8).unwrap();
    let rho = ScalarField::from_fn(g, |x| 1.0 + 0.3 * (2.0 * PI * x[0]).cos()).unwrap();
    let log_rho = ScalarField::new(g, rho.values().iter().map(|v| v.ln()).collect()).unwrap();
    let (pot, report) = solve_calabi_yau(&SymMat::scalar(1, 1.0), &rho).unwrap();
    let (psi, s, _) = oracle_slice_solve(g, &SymMat::scalar(1, 1.0), 0.0, &log_rho, &OracleOptions::default()).unwrap();
    assert!(pot.psi().sup_distance(&psi) <= 1e-8);
    assert!((report.constant.ln() - s).abs() <= 1e-8);
}

#[test]
fn stacked_solve_agrees_with_the_iteration() {
    let geom = sine_geometry(Sign::Negative, 8, 2);
    let fp = oracle_fixed_point(&geom, &OracleOptions::default()).unwrap();
    assert!(fp.residual <= 1e-12);
    let st = run(&geom, PotentialTuple::zeros(&geom), &IterationConfig::default()).unwrap();
    assert!(st.converged);
    assert!(distance(&st.tuple, &fp.tuple, NormMode::Sup) <= 1e-5);
    assert!((ding(&geom, &st.tuple) - ding(&geom, &fp.tuple)).abs() <= 1e-7);
}

#[test]
fn stacked_solve_in_two_dimensions() {
    let g = PeriodicGrid::new(2, 8).unwrap();
    let f = ScalarField::from_fn(g, |x| 1.0 + 0.3 * (2.0 * PI * (x[0] + x[1])).cos()).unwrap();
    let a = SymMat::from_row_major(2, &[1.5, 0.2, 0.2, 1.0]).unwrap();
    let geom = BackgroundGeometry::new(Sign::Negative, vec![a], f).unwrap();
    let fp = oracle_fixed_point(&geom, &OracleOptions::default()).unwrap();
    let st = run(&geom, PotentialTuple::zeros(&geom), &IterationConfig::default()).unwrap();
    assert!(st.converged);
    assert!(distance(&st.tuple, &fp.tuple, NormMode::Sup) <= 1e-5);
    assert_eq!(oracle_ding_descent(&geom, &DescentOptions::default()).unwrap_err(), OracleError::UnsupportedDimension(2));
}

#[test]
fn positive_stacked_solve_on_near_constant_data() {
    let g = PeriodicGrid::new(1, 8).unwrap();
    let f = ScalarField::from_fn(g, |x| 1.0 + 0.05 * (2.0 * PI * x[0]).sin()).unwrap();
    let geom = BackgroundGeometry::new(Sign::Positive, vec![SymMat::scalar(1, 1.0); 2], f).unwrap();
    let fp = oracle_fixed_point(&geom, &OracleOptions::default()).unwrap();
    let st = run(&geom, PotentialTuple::zeros(&geom), &IterationConfig::default()).unwrap();
    assert!(st.converged);
    assert!(distance(&st.tuple, &fp.tuple, NormMode::Sup) <= 1e-5);
    assert_eq!(oracle_ding_descent(&geom, &DescentOptions::default()).unwrap_err(), OracleError::WrongSign);
}

#[test]
fn descent_and_stacked_solve_agree() {
    let geom = sine_geometry(Sign::Negative, 8, 2);
    let fp = oracle_fixed_point(&geom, &OracleOptions::default()).unwrap();
    let descent = oracle_ding_descent(&geom, &DescentOptions::default()).unwrap();
    assert!(descent.gradient_norm <= 1e-6);
    assert!((descent.ding - ding(&geom, &fp.tuple)).abs() <= 1e-7);
    assert!(distance(&descent.tuple, &fp.tuple, NormMode::Mean) <= 1e-4);
    for w in descent.trace.windows(2) {
        assert!(w[1] < w[0]);
    }
}
