use std::f64::consts::PI;

use cri_core::functionals::*;
use cri_core::grid::{PeriodicGrid, ScalarField, SymMat};
use cri_core::iteration::*;
use cri_core::monge_ampere::{BackgroundGeometry, NormMode, Sign, SolveError, SolveOutcome};
use proptest::prelude::*;

fn sine_geometry(lambda: Sign, nn: usize, k: usize, amp: f64) -> BackgroundGeometry {
    let g = PeriodicGrid::new(1, nn).unwrap();
    let f = ScalarField::from_fn(g, |x| 1.0 + amp * (2.0 * PI * x[0]).sin()).unwrap();
    BackgroundGeometry::new(lambda, vec![SymMat::scalar(1, 1.0); k], f).unwrap()
}

fn constant_geometry(lambda: Sign, n: usize, k: usize) -> BackgroundGeometry {
    let g = PeriodicGrid::new(n, 8).unwrap();
    let a = if n == 1 { SymMat::scalar(1, 1.5) } else { SymMat::from_row_major(2, &[1.5, 0.2, 0.2, 1.0]).unwrap() };
    BackgroundGeometry::new(lambda, vec![a; k], ScalarField::constant(g, 2.0)).unwrap()
}

fn sup_normalized(t: &PotentialTuple) -> Vec<ScalarField> {
    t.fields().map(|f| NormMode::Sup.apply(f).0).collect()
}

fn limit_distance(a: &PotentialTuple, b: &PotentialTuple) -> f64 {
    sup_normalized(a).iter().zip(sup_normalized(b).iter()).fold(0.0, |m, (x, y)| m.max(x.sup_distance(y)))
}

fn same_ledger_values(a: &EnergyLedger, b: &EnergyLedger) -> bool {
    a.len() == b.len()
        && a.rows.iter().zip(&b.rows).all(|(x, y)| {
            let strip = |r: &LedgerRow| LedgerRow { wall_ms: 0.0, ..r.clone() };
            let (x, y) = (strip(x), strip(y));
            x.step == y.step
                && x.inner_iters == y.inner_iters
                && [(&x.am, &y.am), (&x.i, &y.i), (&x.j, &y.j), (&x.rho_max, &y.rho_max), (&x.osc, &y.osc)]
                    .iter()
                    .all(|(u, v)| u.iter().zip(v.iter()).all(|(p, q)| p.to_bits() == q.to_bits()))
                && x.d.to_bits() == y.d.to_bits()
                && x.l.to_bits() == y.l.to_bits()
        })
}

#[test]
fn constant_data_is_converged_at_step_zero() {
    for lambda in [Sign::Negative, Sign::Positive] {
        for n in [1, 2] {
            let geom = constant_geometry(lambda, n, 2);
            let st = run(&geom, PotentialTuple::zeros(&geom), &IterationConfig::default()).unwrap();
            assert!(st.converged);
            assert_eq!(st.step, 0);
            assert_eq!(st.ledger.len(), 1);
            assert!(st.rho_max <= 1e-14);
        }
    }
}

#[test]
fn constant_data_is_a_fixed_point_of_both_sweeps() {
    for lambda in [Sign::Negative, Sign::Positive] {
        let geom = constant_geometry(lambda, 1, 3);
        let zero = PotentialTuple::zeros(&geom);
        let cfg = IterationConfig::default();
        let gs = step_gauss_seidel(&geom, &zero, &cfg).unwrap();
        let jac = step_jacobi(&geom, &zero, &cfg).unwrap();
        assert!(gs.tuple.sup_distance(&zero) <= 1e-12);
        assert!(jac.tuple.sup_distance(&zero) <= 1e-12);
    }
}

#[test]
fn single_class_settles_in_one_step() {
    for lambda in [Sign::Negative, Sign::Positive] {
        let geom = sine_geometry(lambda, 32, 1, 0.3);
        let cfg = IterationConfig::default();
        let first = step_gauss_seidel(&geom, &PotentialTuple::zeros(&geom), &cfg).unwrap();
        let second = step_gauss_seidel(&geom, &first.tuple, &cfg).unwrap();
        assert!(second.tuple.sup_distance(&first.tuple) <= 1e-10);
        // with one class the two sweep orders coincide
        let jac = step_jacobi(&geom, &PotentialTuple::zeros(&geom), &cfg).unwrap();
        assert_eq!(jac.tuple.field(0), first.tuple.field(0));
    }
}

#[test]
fn negative_two_class_run_converges_monotonically() {
    let geom = sine_geometry(Sign::Negative, 64, 2, 0.5);
    let cfg = IterationConfig::default();
    let st = run(&geom, PotentialTuple::zeros(&geom), &cfg).unwrap();
    assert!(st.converged, "{:?}", st.reason);
    assert!(st.step <= 200);
    assert!(check_monotone(&st.ledger).is_clean());
    for w in st.ledger.rows.windows(2) {
        assert!(w[1].d < w[0].d, "D must strictly decrease before convergence");
    }
    let rho = ricci_potentials(&geom, &st.tuple);
    assert!(rho.iter().all(|r| r.sup_norm() <= 1e-8));
    let again = step_gauss_seidel(&geom, &st.tuple, &cfg).unwrap();
    assert!(again.tuple.sup_distance(&st.tuple) <= 1e-9, "{}", again.tuple.sup_distance(&st.tuple));
}

#[test]
fn limit_does_not_depend_on_start_or_order() {
    let geom = sine_geometry(Sign::Negative, 64, 2, 0.5);
    let cfg = IterationConfig::default();
    let base = run(&geom, PotentialTuple::zeros(&geom), &cfg).unwrap();
    let g = geom.grid();
    let cos_init = |amp: f64| ScalarField::from_fn(g, |x| amp * (2.0 * PI * x[0]).cos()).unwrap();
    // amplitude 0.1 leaves the positivity cone when A = 1
    assert!(PotentialTuple::new(&geom, vec![cos_init(0.1), cos_init(0.1)]).is_err());
    let cos = cos_init(0.02);
    let other = run(&geom, PotentialTuple::new(&geom, vec![cos.clone(), cos]).unwrap(), &cfg).unwrap();
    assert!(other.converged);
    assert!(limit_distance(&base.tuple, &other.tuple) <= 1e-6);
    let reversed = run(&geom, PotentialTuple::zeros(&geom), &IterationConfig { reverse_order: true, ..cfg }).unwrap();
    assert!(reversed.converged);
    assert!(limit_distance(&base.tuple, &reversed.tuple) <= 1e-6);
}

#[test]
fn runs_are_bit_reproducible() {
    let geom = sine_geometry(Sign::Negative, 32, 3, 0.4);
    for mode in [SweepMode::GaussSeidel, SweepMode::Jacobi] {
        let cfg = IterationConfig { mode, ..Default::default() };
        let a = run(&geom, PotentialTuple::zeros(&geom), &cfg).unwrap();
        let b = run(&geom, PotentialTuple::zeros(&geom), &cfg).unwrap();
        assert!(same_ledger_values(&a.ledger, &b.ledger));
        assert!(a.tuple.fields().zip(b.tuple.fields()).all(|(x, y)| x == y));
    }
}

#[test]
fn jacobi_reaches_the_same_limit() {
    let geom = sine_geometry(Sign::Negative, 64, 2, 0.5);
    let gs = run(&geom, PotentialTuple::zeros(&geom), &IterationConfig::default()).unwrap();
    let jac =
        run(&geom, PotentialTuple::zeros(&geom), &IterationConfig { mode: SweepMode::Jacobi, ..Default::default() })
            .unwrap();
    assert_eq!(jac.ledger.len(), jac.step + 1);
    if jac.converged {
        assert!(limit_distance(&gs.tuple, &jac.tuple) <= 1e-6);
    }
}

#[test]
fn ledger_stride_keeps_first_and_last_rows() {
    let geom = sine_geometry(Sign::Negative, 32, 2, 0.5);
    let cfg = IterationConfig { record_every: 2, tol_fixed_point: 1e-12, ..Default::default() };
    let st = run(&geom, PotentialTuple::zeros(&geom), &cfg).unwrap();
    let steps: Vec<usize> = st.ledger.rows.iter().map(|r| r.step).collect();
    assert_eq!(steps[0], 0);
    assert_eq!(*steps.last().unwrap(), st.step);
    assert!(steps[1..steps.len() - 1].iter().all(|s| s % 2 == 0));
}

#[test]
fn truncated_run_reports_max_outer() {
    let geom = sine_geometry(Sign::Negative, 32, 2, 0.5);
    let st = run(&geom, PotentialTuple::zeros(&geom), &IterationConfig { max_outer: 1, ..Default::default() }).unwrap();
    assert!(!st.converged);
    assert!(matches!(st.reason, TerminationReason::MaxOuter));
    assert_eq!(st.step, 1);
    assert!(st.rho_max > 1e-8);
}

#[test]
fn two_dimensional_run_converges() {
    let g = PeriodicGrid::new(2, 16).unwrap();
    let f = ScalarField::from_fn(g, |x| 1.0 + 0.3 * (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos()).unwrap();
    let a = SymMat::from_row_major(2, &[1.2, 0.1, 0.1, 0.9]).unwrap();
    let geom = BackgroundGeometry::new(Sign::Negative, vec![a, SymMat::identity(2)], f).unwrap();
    let st = run(&geom, PotentialTuple::zeros(&geom), &IterationConfig::default()).unwrap();
    assert!(st.converged, "{:?}", st.reason);
    let rho = ricci_potentials_with(&geom, &st.tuple, VolumeConvention::DiscreteMass);
    assert!(rho.iter().all(|r| r.sup_norm() <= 1e-8));
}

#[test]
fn positive_near_constant_run_uses_the_continuity_path() {
    let geom = sine_geometry(Sign::Positive, 64, 2, 0.05);
    let st = run(&geom, PotentialTuple::zeros(&geom), &IterationConfig::default()).unwrap();
    assert!(st.converged, "{:?}", st.reason);
    assert!(st.outcomes[0].iter().all(|o| *o == SolveOutcome::Continuity));
    assert!(check_monotone(&st.ledger).is_clean());
}

#[test]
fn positive_large_perturbation_breaks_down() {
    let g = PeriodicGrid::new(1, 64).unwrap();
    let f = ScalarField::from_fn(g, |x| (3.0 * (2.0 * PI * x[0]).sin()).exp()).unwrap();
    let geom = BackgroundGeometry::new(Sign::Positive, vec![SymMat::scalar(1, 200.0); 2], f).unwrap();
    let st = run(&geom, PotentialTuple::zeros(&geom), &IterationConfig::default()).unwrap();
    assert!(!st.converged);
    match &st.reason {
        TerminationReason::InnerFailure { step, class, error: SolveError::ContinuityBreakdown { last_good_t, .. } } => {
            assert_eq!((*step, *class), (1, 0));
            assert!(last_good_t.unwrap() < 1.0);
        }
        other => panic!("expected a continuity breakdown, got {other:?}"),
    }
    assert_eq!(st.ledger.len(), 1);
}

fn row(step: usize, d: f64, rho: f64) -> LedgerRow {
    LedgerRow {
        step,
        am: vec![0.0],
        i: vec![0.0],
        j: vec![0.0],
        l: 0.0,
        d,
        j_total: 0.0,
        rho_max: vec![rho],
        osc: vec![0.0],
        eq_ratio: vec![1.0],
        inner_iters: 0,
        wall_ms: 0.0,
    }
}

fn ledger(ds: &[f64], rho: f64) -> EnergyLedger {
    EnergyLedger { rows: ds.iter().enumerate().map(|(s, &d)| row(s, d, rho)).collect() }
}

#[test]
fn monotone_check_examples() {
    assert!(check_monotone(&ledger(&[1.0, 0.5, 0.2, 0.1], 0.1)).is_clean());
    let report = check_monotone(&ledger(&[1.0, 0.5, 0.501, 0.4], 0.1));
    assert_eq!(report.violations.len(), 1);
    match report.violations[0] {
        MonotoneViolation::Increase { row, delta, .. } => {
            assert_eq!(row, 2);
            assert!((delta - 1e-3).abs() < 1e-12);
        }
        ref v => panic!("unexpected {v:?}"),
    }
    let flat = check_monotone(&ledger(&[1.0, 0.5, 0.5, 0.5, 0.5], 0.1));
    assert_eq!(flat.violations.len(), 1);
    assert!(matches!(flat.violations[0], MonotoneViolation::Stagnation { row: 4, .. }));
    // flat near a fixed point is expected
    assert!(check_monotone(&ledger(&[0.5, 0.5, 0.5, 0.5], 1e-9)).is_clean());
}

#[test]
fn config_validation_lists_every_problem() {
    let mut cfg = IterationConfig { tol_fixed_point: 0.0, max_outer: 0, record_every: 0, ..Default::default() };
    cfg.inner.tol = -1.0;
    let err = cfg.validate().unwrap_err();
    assert_eq!(err.0.len(), 4);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn gauss_seidel_never_raises_ding(
        amps in prop::collection::vec(-0.6f64..0.6, 3),
        k in 1usize..4,
        a in 0.5f64..3.0,
    ) {
        let g = PeriodicGrid::new(1, 32).unwrap();
        let f = ScalarField::from_fn(g, |x| {
            let t = 2.0 * PI * x[0];
            (amps[0] * t.sin() + amps[1] * (2.0 * t).cos() + amps[2] * (3.0 * t).sin()).exp()
        }).unwrap();
        let geom = BackgroundGeometry::new(Sign::Negative, vec![SymMat::scalar(1, a); k], f).unwrap();
        let st = run(&geom, PotentialTuple::zeros(&geom), &IterationConfig::default()).unwrap();
        prop_assert!(st.converged);
        prop_assert!(check_monotone(&st.ledger).is_clean());
    }
}
