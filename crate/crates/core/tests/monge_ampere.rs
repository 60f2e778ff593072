use std::f64::consts::PI;

use cri_core::grid::{hessian, PeriodicGrid, ScalarField, SymMat};
use cri_core::monge_ampere::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn grid(n: usize, nn: usize) -> PeriodicGrid {
    PeriodicGrid::new(n, nn).unwrap()
}

fn geometry(lambda: Sign, a: SymMat, k: usize, f: ScalarField) -> BackgroundGeometry {
    BackgroundGeometry::new(lambda, vec![a; k], f).unwrap()
}

fn sine(x: &[f64]) -> f64 {
    (2.0 * PI * x[0]).sin()
}

#[test]
fn density_of_zero_potential_is_det_a() {
    let g = grid(2, 8);
    let a = SymMat::from_row_major(2, &[2.0, 0.5, 0.5, 1.5]).unwrap();
    let d = ma_density(&a, &ScalarField::zeros(g));
    assert!(d.values().iter().all(|&v| v == a.det()));
}

#[test]
fn density_matches_symbolic_two_by_two() {
    let nn = 16;
    let g = grid(2, nn);
    let psi = ScalarField::from_fn(g, |x| 0.01 * (2.0 * PI * x[0]).cos()).unwrap();
    let d = ma_density(&SymMat::identity(2), &psi);
    let h = 1.0 / nn as f64;
    // second difference of cos(2 pi x) is -2 (1 - cos(2 pi h)) / h^2 times the cosine
    let symbol = -2.0 * (1.0 - (2.0 * PI * h).cos()) / (h * h);
    for p in 0..g.len() {
        let c = (2.0 * PI * g.position(p)[0]).cos();
        // det [[1 + 0.01 symbol c, 0], [0, 1]]
        let expect = (1.0 + 0.01 * symbol * c) * 1.0 - 0.0 * 0.0;
        assert!((d.values()[p] - expect).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn density_ignores_constant_shifts(
        ks in proptest::collection::vec(-(1i64 << 20)..(1i64 << 20), 64),
        c in -100i64..100,
    ) {
        // dyadic values with few bits keep every addition exact
        let g = grid(2, 8);
        let psi = ScalarField::new(g, ks.iter().map(|&k| k as f64 / (1u64 << 24) as f64).collect()).unwrap();
        let a = SymMat::from_row_major(2, &[1.0, 0.25, 0.25, 2.0]).unwrap();
        let d0 = ma_density(&a, &psi);
        let d1 = ma_density(&a, &psi.shifted(c as f64));
        for (x, y) in d0.values().iter().zip(d1.values()) {
            prop_assert_eq!(x.to_bits(), y.to_bits());
        }
    }

    #[test]
    fn mixed_discriminant_is_symmetric_multilinear(
        entries in proptest::collection::vec(-2.0f64..2.0, 18),
        s in -3.0f64..3.0,
    ) {
        let mats: Vec<SymMat> = (0..3)
            .map(|m| {
                let e = &entries[6 * m..6 * m + 6];
                SymMat::from_row_major(3, &[e[0], e[1], e[2], e[1], e[3], e[4], e[2], e[4], e[5]]).unwrap()
            })
            .collect();
        let d = mixed_discriminant(&mats).unwrap();
        let scale = 1.0 + d.abs();
        for perm in [[0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
            let p: Vec<SymMat> = perm.iter().map(|&i| mats[i]).collect();
            prop_assert!((mixed_discriminant(&p).unwrap() - d).abs() <= 1e-12 * scale);
        }
        let combo = [mats[0].scale(s).add(&mats[1]), mats[1], mats[2]];
        let lin = s * d + mixed_discriminant(&[mats[1], mats[1], mats[2]]).unwrap();
        prop_assert!((mixed_discriminant(&combo).unwrap() - lin).abs() <= 1e-11 * (1.0 + lin.abs()));
        let m = mats[0];
        let det = m.det();
        prop_assert!((mixed_discriminant(&[m, m, m]).unwrap() - det).abs() <= 1e-12 * (1.0 + det.abs()));
    }
}

#[test]
fn constant_data_is_a_fixed_point() {
    let g = grid(1, 16);
    let a = SymMat::scalar(1, 2.0);
    let geom = geometry(Sign::Negative, a, 1, ScalarField::constant(g, a.det()));
    let (pot, report) = solve_tke(&geom, 0, &ScalarField::zeros(g), NormMode::Sup).unwrap();
    assert!(report.newton_iterations <= 1);
    assert!(pot.psi().sup_norm() <= 1e-14);
    assert!((report.constant - 1.0).abs() < 1e-14);
}

fn twist(g: PeriodicGrid) -> ScalarField {
    ScalarField::from_fn(g, |x| 0.1 * (2.0 * PI * x[x.len() - 1]).cos()).unwrap()
}

/// `f` chosen so that the discrete `psi_star` solves the slice exactly.
fn discrete_manufactured(lambda: Sign, a: SymMat, psi_star: &ScalarField, g_twist: &ScalarField) -> BackgroundGeometry {
    let l = lambda.value();
    let det = ma_density(&a, psi_star);
    let f: Vec<f64> = det
        .values()
        .iter()
        .zip(psi_star.values())
        .zip(g_twist.values())
        .map(|((d, p), t)| d * (l * (p + t)).exp())
        .collect();
    geometry(lambda, a, 1, ScalarField::new(psi_star.grid(), f).unwrap())
}

#[test]
fn discrete_manufactured_solutions_are_recovered() {
    for (n, nn) in [(1, 32), (2, 16)] {
        let g = grid(n, nn);
        let a = if n == 1 { SymMat::scalar(1, 3.0) } else { SymMat::from_row_major(2, &[3.0, 0.2, 0.2, 3.4]).unwrap() };
        let psi_star = ScalarField::from_fn(g, |x| 0.05 * sine(x)).unwrap();
        let tw = twist(g);
        for lambda in [Sign::Negative, Sign::Positive] {
            let geom = discrete_manufactured(lambda, a, &psi_star, &tw);
            let (pot, report) = solve_tke(&geom, 0, &tw, NormMode::Mean).unwrap();
            let err = pot.psi().sup_distance(&NormMode::Mean.apply(&psi_star).0);
            assert!(err <= 1e-9, "n={n} {lambda:?}: error {err:e}");
            assert!(report.final_residual <= 1e-10);
            assert!((report.constant - 1.0).abs() < 1e-9);
        }
    }
}

fn analytic_error(nn: usize) -> f64 {
    let g = grid(1, nn);
    let a = SymMat::scalar(1, 4.0);
    // psi* = 0.05 sin(2 pi x), psi*'' = -0.05 (2 pi)^2 sin(2 pi x), lambda = -1, g = 0
    let f = ScalarField::from_fn(g, |x| (4.0 - 0.05 * 4.0 * PI * PI * sine(x)) * (-0.05 * sine(x)).exp()).unwrap();
    let geom = geometry(Sign::Negative, a, 1, f);
    let (pot, _) = solve_tke(&geom, 0, &ScalarField::zeros(g), NormMode::Mean).unwrap();
    let exact = ScalarField::from_fn(g, |x| 0.05 * sine(x)).unwrap();
    pot.psi().sup_distance(&NormMode::Mean.apply(&exact).0)
}

#[test]
fn analytic_manufactured_solution_is_second_order() {
    let ratio = analytic_error(32) / analytic_error(64);
    assert!((3.0..=5.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn reported_residual_matches_reevaluation() {
    let g = grid(1, 32);
    let f = ScalarField::from_fn(g, |x| 1.0 + 0.5 * sine(x)).unwrap();
    let tw = twist(g);
    for lambda in [Sign::Negative, Sign::Positive] {
        let geom = geometry(lambda, SymMat::identity(1), 1, f.clone());
        for mode in [NormMode::Sup, NormMode::Mean] {
            let (pot, report) = solve_tke(&geom, 0, &tw, mode).unwrap();
            let again = tke_residual(&geom, 0, &tw, pot.psi(), report.constant).unwrap().sup_norm();
            assert!((again - report.final_residual).abs() <= 1e-14 * report.final_residual.max(1e-300));
            match mode {
                NormMode::Sup => assert_eq!(pot.psi().max(), 0.0),
                NormMode::Mean => assert!(pot.psi().mean().abs() <= 1e-12),
            }
        }
    }
}

#[test]
fn linearization_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (n, nn) in [(1, 16), (2, 8)] {
        let g = grid(n, nn);
        let a = SymMat::scalar(n, 1.0);
        let psi: Vec<f64> =
            ScalarField::from_fn(g, |x| 0.005 * sine(x) + 0.002 * (4.0 * PI * x[n - 1]).cos()).unwrap().into_values();
        let rhs: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-0.2..0.2)).collect();
        for coupling in [-1.0, 0.0, 0.6] {
            let eq = SliceEquation::new(g, a, coupling, rhs.clone());
            let dir: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0) * 1e-3).collect();
            let sigma = 0.3;
            let step = 1e-6;
            let plus: Vec<f64> = psi.iter().zip(&dir).map(|(p, d)| p + step * d).collect();
            let minus: Vec<f64> = psi.iter().zip(&dir).map(|(p, d)| p - step * d).collect();
            let rp = eq.residual(&plus, step * sigma).unwrap();
            let rm = eq.residual(&minus, -step * sigma).unwrap();
            let fd: Vec<f64> = rp.iter().zip(&rm).map(|(x, y)| (x - y) / (2.0 * step)).collect();
            let jd = eq.apply_jacobian(&psi, &dir, sigma).unwrap();
            let num = fd.iter().zip(&jd).fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
            let den = jd.iter().fold(0.0_f64, |m, y| m.max(y.abs()));
            assert!(num / den <= 1e-5, "n={n} coupling={coupling}: {:e}", num / den);
        }
    }
}

#[test]
fn two_periodic_toy_matches_scalar_newton() {
    // psi = (u, w, u, w) on N = 4: the second difference is 32 (w - u) at even points.
    let g = grid(1, 4);
    let a = 3.0;
    let (u, w) = (0.01, -0.02);
    let (ru, rw) = (0.3, -0.1);
    let s = 0.05;
    let eq = SliceEquation::new(g, SymMat::scalar(1, a), -1.0, vec![ru, rw, ru, rw]);
    let dir = newton_step(&eq, &[u, w, u, w], s, ConstantHandling::Fixed).unwrap().unwrap();
    let mu = a + 32.0 * (w - u);
    let mw = a + 32.0 * (u - w);
    let fu = mu.ln() - u - s - ru;
    let fw = mw.ln() - w - s - rw;
    let j = [[-32.0 / mu - 1.0, 32.0 / mu], [32.0 / mw, -32.0 / mw - 1.0]];
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let du = -(j[1][1] * fu - j[0][1] * fw) / det;
    let dw = -(-j[1][0] * fu + j[0][0] * fw) / det;
    for (p, expect) in [du, dw, du, dw].iter().enumerate() {
        assert!((dir.delta[p] - expect).abs() < 1e-12, "{p}: {} vs {expect}", dir.delta[p]);
    }
    assert!(dir.predicted_residual < 1e-12);
}

#[test]
fn direction_vanishes_at_solution() {
    let g = grid(1, 16);
    let psi_star = ScalarField::from_fn(g, |x| 0.05 * sine(x)).unwrap();
    let a = SymMat::scalar(1, 4.0);
    let geom = discrete_manufactured(Sign::Negative, a, &psi_star, &ScalarField::zeros(g));
    let (pot, rep) = solve_tke(&geom, 0, &ScalarField::zeros(g), NormMode::Sup).unwrap();
    let rhs: Vec<f64> = geom.f().values().iter().map(|v| v.ln()).collect();
    let eq = SliceEquation::new(g, a, -1.0, rhs);
    let dir = newton_step(&eq, pot.psi().values(), rep.constant.ln(), ConstantHandling::Fixed).unwrap().unwrap();
    assert!(dir.delta.iter().all(|d| d.abs() <= 1e-10));
}

#[test]
fn newton_converges_quadratically() {
    let g = grid(1, 64);
    let psi_star = ScalarField::from_fn(g, |x| 0.05 * sine(x)).unwrap();
    let geom = discrete_manufactured(Sign::Negative, SymMat::scalar(1, 4.0), &psi_star, &ScalarField::zeros(g));
    let (_, report) = solve_tke(&geom, 0, &ScalarField::zeros(g), NormMode::Sup).unwrap();
    let r = &report.residual_history;
    assert!(r.len() >= 4, "{r:?}");
    for m in r.len() - 4..r.len() - 1 {
        assert!(r[m + 1] <= 10.0 * r[m] * r[m] + 1e-13, "{r:?}");
    }
}

#[test]
fn negative_sign_solves_random_log_perturbations() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for trial in 0..100 {
        let (n, nn) = if trial % 4 == 0 { (2, 8) } else { (1, 32) };
        let g = grid(n, nn);
        let modes: Vec<(f64, f64, usize, usize)> = (0..4)
            .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(0.0..1.0), rng.gen_range(1..4), rng.gen_range(0..n)))
            .collect();
        let norm: f64 = modes.iter().map(|m| m.0.abs()).sum();
        let amp = rng.gen_range(0.0..0.3) / norm;
        let f = ScalarField::from_fn(g, |x| {
            let s: f64 = modes.iter().map(|&(c, ph, m, ax)| c * (2.0 * PI * (m as f64 * x[ax] + ph)).sin()).sum();
            (amp * s).exp()
        })
        .unwrap();
        let geom = geometry(Sign::Negative, SymMat::scalar(n, 1.0), 1, f);
        let (_, report) = solve_tke(&geom, 0, &ScalarField::zeros(g), NormMode::Sup)
            .unwrap_or_else(|e| panic!("trial {trial}: {e}"));
        assert!(report.final_residual <= 1e-10);
    }
}

#[test]
fn continuity_constant_data_stays_at_zero() {
    let g = grid(1, 16);
    let geom = geometry(Sign::Positive, SymMat::identity(1), 1, ScalarField::constant(g, 1.0));
    let (pot, report) = continuity_solve(&geom, 0, &ScalarField::zeros(g)).unwrap();
    assert!(pot.psi().sup_norm() <= 1e-14);
    assert!(report.continuity_trace.iter().all(|s| s.iterations == 0));
    assert_eq!(report.continuity_trace.last().unwrap().t, 1.0);
}

#[test]
fn continuity_near_constant_completes_quickly() {
    let g = grid(1, 64);
    let f = ScalarField::from_fn(g, |x| 2.0 * (1.0 + 0.05 * sine(x))).unwrap();
    let geom = geometry(Sign::Positive, SymMat::identity(1), 1, f);
    let (_, report) = continuity_solve(&geom, 0, &ScalarField::zeros(g)).unwrap();
    assert!(report.continuity_trace.len() <= 20, "{:?}", report.continuity_trace);
    assert!(report.final_residual <= 1e-10);
    let ts: Vec<f64> = report.continuity_trace.iter().map(|s| s.t).collect();
    assert!(ts.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn continuity_large_perturbation_breaks_down() {
    // the linearized path operator becomes singular near t = 4 pi^2 / A < 1 and the metric degenerates
    let g = grid(1, 64);
    let f = ScalarField::from_fn(g, |x| (3.0 * sine(x)).exp()).unwrap();
    let geom = geometry(Sign::Positive, SymMat::scalar(1, 200.0), 1, f);
    match continuity_solve(&geom, 0, &ScalarField::zeros(g)) {
        Err(SolveError::ContinuityBreakdown { last_good_t: Some(t), .. }) => assert!(t < 1.0),
        other => panic!("expected breakdown, got {other:?}"),
    }
}

#[test]
fn calabi_yau_constant_density() {
    let g = grid(2, 8);
    let a = SymMat::from_row_major(2, &[2.0, 0.3, 0.3, 1.0]).unwrap();
    let rho = ScalarField::constant(g, 0.5);
    let (pot, report) = solve_calabi_yau(&a, &rho).unwrap();
    assert!(pot.psi().sup_norm() <= 1e-14);
    assert!((report.constant - a.det() / 0.5).abs() <= 1e-13);
}

#[test]
fn calabi_yau_recovers_manufactured_potential() {
    let g = grid(2, 16);
    let a = SymMat::identity(2);
    let psi_star = ScalarField::from_fn(g, |x| 0.02 * (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos()).unwrap();
    let rho = ma_density(&a, &psi_star);
    let (pot, report) = solve_calabi_yau(&a, &rho).unwrap();
    assert!(pot.psi().sup_distance(&NormMode::Mean.apply(&psi_star).0) <= 1e-10);
    assert!((report.constant - 1.0).abs() <= 1e-10);
    let h = hessian(pot.psi());
    assert!(h.matrices().iter().all(|m| a.add(m).is_positive_definite()));
}
