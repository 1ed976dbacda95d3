use spb_core::benchmark::{build_mtl_problem, gen_synthetic, toy_quadratic, toy_stationary_instance, MtlConfig};
use spb_core::metrics::{
    gap_x_lmo, gap_y, implicit_gradients_lenient, solve_adjoint, solve_lower, InnerSolveOptions,
};
use spb_core::{gap_report, implicit_gradients, DVector, Error, GapMode, SpBilevelProblem};

#[test]
fn implicit_gradients_match_toy_closed_forms() {
    let inst = toy_quadratic(9, 4, 3, 3).unwrap();
    for (x, y) in [
        (vec![1.0, 0.0, -2.0, 0.5], vec![0.2, 0.3, 0.5]),
        (vec![-0.3, 0.8, 0.1, 1.4], vec![1.0, 0.0, 0.0]),
    ] {
        let (x, y) = (DVector::from_vec(x), DVector::from_vec(y));
        let g = implicit_gradients(&inst.problem, &x, &y, &InnerSolveOptions::with_tol(1e-11)).unwrap();
        assert!((&g.theta_star - inst.closed.theta_star(&x)).amax() <= 1e-8);
        assert!((&g.v - inst.closed.adjoint(&x, &y)).amax() <= 1e-8);
        assert!((&g.grad_x - inst.closed.grad_x(&x, &y)).amax() <= 1e-8);
        assert!((&g.grad_y - inst.closed.grad_y(&x)).amax() <= 1e-8);
    }
}

#[test]
fn implicit_gradient_matches_finite_differences_on_mtl() {
    let cfg = MtlConfig {
        num_tasks: 3,
        ..MtlConfig::default()
    };
    let (ds, _) = gen_synthetic(300, 6, &cfg).unwrap();
    let (p, _, _) = build_mtl_problem(&ds, &cfg).unwrap();
    let x = DVector::from_vec(vec![0.4, -0.1, 0.0, 0.3, 0.2, -0.6, 0.3, 0.5, 0.8]);
    let y = DVector::from_vec(vec![0.5, 0.2, 0.3]);
    let opts = InnerSolveOptions::with_tol(1e-12);
    let g = implicit_gradients(&p, &x, &y, &opts).unwrap();
    let value = |x: &DVector<f64>| {
        let t = solve_lower(&p, x, None, 1e-12, 1_000_000).unwrap().solution;
        p.phi(x, &t, &y)
    };
    let h = 1e-5;
    for j in 0..x.len() {
        let mut e = DVector::zeros(x.len());
        e[j] = h;
        let fd = (value(&(&x + &e)) - value(&(&x - &e))) / (2.0 * h);
        let rel = (fd - g.grad_x[j]).abs() / fd.abs().max(g.grad_x[j].abs()).max(1e-3);
        assert!(rel <= 1e-4, "coordinate {j}: fd {fd} vs {}", g.grad_x[j]);
    }
}

#[test]
fn conjugate_gradients_match_a_dense_solve() {
    let inst = toy_quadratic(4, 6, 50, 4).unwrap();
    let x = DVector::from_fn(6, |i, _| (i as f64).cos());
    let y = DVector::from_element(4, 0.25);
    let theta = inst.closed.theta_star(&x);
    let cg = solve_adjoint(&inst.problem, &x, &theta, &y, 1e-12, 1000).unwrap();
    let rhs = inst.problem.grad_phi_theta(&x, &theta, &y);
    let dense = inst.problem.h.clone().lu().solve(&rhs).unwrap();
    assert!((cg.solution - dense).amax() <= 1e-8);
}

#[test]
fn zero_right_hand_side_needs_no_iterations() {
    let inst = toy_quadratic(4, 2, 3, 2).unwrap();
    let p = &inst.problem;
    let (x, y) = (DVector::zeros(2), DVector::zeros(2));
    let theta = DVector::zeros(3);
    let r = solve_adjoint(p, &x, &theta, &y, 1e-9, 10).unwrap();
    assert_eq!(r.iterations, 0);
    assert_eq!(r.solution, DVector::zeros(3));
}

#[test]
fn exhausted_budgets_are_reported() {
    let inst = toy_quadratic(4, 4, 30, 3).unwrap();
    let x = DVector::from_element(4, 1.0);
    let y = DVector::from_element(3, 1.0 / 3.0);
    let err = solve_lower(&inst.problem, &x, None, 1e-12, 2).unwrap_err();
    assert!(matches!(err, Error::ToleranceNotMet { solver: "solve_lower", .. }), "{err}");

    let opts = InnerSolveOptions {
        max_iter: 2,
        ..InnerSolveOptions::with_tol(1e-12)
    };
    let lenient = implicit_gradients_lenient(&inst.problem, &x, &y, &opts).unwrap();
    assert!(!lenient.is_fresh(&opts));
    let rep = gap_report(&inst.problem, &inst.set_x, &inst.set_y, &x, &y, GapMode::Lmo, 1.0, None, &opts).unwrap();
    assert!(rep.stale);
}

#[test]
fn gaps_are_nonnegative_and_lmo_gap_is_homogeneous() {
    let inst = toy_quadratic(2, 4, 3, 3).unwrap();
    let opts = InnerSolveOptions::default();
    for k in 0..20 {
        let x = DVector::from_fn(4, |i, _| ((k * 4 + i) as f64 * 0.7).sin() * 2.0);
        let y = inst.set_y.project(&DVector::from_fn(3, |i, _| ((k + i) as f64).cos())).unwrap();
        for mode in [GapMode::Lmo, GapMode::Proj] {
            let r = gap_report(&inst.problem, &inst.set_x, &inst.set_y, &x, &y, mode, 0.5, Some(0.7), &opts).unwrap();
            assert!(r.gap_x >= 0.0 && r.gap_y >= 0.0);
            assert_eq!(r.gap_z, r.gap_x + r.gap_y);
        }
        let mut g = implicit_gradients(&inst.problem, &x, &y, &opts).unwrap();
        let once = gap_x_lmo(&inst.set_x, &g, &x).unwrap();
        g.grad_x *= 2.0;
        let twice = gap_x_lmo(&inst.set_x, &g, &x).unwrap();
        assert!((twice - 2.0 * once).abs() <= 1e-12 * once.max(1.0));
    }
}

#[test]
fn constructed_saddle_is_stationary_for_every_step() {
    let (inst, x_star, y_star) = toy_stationary_instance(13, 4, 3, 3).unwrap();
    assert!(inst.closed.grad_x(&x_star, &y_star).amax() <= 1e-12);
    let gy = inst.closed.grad_y(&x_star);
    assert!((gy.max() - gy.min()).abs() <= 1e-12);

    let opts = InnerSolveOptions::with_tol(1e-12);
    for mode in [GapMode::Lmo, GapMode::Proj] {
        let r = gap_report(&inst.problem, &inst.set_x, &inst.set_y, &x_star, &y_star, mode, 1.0, None, &opts).unwrap();
        assert!(r.is_stationary(1e-6), "{mode}: {}", r.gap_z);
    }
    let g = implicit_gradients(&inst.problem, &x_star, &y_star, &opts).unwrap();
    for sigma in [0.1, 1.0, 10.0] {
        assert!(gap_y(&inst.set_y, &g, &y_star, sigma).unwrap() <= 1e-9);
    }
    // Moving x tilts the dual gradient, and both step sizes notice.
    let mut x_off = x_star.clone();
    x_off[0] += 0.5;
    let g_off = implicit_gradients(&inst.problem, &x_off, &y_star, &opts).unwrap();
    for sigma in [0.1, 10.0] {
        assert!(gap_y(&inst.set_y, &g_off, &y_star, sigma).unwrap() > 1e-6);
    }
}

#[test]
fn gap_mode_parsing() {
    assert_eq!("LMO".parse::<GapMode>().unwrap(), GapMode::Lmo);
    assert_eq!(" proj".parse::<GapMode>().unwrap(), GapMode::Proj);
    let err = "fw".parse::<GapMode>().unwrap_err().to_string();
    assert!(err.contains("lmo, proj"), "{err}");
}
