use spb_core::benchmark::{build_mtl_problem, gen_synthetic, toy_quadratic, MtlConfig, ToyInstance};
use spb_core::schedule::{schedule_experiment, theory_constants};
use spb_core::solver::{adjoint_step, dual_step, lower_step, primal_direction, FEASIBILITY_TOL};
use spb_core::{
    run, step, DVector, Dims, Error, SetSpec, SmoothnessConstants, SolverConfig, SpBilevelProblem, StepSizes, Variant,
};

fn toy() -> ToyInstance {
    toy_quadratic(5, 4, 3, 3).unwrap()
}

fn toy_config(inst: &ToyInstance, variant: Variant, gamma: f64) -> SolverConfig {
    let c = inst.problem.constants();
    let steps = StepSizes {
        gamma,
        sigma: 1.0,
        tau: 0.7,
        eta: c.lower_step(),
        alpha: c.lower_step(),
        mu: 1.0,
    };
    let mut x0 = DVector::zeros(4);
    x0[0] = 1.0;
    let y0 = inst.set_y.project(&DVector::zeros(3)).unwrap();
    SolverConfig::new(variant, 300, steps, x0, y0, DVector::zeros(3))
}

#[test]
fn iterates_stay_feasible() {
    let inst = toy();
    for variant in Variant::ALL {
        let cfg = toy_config(&inst, variant, 0.3);
        let mut state = cfg.initial_state();
        for _ in 0..300 {
            state = step(&inst.problem, &inst.set_x, &inst.set_y, &cfg, &state).unwrap().0;
            assert!(inst.set_x.contains(&state.x, FEASIBILITY_TOL).unwrap());
            assert!(inst.set_y.contains(&state.y, FEASIBILITY_TOL).unwrap());
        }
    }

    let mcfg = MtlConfig {
        num_tasks: 3,
        ..MtlConfig::default()
    };
    let (ds, _) = gen_synthetic(200, 5, &mcfg).unwrap();
    let (p, sx, sy) = build_mtl_problem(&ds, &mcfg).unwrap();
    for variant in Variant::ALL {
        let steps = schedule_experiment(variant, 500, 1.0, &p.constants()).unwrap();
        let y0 = sy.project(&DVector::zeros(3)).unwrap();
        let cfg = SolverConfig::new(variant, 500, steps, p.default_x0(), y0, DVector::zeros(15));
        let mut state = cfg.initial_state();
        for _ in 0..500 {
            state = step(&p, &sx, &sy, &cfg, &state).unwrap().0;
            assert!(sx.contains(&state.x, FEASIBILITY_TOL).unwrap());
            assert!(sy.contains(&state.y, FEASIBILITY_TOL).unwrap());
        }
    }
}

#[test]
fn frozen_primal_lower_level_contracts() {
    let inst = toy();
    let c = inst.problem.constants();
    let beta = theory_constants(&c, c.lower_step(), 1.0).unwrap().beta;
    let cfg = toy_config(&inst, Variant::Opf, 0.0);
    let theta_star = inst.closed.theta_star(&cfg.x0);
    let mut state = cfg.initial_state();
    for _ in 0..100 {
        let before = (&state.theta - &theta_star).norm();
        state = step(&inst.problem, &inst.set_x, &inst.set_y, &cfg, &state).unwrap().0;
        assert_eq!(state.x, cfg.x0);
        let after = (&state.theta - &theta_star).norm();
        assert!(after <= beta * before + 1e-10, "{after} > {beta} * {before}");
    }
}

#[test]
fn frozen_adjoint_contracts() {
    let inst = toy();
    let c = inst.problem.constants();
    let eta = c.lower_step();
    let rho = theory_constants(&c, eta, 1.0).unwrap().rho;
    let x = DVector::from_vec(vec![0.5, -1.0, 0.2, 0.0]);
    let y = DVector::from_vec(vec![0.1, 0.6, 0.3]);
    let theta = inst.closed.theta_star(&x);
    let v = inst.closed.adjoint(&x, &y);
    let mut w = DVector::from_element(3, 4.0);
    for _ in 0..100 {
        let before = (&w - &v).norm();
        w = adjoint_step(&inst.problem, &x, &theta, &y, &w, eta);
        let after = (&w - &v).norm();
        assert!(after <= rho * before + 1e-10, "{after} > {rho} * {before}");
    }
}

#[test]
fn exact_state_recovers_the_implicit_gradient() {
    let inst = toy();
    let x = DVector::from_vec(vec![1.0, 2.0, -0.5, 0.3]);
    let y = DVector::from_vec(vec![0.2, 0.2, 0.6]);
    let theta = inst.closed.theta_star(&x);
    let v = inst.closed.adjoint(&x, &y);
    let g = primal_direction(&inst.problem, &x, &theta, &y, &v);
    assert!((g - inst.closed.grad_x(&x, &y)).amax() <= 1e-10);
    // Exact theta* is a fixed point of the lower step.
    let t1 = lower_step(&inst.problem, &x, &theta, 0.3);
    assert!((t1 - &theta).amax() <= 1e-12);
}

#[test]
fn dual_step_moves_toward_the_regularized_maximizer() {
    let inst = toy();
    let x = DVector::from_vec(vec![0.4, -0.3, 1.0, 0.0]);
    let g_y = inst.closed.grad_y(&x);
    let mu = 0.5;
    let y0 = DVector::from_element(3, 1.0 / 3.0);
    // For phi linear in y the regularized maximizer is P_Y(y0 + g_y / mu).
    let y_star = inst.set_y.project(&(&y0 + &g_y / mu)).unwrap();
    for sigma in [1.0 / mu, 0.5 / mu, 0.1 / mu] {
        let mut y = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        for _ in 0..50 {
            let before = (&y - &y_star).norm();
            y = dual_step(&inst.set_y, &y, &y0, &g_y, sigma, mu).unwrap();
            assert!((&y - &y_star).norm() <= before + 1e-12);
        }
    }
    let y = dual_step(&inst.set_y, &DVector::from_vec(vec![0.0, 1.0, 0.0]), &y0, &g_y, 1.0 / mu, mu).unwrap();
    assert!((y - y_star).amax() <= 1e-12);
}

#[test]
fn runs_are_bitwise_reproducible_and_observed_on_schedule() {
    let inst = toy();
    for variant in Variant::ALL {
        let mut cfg = toy_config(&inst, variant, 0.1);
        cfg.iterations = 250;
        let mut seen = Vec::new();
        let a = run(&inst.problem, &inst.set_x, &inst.set_y, &cfg, |s, _| seen.push(s.k)).unwrap();
        let b = run(&inst.problem, &inst.set_x, &inst.set_y, &cfg, |_, _| {}).unwrap();
        assert_eq!(a, b);
        assert_eq!(seen, vec![0, 100, 200, 249]);
        assert_eq!(a.diagnostics.len(), 250);
        assert_eq!(a.final_state.k, 250);
    }
}

#[test]
fn opf_and_fp_differ_only_in_the_primal_target() {
    let inst = toy();
    let cfg = toy_config(&inst, Variant::Opf, 0.2);
    let s0 = cfg.initial_state();
    let (a, da) = step(&inst.problem, &inst.set_x, &inst.set_y, &cfg, &s0).unwrap();
    let cfg_fp = SolverConfig {
        variant: Variant::Fp,
        ..cfg.clone()
    };
    let (b, db) = step(&inst.problem, &inst.set_x, &inst.set_y, &cfg_fp, &s0).unwrap();
    assert_eq!(a.w, b.w);
    assert_eq!(a.y, b.y);
    assert_eq!(da.g_x, db.g_x);
    assert_eq!(da.s, inst.set_x.lmo(&da.g_x).unwrap());
    assert_eq!(db.s, inst.set_x.project(&(&s0.x - 0.7 * &db.g_x)).unwrap());
    // w is updated first and initialized from theta0.
    assert_eq!(s0.w, s0.theta);
}

#[test]
fn invalid_configs_are_rejected() {
    let inst = toy();
    let (p, sx, sy) = (&inst.problem, &inst.set_x, &inst.set_y);
    let base = toy_config(&inst, Variant::Fp, 0.5);
    assert!(base.validate(p, sx, sy).is_ok());

    let mut c = base.clone();
    c.steps.gamma = 1.5;
    assert!(matches!(c.validate(p, sx, sy), Err(Error::InvalidConfig(_))));
    let mut c = base.clone();
    c.steps.sigma = 10.0;
    assert!(c.validate(p, sx, sy).is_err());
    let mut c = base.clone();
    c.steps.eta = 1.0;
    assert!(c.validate(p, sx, sy).is_err());
    let mut c = base.clone();
    c.steps.alpha = 0.5;
    assert!(c.validate(p, sx, sy).is_err());
    let mut c = base.clone();
    c.steps.tau = 0.0;
    assert!(c.validate(p, sx, sy).is_err());
    let mut c = base.clone();
    c.x0[0] = 6.0;
    assert!(c.validate(p, sx, sy).is_err());
    let mut c = base.clone();
    c.y0 = DVector::zeros(3);
    assert!(c.validate(p, sx, sy).is_err());
    let mut c = base;
    c.theta0 = DVector::zeros(2);
    assert!(matches!(c.validate(p, sx, sy), Err(Error::Dimension { .. })));
}

/// A problem whose x-gradient is astronomically large.
struct Exploding;

impl SpBilevelProblem for Exploding {
    fn dims(&self) -> Dims {
        Dims::new(1, 1, 1).unwrap()
    }
    fn constants(&self) -> SmoothnessConstants {
        SmoothnessConstants::linear(1.0, 1.0).unwrap()
    }
    fn phi(&self, x: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>) -> f64 {
        1e13 * x[0]
    }
    fn grad_phi_x(&self, _: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, 1e13)
    }
    fn grad_phi_theta(&self, _: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(1)
    }
    fn grad_phi_y(&self, _: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(1)
    }
    fn g_val(&self, _: &DVector<f64>, t: &DVector<f64>) -> f64 {
        0.5 * t.dot(t)
    }
    fn grad_g_theta(&self, _: &DVector<f64>, t: &DVector<f64>) -> DVector<f64> {
        t.clone()
    }
    fn hvp_g_thetatheta(&self, _: &DVector<f64>, _: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        v.clone()
    }
    fn jvp_g_thetax(&self, _: &DVector<f64>, _: &DVector<f64>, _: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(1)
    }
}

#[test]
fn divergence_guard_trips() {
    let sx = SetSpec::uniform_box(1, -1.0, 1.0).unwrap();
    let sy = SetSpec::simplex(1).unwrap();
    let steps = StepSizes {
        gamma: 0.5,
        sigma: 1.0,
        tau: 1.0,
        eta: 1.0,
        alpha: 1.0,
        mu: 1.0,
    };
    let one = DVector::from_element(1, 1.0);
    let cfg = SolverConfig::new(Variant::Opf, 5, steps, DVector::zeros(1), one, DVector::zeros(1));
    let err = run(&Exploding, &sx, &sy, &cfg, |_, _| {}).unwrap_err();
    assert!(matches!(err, Error::Divergence { k: 0, ref quantity } if quantity == "g_x"), "{err}");
}
