use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spb_core::benchmark::{
    build_mtl_problem, exact_lower_solution, gen_from_model, gen_synthetic, MtlConfig, SyntheticModel,
};
use spb_core::check::DEFAULT_FD_STEP;
use spb_core::metrics::solve_lower;
use spb_core::{check_hvp, DVector, SpBilevelProblem};

fn cfg3() -> MtlConfig {
    MtlConfig {
        num_tasks: 3,
        ..MtlConfig::default()
    }
}

#[test]
fn lower_level_is_separable_across_tasks() {
    let cfg = cfg3();
    let (ds, _) = gen_synthetic(150, 4, &cfg).unwrap();
    let x = DVector::from_vec(vec![0.3, -0.2, 0.5, 1.0]);
    let lambda = DVector::from_vec(vec![0.2, 0.7, 0.9]);
    let base = exact_lower_solution(&ds, &x, &lambda, cfg.reg_rho).unwrap();

    let mut perturbed = ds.clone();
    perturbed.tasks[2].a_train *= 3.0;
    perturbed.tasks[2].b_train.add_scalar_mut(1.0);
    let other = exact_lower_solution(&perturbed, &x, &lambda, cfg.reg_rho).unwrap();
    assert_eq!(base.rows(0, 8), other.rows(0, 8));
    assert_ne!(base.rows(8, 4), other.rows(8, 4));
}

#[test]
fn phi_is_linear_in_the_task_weights() {
    let cfg = cfg3();
    let (ds, _) = gen_synthetic(150, 4, &cfg).unwrap();
    let (p, _, _) = build_mtl_problem(&ds, &cfg).unwrap();
    let x = p.default_x0();
    let theta = DVector::from_fn(12, |i, _| (i as f64).sin());
    let e1 = DVector::from_vec(vec![0.2, 0.5, 0.3]);
    let e2 = DVector::from_vec(vec![0.7, -0.1, 0.4]);
    let lhs = p.phi(&x, &theta, &e1) + p.phi(&x, &theta, &e2);
    let rhs = p.phi(&x, &theta, &(&e1 + &e2)) + p.phi(&x, &theta, &DVector::zeros(3));
    assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
}

#[test]
fn lower_level_is_strongly_convex_with_declared_modulus() {
    let cfg = MtlConfig {
        num_tasks: 4,
        reg_rho: 0.05,
        ..MtlConfig::default()
    };
    let (ds, _) = gen_synthetic(200, 3, &cfg).unwrap();
    let (p, _, _) = build_mtl_problem(&ds, &cfg).unwrap();
    assert_eq!(p.constants().mu_g, 0.05);
    let mut x = p.default_x0();
    x[0] = 1.0;
    let r = check_hvp(&p, &x, &DVector::zeros(12), DEFAULT_FD_STEP).unwrap();
    assert!(r.passed(), "{r}");
}

#[test]
fn spectral_estimate_is_tighter_than_frobenius() {
    let cfg = cfg3();
    let (ds, _) = gen_synthetic(150, 4, &cfg).unwrap();
    let (fro, _, _) = build_mtl_problem(&ds, &cfg).unwrap();
    let spec_cfg = MtlConfig {
        lipschitz: spb_core::benchmark::LipschitzEstimate::Spectral,
        ..cfg
    };
    let (spec, _, _) = build_mtl_problem(&ds, &spec_cfg).unwrap();
    assert!(spec.constants().l_g <= fro.constants().l_g);
    assert!(spec.constants().l_g > spec.constants().mu_g);
}

#[test]
fn noiseless_ground_truth_fits_validation_data() {
    // With every mixing weight at one the ground-truth task coefficients
    // generate the labels directly, so the lower-level solution at the
    // ground truth reproduces them up to the tiny regularizer.
    let cfg = MtlConfig {
        num_tasks: 3,
        noise_std: 0.0,
        reg_rho: 1e-8,
        ..MtlConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut model = SyntheticModel::sample(&mut rng, 5, 3);
    model.lambda = vec![1.0; 3];
    let ds = gen_from_model(200, &model, &cfg).unwrap();
    let (p, _, _) = build_mtl_problem(&ds, &cfg).unwrap();
    let lambda = DVector::from_element(3, 1.0);
    let theta = exact_lower_solution(&ds, &model.x, &lambda, cfg.reg_rho).unwrap();
    for loss in p.validation_losses(&theta).iter() {
        assert!(*loss <= 1e-6, "{loss}");
    }
}

#[test]
fn exact_lower_solution_matches_iterative_solve() {
    let cfg = cfg3();
    let (ds, _) = gen_synthetic(150, 4, &cfg).unwrap();
    let (p, sx, _) = build_mtl_problem(&ds, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..20 {
        let raw = DVector::from_fn(7, |_, _| rng.random_range(-3.0..3.0));
        let xl = sx.project(&raw).unwrap();
        let (x, lambda) = p.split_x(&xl);
        let exact = exact_lower_solution(&ds, &x.into_owned(), &lambda.into_owned(), cfg.reg_rho).unwrap();
        let iter = solve_lower(&p, &xl, None, 1e-10, 1_000_000).unwrap().solution;
        assert!((exact - iter).amax() <= 1e-8);
    }
}

#[test]
fn mtl_dimensions_and_sets() {
    let cfg = cfg3();
    let (ds, _) = gen_synthetic(150, 4, &cfg).unwrap();
    let (p, sx, sy) = build_mtl_problem(&ds, &cfg).unwrap();
    let dims = p.dims();
    assert_eq!((dims.n_x, dims.d_y, dims.m_theta), (7, 3, 12));
    assert_eq!(sx.ambient_dim(), Some(7));
    assert_eq!(sy.ambient_dim(), Some(3));
    assert!(sx.contains(&p.default_x0(), 0.0).unwrap());
    assert!(p.constants().linear_in_y);
}
