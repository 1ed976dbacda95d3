//! Shared fixtures for the benchmarks.

use nalgebra::DVector;
use spb_core::benchmark::{build_mtl_problem, gen_synthetic, MtlConfig, MtlProblem};
use spb_core::{schedule_experiment, SetSpec, SolverConfig, SpBilevelProblem, Variant};

pub struct MtlFixture {
    pub problem: MtlProblem,
    pub set_x: SetSpec,
    pub set_y: SetSpec,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub theta: DVector<f64>,
}

impl MtlFixture {
    pub fn new(n: usize, d: usize, tasks: usize) -> Self {
        let cfg = MtlConfig {
            num_tasks: tasks,
            seed: 7,
            ..MtlConfig::default()
        };
        let (ds, _) = gen_synthetic(n, d, &cfg).expect("synthetic data");
        let (problem, set_x, set_y) = build_mtl_problem(&ds, &cfg).expect("mtl problem");
        let x = problem.default_x0();
        let y = set_y.project(&DVector::zeros(tasks)).expect("y0");
        let theta = wobble(problem.dims().m_theta);
        Self {
            problem,
            set_x,
            set_y,
            x,
            y,
            theta,
        }
    }

    pub fn solver(&self, variant: Variant, iterations: usize) -> SolverConfig {
        let steps = schedule_experiment(variant, iterations, 1.0, &self.problem.constants()).expect("schedule");
        SolverConfig::new(variant, iterations, steps, self.x.clone(), self.y.clone(), self.theta.clone())
    }
}

/// Deterministic vector with entries spread over [-1, 1].
pub fn wobble(n: usize) -> DVector<f64> {
    DVector::from_fn(n, |i, _| ((i as f64) * 1.7 + 0.3).sin())
}
