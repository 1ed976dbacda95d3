//! Problem construction, schedule resolution, and traced solver runs.

use std::path::Path;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use spb_core::benchmark::{
    build_mtl_problem, gen_synthetic, load_csv, partition_tasks, toy_quadratic, MtlDataset, MtlProblem, ToyInstance,
};
use spb_core::metrics::InnerSolveOptions;
use spb_core::{
    gap_report, run, schedule_experiment, schedule_theory, theory_constants, DVector, GapMode, IterateState,
    SetSpec, SolverConfig, SpBilevelProblem, StepSizes, TheoryConstants, Variant,
};

use crate::config::{ProblemKind, RunConfig, ScheduleSource};
use crate::error::{CliError, Result};
use crate::trace::{fmt_f64, TraceRow, TraceWriter};

#[allow(clippy::large_enum_variant)]
pub enum Instance {
    Toy(ToyInstance),
    Mtl {
        problem: MtlProblem,
        set_x: SetSpec,
        set_y: SetSpec,
        dataset: MtlDataset,
    },
}

impl Instance {
    pub fn build(cfg: &RunConfig) -> Result<Self> {
        match cfg.problem {
            ProblemKind::ToyQuadratic => Ok(Instance::Toy(toy_quadratic(
                cfg.seed,
                cfg.toy_n_x,
                cfg.toy_m_theta,
                cfg.toy_d_y,
            )?)),
            ProblemKind::MtlSynthetic => {
                let mcfg = cfg.mtl_config();
                let (dataset, _) = gen_synthetic(cfg.n, cfg.d, &mcfg)?;
                Self::mtl(dataset, cfg)
            }
            ProblemKind::MtlCsv => {
                let path = cfg.csv_path.as_deref().ok_or_else(|| CliError::Config("csv_path is not set".into()))?;
                if !path.is_file() {
                    return Err(CliError::Config(format!("csv file {} does not exist", path.display())));
                }
                let (features, labels) = load_csv(path, &cfg.label_column)?;
                let dataset = partition_tasks(&features, &labels, &cfg.mtl_config())?;
                Self::mtl(dataset, cfg)
            }
        }
    }

    fn mtl(dataset: MtlDataset, cfg: &RunConfig) -> Result<Self> {
        let (problem, set_x, set_y) = build_mtl_problem(&dataset, &cfg.mtl_config())?;
        Ok(Instance::Mtl {
            problem,
            set_x,
            set_y,
            dataset,
        })
    }

    pub fn problem(&self) -> &dyn SpBilevelProblem {
        match self {
            Instance::Toy(t) => &t.problem,
            Instance::Mtl { problem, .. } => problem,
        }
    }

    pub fn set_x(&self) -> &SetSpec {
        match self {
            Instance::Toy(t) => &t.set_x,
            Instance::Mtl { set_x, .. } => set_x,
        }
    }

    pub fn set_y(&self) -> &SetSpec {
        match self {
            Instance::Toy(t) => &t.set_y,
            Instance::Mtl { set_y, .. } => set_y,
        }
    }

    /// `e_0` for the toy problem; zero shared coefficients and mixing
    /// weights of one half for MTL.
    pub fn x0(&self) -> DVector<f64> {
        match self {
            Instance::Toy(t) => {
                let mut x = DVector::zeros(t.problem.dims().n_x);
                x[0] = 1.0;
                x
            }
            Instance::Mtl { problem, .. } => problem.default_x0(),
        }
    }

    /// The feasible point nearest the origin.
    pub fn y0(&self) -> Result<DVector<f64>> {
        let d_y = self.problem().dims().d_y;
        Ok(self.set_y().project(&DVector::zeros(d_y))?)
    }
}

/// Resolves the configured schedule for `variant`.
pub fn resolve_steps(cfg: &RunConfig, variant: Variant, problem: &dyn SpBilevelProblem) -> Result<StepSizes> {
    let constants = problem.constants();
    let mut steps = match cfg.schedule {
        ScheduleSource::Experiment => schedule_experiment(variant, cfg.iterations, cfg.nu, &constants)?,
        ScheduleSource::Theory => schedule_theory(variant, cfg.iterations, &constants)?,
        ScheduleSource::Explicit => {
            let s = &cfg.steps;
            let need = |v: Option<f64>, name: &str| v.ok_or_else(|| CliError::Config(format!("missing {name}")));
            StepSizes {
                gamma: need(s.gamma, "gamma")?,
                sigma: need(s.sigma, "sigma")?,
                tau: cfg.tau.unwrap_or(RunConfig::default_tau()),
                eta: need(s.eta, "eta")?,
                alpha: need(s.alpha, "alpha")?,
                mu: need(s.mu, "mu")?,
            }
        }
    };
    if let Some(tau) = cfg.tau {
        steps.tau = tau;
    }
    Ok(steps)
}

/// Everything a run derives from its config before iterating.
#[derive(Debug, Clone)]
pub struct Plan {
    pub variant: Variant,
    pub solver: SolverConfig,
    pub theory: TheoryConstants,
    pub gap_mode: GapMode,
    pub gap_sigma: f64,
    pub gap_tau: Option<f64>,
    pub inner: InnerSolveOptions,
}

impl Plan {
    pub fn new(cfg: &RunConfig, variant: Variant, inst: &Instance) -> Result<Self> {
        let problem = inst.problem();
        let steps = resolve_steps(cfg, variant, problem)?;
        let dims = problem.dims();
        let mut solver = SolverConfig::new(variant, cfg.iterations, steps, inst.x0(), inst.y0()?, DVector::zeros(dims.m_theta));
        solver.eval_every = cfg.eval_every;
        solver.validate(problem, inst.set_x(), inst.set_y())?;
        let theory = theory_constants(&problem.constants(), steps.eta, steps.mu)?;
        let gap_mode = cfg.gap_mode.resolve(variant);
        let gap_tau = match (gap_mode, variant) {
            (GapMode::Lmo, _) => None,
            (GapMode::Proj, Variant::Fp) => Some(steps.tau),
            (GapMode::Proj, Variant::Opf) => Some(spb_core::metrics::DEFAULT_GAP_TAU),
        };
        let inner = InnerSolveOptions {
            lower_tol: cfg.lower_tol,
            adjoint_tol: cfg.adjoint_tol,
            max_iter: cfg.inner_max_iter,
            warm_start: None,
        };
        Ok(Plan {
            variant,
            solver,
            theory,
            gap_mode,
            gap_sigma: steps.sigma,
            gap_tau,
            inner,
        })
    }

    /// Header lines: the resolved config followed by derived quantities
    /// under dotted keys.
    pub fn header(&self, cfg: &RunConfig) -> Vec<(String, String)> {
        let mut cfg = cfg.clone();
        cfg.variant = self.variant;
        cfg.out = None;
        let mut h: Vec<(String, String)> = cfg.to_pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let s = &self.solver.steps;
        let y0: Vec<String> = self.solver.y0.iter().copied().map(fmt_f64).collect();
        let derived = [
            ("meta.library_version", env!("CARGO_PKG_VERSION").to_string()),
            ("meta.timestamp", timestamp.to_string()),
            ("step.gamma", fmt_f64(s.gamma)),
            ("step.sigma", fmt_f64(s.sigma)),
            ("step.tau", fmt_f64(s.tau)),
            ("step.eta", fmt_f64(s.eta)),
            ("step.alpha", fmt_f64(s.alpha)),
            ("step.mu", fmt_f64(s.mu)),
            ("theory.beta", fmt_f64(self.theory.beta)),
            ("theory.rho", fmt_f64(self.theory.rho)),
            ("theory.rho_d", fmt_f64(self.theory.rho_d)),
            ("theory.kappa_g", fmt_f64(self.theory.kappa_g)),
            ("gap.mode", self.gap_mode.to_string()),
            ("gap.sigma", fmt_f64(self.gap_sigma)),
            ("gap.tau", self.gap_tau.map_or("none".into(), fmt_f64)),
            ("start.y0", y0.join(";")),
        ];
        h.extend(derived.into_iter().map(|(k, v)| (k.to_string(), v)));
        h
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub rows: Vec<TraceRow>,
    pub final_state: IterateState,
    /// Rows whose inner solves missed their tolerance.
    pub stale_rows: Vec<usize>,
}

/// Runs the plan, evaluating gaps at every observed iterate and streaming
/// rows to `writer`. On divergence the rows written so far stay on disk.
pub fn execute(inst: &Instance, plan: &Plan, mut writer: Option<&mut TraceWriter>, quiet: bool) -> Result<RunOutcome> {
    let problem = inst.problem();
    let (set_x, set_y) = (inst.set_x(), inst.set_y());
    let mut rows = Vec::new();
    let mut stale_rows = Vec::new();
    let mut failure: Option<CliError> = None;
    let mut solver_ms = 0.0;
    let mut lap = Instant::now();

    let result = run(problem, set_x, set_y, &plan.solver, |state, diag| {
        solver_ms += lap.elapsed().as_secs_f64() * 1e3;
        if failure.is_none() {
            let row = (|| -> Result<TraceRow> {
                let opts = InnerSolveOptions {
                    warm_start: Some(state.theta.clone()),
                    ..plan.inner.clone()
                };
                let rep = gap_report(problem, set_x, set_y, &state.x, &state.y, plan.gap_mode, plan.gap_sigma, plan.gap_tau, &opts)?;
                if rep.stale {
                    stale_rows.push(state.k);
                    if !quiet {
                        eprintln!(
                            "warning: iter {}: inner solves missed tolerance (lower {:e}, adjoint {:e})",
                            state.k, rep.gradients.lower_residual, rep.gradients.adjoint_residual
                        );
                    }
                }
                Ok(TraceRow {
                    iter: state.k,
                    gap_x: rep.gap_x,
                    gap_y: rep.gap_y,
                    gap_z: rep.gap_z,
                    phi_surrogate: diag.phi_surrogate,
                    step_norm_x: diag.step_norm_x,
                    step_norm_y: diag.step_norm_y,
                    lower_residual: rep.gradients.lower_residual,
                    adjoint_residual: rep.gradients.adjoint_residual,
                    wall_ms: solver_ms,
                })
            })();
            match row {
                Ok(row) => {
                    if let Some(w) = writer.as_deref_mut() {
                        if let Err(e) = w.push(&row) {
                            failure = Some(e);
                        }
                    }
                    rows.push(row);
                }
                Err(e) => failure = Some(e),
            }
        }
        lap = Instant::now();
    });
    let trace = result?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(RunOutcome {
        rows,
        final_state: trace.final_state,
        stale_rows,
    })
}

/// Builds, plans, and runs `cfg` once, writing the trace to `out` if given.
pub fn run_config(cfg: &RunConfig, out: Option<&Path>, quiet: bool) -> Result<RunOutcome> {
    let inst = Instance::build(cfg)?;
    let plan = Plan::new(cfg, cfg.variant, &inst)?;
    run_plan(cfg, &inst, &plan, out, quiet)
}

pub fn run_plan(cfg: &RunConfig, inst: &Instance, plan: &Plan, out: Option<&Path>, quiet: bool) -> Result<RunOutcome> {
    let mut writer = match out {
        Some(p) => Some(TraceWriter::create(p, &plan.header(cfg))?),
        None => None,
    };
    execute(inst, plan, writer.as_mut(), quiet)
}
