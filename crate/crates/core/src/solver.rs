//! Single-loop inexact bilevel regularized primal-dual methods.
//!
//! Each iteration takes one gradient step on the adjoint system, forms the
//! direction estimates for `x` and `y`, moves `x` toward either a linear
//! minimization vertex (OPF) or a projected gradient point (FP), takes one
//! gradient step on the lower level at the new `x`, and finally takes one
//! projected ascent step on the `mu`-regularized dual.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;

use crate::error::{check_dim, Error, Result};
use crate::problem::SpBilevelProblem;
use crate::sets::SetSpec;

/// Iterates whose norm exceeds this are treated as divergence.
pub const DIVERGENCE_NORM: f64 = 1e12;
/// Membership tolerance for the initial point and every iterate.
pub const FEASIBILITY_TOL: f64 = 1e-9;

const STEP_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    /// One-sided projection-free: `x` moves toward an LMO vertex.
    Opf,
    /// Fully projected: `x` moves toward a projected gradient point.
    Fp,
}

impl Variant {
    pub const ALL: [Variant; 2] = [Variant::Opf, Variant::Fp];

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Opf => "opf",
            Variant::Fp => "fp",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "opf" => Ok(Variant::Opf),
            "fp" => Ok(Variant::Fp),
            other => Err(Error::InvalidConfig(format!(
                "unknown solver variant `{other}`; valid options: opf, fp"
            ))),
        }
    }
}

/// Constant step sizes and the dual regularization weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepSizes {
    /// Primal mixing weight in `[0, 1]`.
    pub gamma: f64,
    /// Dual ascent step.
    pub sigma: f64,
    /// Projected-gradient step used by FP; ignored by OPF.
    pub tau: f64,
    /// Adjoint step.
    pub eta: f64,
    /// Lower-level step.
    pub alpha: f64,
    /// Dual regularization weight.
    pub mu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub variant: Variant,
    /// Horizon `K`.
    pub iterations: usize,
    pub steps: StepSizes,
    pub x0: DVector<f64>,
    /// Anchor of the dual regularizer and the dual starting point.
    pub y0: DVector<f64>,
    pub theta0: DVector<f64>,
    /// Adjoint start; `None` uses `theta0`.
    pub w0: Option<DVector<f64>>,
    pub eval_every: usize,
}

impl SolverConfig {
    pub fn new(
        variant: Variant,
        iterations: usize,
        steps: StepSizes,
        x0: DVector<f64>,
        y0: DVector<f64>,
        theta0: DVector<f64>,
    ) -> Self {
        Self {
            variant,
            iterations,
            steps,
            x0,
            y0,
            theta0,
            w0: None,
            eval_every: 100,
        }
    }

    /// Checks step-size preconditions, dimensions, and feasibility of the
    /// starting point.
    ///
    /// `gamma = 0` is accepted so the lower-level and adjoint contractions
    /// can be observed with the primal variable frozen.
    pub fn validate<P: SpBilevelProblem + ?Sized>(
        &self,
        problem: &P,
        set_x: &SetSpec,
        set_y: &SetSpec,
    ) -> Result<()> {
        let c = problem.constants();
        c.validate()?;
        let s = &self.steps;
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        for (name, v) in [
            ("gamma", s.gamma),
            ("sigma", s.sigma),
            ("tau", s.tau),
            ("eta", s.eta),
            ("alpha", s.alpha),
            ("mu", s.mu),
        ] {
            if !v.is_finite() {
                return bad(format!("{name} must be finite, got {v}"));
            }
        }
        if !(0.0..=1.0).contains(&s.gamma) {
            return bad(format!("gamma must lie in [0, 1], got {}", s.gamma));
        }
        if !(s.mu > 0.0) {
            return bad(format!("mu must be positive, got {}", s.mu));
        }
        let sigma_max = 2.0 / (c.l_yy_phi + 2.0 * s.mu);
        if !(s.sigma > 0.0 && s.sigma <= sigma_max * (1.0 + STEP_SLACK)) {
            return bad(format!("sigma must lie in (0, 2/(L_yy + 2 mu)] = (0, {sigma_max}], got {}", s.sigma));
        }
        let eta_max = 2.0 / (c.l_g + c.mu_g);
        if !(s.eta > 0.0 && s.eta <= eta_max * (1.0 + STEP_SLACK)) {
            return bad(format!("eta must lie in (0, 2/(L_g + mu_g)] = (0, {eta_max}], got {}", s.eta));
        }
        if !(s.alpha > 0.0 && s.alpha < 2.0 / c.l_g) {
            return bad(format!("alpha must lie in (0, 2/L_g) = (0, {}), got {}", 2.0 / c.l_g, s.alpha));
        }
        if self.variant == Variant::Fp && !(s.tau > 0.0) {
            return bad(format!("tau must be positive for fp, got {}", s.tau));
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }

        let dims = problem.dims();
        dims.check_x(&self.x0)?;
        dims.check_y(&self.y0)?;
        dims.check_theta(&self.theta0)?;
        if let Some(w0) = &self.w0 {
            check_dim("w0", dims.m_theta, w0.len())?;
        }
        if !set_x.contains(&self.x0, FEASIBILITY_TOL)? {
            return bad("x0 is not feasible".into());
        }
        if !set_y.contains(&self.y0, FEASIBILITY_TOL)? {
            return bad("y0 is not feasible".into());
        }
        Ok(())
    }

    pub fn initial_state(&self) -> IterateState {
        IterateState {
            k: 0,
            x: self.x0.clone(),
            y: self.y0.clone(),
            theta: self.theta0.clone(),
            w: self.w0.clone().unwrap_or_else(|| self.theta0.clone()),
        }
    }
}

/// The live tuple `(x_k, y_k, theta_k, w_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterateState {
    pub k: usize,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub theta: DVector<f64>,
    pub w: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepDiagnostics {
    /// Direction estimate for `x`.
    pub g_x: DVector<f64>,
    /// Direction estimate for `y`, before the regularization term.
    pub g_y: DVector<f64>,
    /// LMO vertex (OPF) or projected gradient point (FP).
    pub s: DVector<f64>,
    pub step_norm_x: f64,
    pub step_norm_y: f64,
    /// `phi(x_k, theta_k, y_k)`.
    pub phi_surrogate: f64,
}

fn guard(k: usize, name: &str, v: DVector<f64>) -> Result<DVector<f64>> {
    if v.iter().all(|e| e.is_finite()) && v.norm() <= DIVERGENCE_NORM {
        Ok(v)
    } else {
        Err(Error::Divergence {
            k,
            quantity: name.to_string(),
        })
    }
}

/// One gradient step on `0.5 w'Hw - <grad_theta phi, w>`.
pub fn adjoint_step<P: SpBilevelProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    theta: &DVector<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
    eta: f64,
) -> DVector<f64> {
    let residual = problem.hvp_g_thetatheta(x, theta, w) - problem.grad_phi_theta(x, theta, y);
    w - eta * residual
}

/// `grad_x phi - grad^2_{theta x} g * w`, the estimate of the implicit x-gradient.
pub fn primal_direction<P: SpBilevelProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    theta: &DVector<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
) -> DVector<f64> {
    problem.grad_phi_x(x, theta, y) - problem.jvp_g_thetax(x, theta, w)
}

/// One gradient step on the lower level at a given `x`.
pub fn lower_step<P: SpBilevelProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    theta: &DVector<f64>,
    alpha: f64,
) -> DVector<f64> {
    theta - alpha * problem.grad_g_theta(x, theta)
}

/// Projected ascent on the `mu`-regularized dual.
pub fn dual_step(
    set_y: &SetSpec,
    y: &DVector<f64>,
    y0: &DVector<f64>,
    g_y: &DVector<f64>,
    sigma: f64,
    mu: f64,
) -> Result<DVector<f64>> {
    set_y.project(&(y + sigma * (g_y - mu * (y - y0))))
}

fn step_impl<P: SpBilevelProblem + ?Sized>(
    variant: Variant,
    problem: &P,
    set_x: &SetSpec,
    set_y: &SetSpec,
    cfg: &SolverConfig,
    state: &IterateState,
) -> Result<(IterateState, StepDiagnostics)> {
    let k = state.k;
    let st = &cfg.steps;
    let (x, y, theta) = (&state.x, &state.y, &state.theta);

    let w_next = guard(k, "w", adjoint_step(problem, x, theta, y, &state.w, st.eta))?;
    let g_x = guard(k, "g_x", primal_direction(problem, x, theta, y, &w_next))?;
    let g_y = guard(k, "g_y", problem.grad_phi_y(x, theta, y))?;
    let s = match variant {
        Variant::Opf => set_x.lmo(&g_x)?,
        Variant::Fp => set_x.project(&(x - st.tau * &g_x))?,
    };
    let s = guard(k, "s", s)?;
    let x_next = guard(k, "x", st.gamma * &s + (1.0 - st.gamma) * x)?;
    let theta_next = guard(k, "theta", lower_step(problem, &x_next, theta, st.alpha))?;
    let y_next = guard(k, "y", dual_step(set_y, y, &cfg.y0, &g_y, st.sigma, st.mu)?)?;

    let phi_surrogate = problem.phi(x, theta, y);
    if !phi_surrogate.is_finite() {
        return Err(Error::Divergence {
            k,
            quantity: "phi".into(),
        });
    }
    let diagnostics = StepDiagnostics {
        step_norm_x: (&x_next - x).norm(),
        step_norm_y: (&y_next - y).norm(),
        g_x,
        g_y,
        s,
        phi_surrogate,
    };
    let next = IterateState {
        k: k + 1,
        x: x_next,
        y: y_next,
        theta: theta_next,
        w: w_next,
    };
    Ok((next, diagnostics))
}

/// One iteration of the one-sided projection-free method.
pub fn opf_step<P: SpBilevelProblem + ?Sized>(
    problem: &P,
    set_x: &SetSpec,
    set_y: &SetSpec,
    cfg: &SolverConfig,
    state: &IterateState,
) -> Result<(IterateState, StepDiagnostics)> {
    step_impl(Variant::Opf, problem, set_x, set_y, cfg, state)
}

/// One iteration of the fully projected method.
pub fn fp_step<P: SpBilevelProblem + ?Sized>(
    problem: &P,
    set_x: &SetSpec,
    set_y: &SetSpec,
    cfg: &SolverConfig,
    state: &IterateState,
) -> Result<(IterateState, StepDiagnostics)> {
    step_impl(Variant::Fp, problem, set_x, set_y, cfg, state)
}

/// One iteration of `cfg.variant`.
pub fn step<P: SpBilevelProblem + ?Sized>(
    problem: &P,
    set_x: &SetSpec,
    set_y: &SetSpec,
    cfg: &SolverConfig,
    state: &IterateState,
) -> Result<(IterateState, StepDiagnostics)> {
    step_impl(cfg.variant, problem, set_x, set_y, cfg, state)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    /// Diagnostics of iteration `k` at index `k`.
    pub diagnostics: Vec<StepDiagnostics>,
    pub final_state: IterateState,
}

/// Runs `cfg.iterations` steps from the configured start.
///
/// The observer receives the pre-step state `x_k` and the diagnostics of
/// step `k` whenever `k` is a multiple of `eval_every`, and always for the
/// last step `k = K - 1`.
pub fn run<P, F>(
    problem: &P,
    set_x: &SetSpec,
    set_y: &SetSpec,
    cfg: &SolverConfig,
    mut observer: F,
) -> Result<Trace>
where
    P: SpBilevelProblem + ?Sized,
    F: FnMut(&IterateState, &StepDiagnostics),
{
    cfg.validate(problem, set_x, set_y)?;
    let mut state = cfg.initial_state();
    let mut diagnostics = Vec::with_capacity(cfg.iterations);
    for k in 0..cfg.iterations {
        let (next, diag) = step(problem, set_x, set_y, cfg, &state)?;
        if k % cfg.eval_every == 0 || k + 1 == cfg.iterations {
            observer(&state, &diag);
        }
        diagnostics.push(diag);
        state = next;
    }
    Ok(Trace {
        diagnostics,
        final_state: state,
    })
}
