//! Exact implicit gradients and the stationarity gap functions.
//!
//! The lower level is solved by gradient descent and the adjoint system by
//! matrix-free conjugate gradients, both to tight tolerances, so these
//! measurements are independent of the single-step estimates the solvers
//! maintain.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;

use crate::error::{check_finite, Error, Result};
use crate::problem::SpBilevelProblem;
use crate::sets::SetSpec;

pub const DEFAULT_LOWER_TOL: f64 = 1e-9;
pub const DEFAULT_ADJOINT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITER: usize = 200_000;
/// `tau` used for projection-mode gaps when the run has none.
pub const DEFAULT_GAP_TAU: f64 = 1.0;

/// Result of an inner iterative solve.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolve {
    pub solution: DVector<f64>,
    pub residual: f64,
    pub iterations: usize,
}

impl InnerSolve {
    fn into_result(self, solver: &'static str, tol: f64) -> Result<Self> {
        if self.residual <= tol {
            Ok(self)
        } else {
            Err(Error::ToleranceNotMet {
                solver,
                residual: self.residual,
                tol,
                iterations: self.iterations,
            })
        }
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if tol > 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("tolerance must be positive, got {tol}")))
    }
}

fn lower_descent<P: SpBilevelProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    start: Option<&DVector<f64>>,
    tol: f64,
    max_iter: usize,
) -> Result<InnerSolve> {
    let dims = problem.dims();
    let alpha = problem.constants().lower_step();
    let mut theta = match start {
        Some(t) => {
            dims.check_theta(t)?;
            t.clone()
        }
        None => DVector::zeros(dims.m_theta),
    };
    let mut grad = problem.grad_g_theta(x, &theta);
    check_finite("grad_g_theta", grad.as_slice())?;
    let mut iterations = 0;
    while grad.norm() > tol && iterations < max_iter {
        theta.axpy(-alpha, &grad, 1.0);
        grad = problem.grad_g_theta(x, &theta);
        check_finite("grad_g_theta", grad.as_slice())?;
        iterations += 1;
    }
    Ok(InnerSolve {
        residual: grad.norm(),
        solution: theta,
        iterations,
    })
}

/// Minimizes `g(x, .)` by gradient descent with step `2/(mu_g + L_g)` until
/// `||grad_theta g|| <= tol`. By strong convexity the distance to the true
/// minimizer is at most `residual / mu_g`.
pub fn solve_lower<P: SpBilevelProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    start: Option<&DVector<f64>>,
    tol: f64,
    max_iter: usize,
) -> Result<InnerSolve> {
    check_tol(tol)?;
    problem.dims().check_x(x)?;
    lower_descent(problem, x, start, tol, max_iter)?.into_result("solve_lower", tol)
}

fn conjugate_gradient<P: SpBilevelProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    theta: &DVector<f64>,
    rhs: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<InnerSolve> {
    let hvp = |v: &DVector<f64>| -> Result<DVector<f64>> {
        let out = problem.hvp_g_thetatheta(x, theta, v);
        check_finite("hvp_g_thetatheta", out.as_slice())?;
        Ok(out)
    };
    let mut v = DVector::zeros(rhs.len());
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut rr = r.norm_squared();
    let mut iterations = 0;
    while rr.sqrt() > tol && iterations < max_iter {
        let hp = hvp(&p)?;
        let curvature = p.dot(&hp);
        if !(curvature > 0.0) {
            return Err(Error::Coercivity(format!(
                "conjugate gradient found p'Hp = {curvature:e} at iteration {iterations}; the lower level is not strongly convex at this point"
            )));
        }
        let step = rr / curvature;
        v.axpy(step, &p, 1.0);
        r.axpy(-step, &hp, 1.0);
        let rr_next = r.norm_squared();
        p = &r + (rr_next / rr) * &p;
        rr = rr_next;
        iterations += 1;
        // Recompute the true residual periodically to avoid recursion drift.
        if iterations % 50 == 0 {
            r = rhs - hvp(&v)?;
            rr = r.norm_squared();
        }
    }
    let residual = if iterations == 0 {
        rr.sqrt()
    } else {
        (hvp(&v)? - rhs).norm()
    };
    Ok(InnerSolve {
        solution: v,
        residual,
        iterations,
    })
}

/// Solves `grad^2_{theta theta} g(x, theta*) v = grad_theta phi(x, theta*, y)`
/// by conjugate gradients using only Hessian-vector products.
pub fn solve_adjoint<P: SpBilevelProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    theta_star: &DVector<f64>,
    y: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<InnerSolve> {
    check_tol(tol)?;
    let dims = problem.dims();
    dims.check_x(x)?;
    dims.check_theta(theta_star)?;
    dims.check_y(y)?;
    let rhs = problem.grad_phi_theta(x, theta_star, y);
    check_finite("grad_phi_theta", rhs.as_slice())?;
    conjugate_gradient(problem, x, theta_star, &rhs, tol, max_iter)?.into_result("solve_adjoint", tol)
}

/// Tolerances and budgets for the two inner solves.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerSolveOptions {
    pub lower_tol: f64,
    pub adjoint_tol: f64,
    pub max_iter: usize,
    /// Starting point for the lower-level descent, typically the current
    /// solver iterate `theta_k`.
    pub warm_start: Option<DVector<f64>>,
}

impl Default for InnerSolveOptions {
    fn default() -> Self {
        Self {
            lower_tol: DEFAULT_LOWER_TOL,
            adjoint_tol: DEFAULT_ADJOINT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            warm_start: None,
        }
    }
}

impl InnerSolveOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            lower_tol: tol,
            adjoint_tol: tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImplicitGradients {
    pub theta_star: DVector<f64>,
    pub v: DVector<f64>,
    /// Total derivative of `phi(x, theta*(x), y)` in `x`.
    pub grad_x: DVector<f64>,
    pub grad_y: DVector<f64>,
    pub lower_residual: f64,
    pub adjoint_residual: f64,
}

impl ImplicitGradients {
    /// Whether both inner residuals met the requested tolerances.
    pub fn is_fresh(&self, opts: &InnerSolveOptions) -> bool {
        self.lower_residual <= opts.lower_tol && self.adjoint_residual <= opts.adjoint_tol
    }
}

fn compose_gradients<P: SpBilevelProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    y: &DVector<f64>,
    lower: InnerSolve,
    adjoint: InnerSolve,
) -> Result<ImplicitGradients> {
    let theta_star = lower.solution;
    let v = adjoint.solution;
    let grad_x = problem.grad_phi_x(x, &theta_star, y) - problem.jvp_g_thetax(x, &theta_star, &v);
    let grad_y = problem.grad_phi_y(x, &theta_star, y);
    check_finite("implicit grad_x", grad_x.as_slice())?;
    check_finite("implicit grad_y", grad_y.as_slice())?;
    Ok(ImplicitGradients {
        theta_star,
        v,
        grad_x,
        grad_y,
        lower_residual: lower.residual,
        adjoint_residual: adjoint.residual,
    })
}

/// `grad_x L = grad_x phi(x, theta*, y) - grad^2_{theta x} g(x, theta*) v`
/// and `grad_y L = grad_y phi(x, theta*, y)`, with `theta*` and `v` from the
/// inner solves. Fails if either inner solve misses its tolerance.
pub fn implicit_gradients<P: SpBilevelProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    y: &DVector<f64>,
    opts: &InnerSolveOptions,
) -> Result<ImplicitGradients> {
    check_tol(opts.lower_tol)?;
    check_tol(opts.adjoint_tol)?;
    let dims = problem.dims();
    dims.check_x(x)?;
    dims.check_y(y)?;
    let lower = solve_lower(problem, x, opts.warm_start.as_ref(), opts.lower_tol, opts.max_iter)?;
    let adjoint = solve_adjoint(problem, x, &lower.solution, y, opts.adjoint_tol, opts.max_iter)?;
    compose_gradients(problem, x, y, lower, adjoint)
}

/// Like [`implicit_gradients`] but returns the best available estimate
/// when an inner solve exhausts its budget; check [`ImplicitGradients::is_fresh`].
pub fn implicit_gradients_lenient<P: SpBilevelProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    y: &DVector<f64>,
    opts: &InnerSolveOptions,
) -> Result<ImplicitGradients> {
    check_tol(opts.lower_tol)?;
    check_tol(opts.adjoint_tol)?;
    let dims = problem.dims();
    dims.check_x(x)?;
    dims.check_y(y)?;
    let lower = lower_descent(problem, x, opts.warm_start.as_ref(), opts.lower_tol, opts.max_iter)?;
    let rhs = problem.grad_phi_theta(x, &lower.solution, y);
    check_finite("grad_phi_theta", rhs.as_slice())?;
    let adjoint = conjugate_gradient(problem, x, &lower.solution, &rhs, opts.adjoint_tol, opts.max_iter)?;
    compose_gradients(problem, x, y, lower, adjoint)
}

fn clamp_gap(v: f64) -> f64 {
    v.max(0.0)
}

/// Frank-Wolfe gap `sup_{s in X} <grad_x L, x - s>`.
pub fn gap_x_lmo(set_x: &SetSpec, grads: &ImplicitGradients, x: &DVector<f64>) -> Result<f64> {
    let s = set_x.lmo(&grads.grad_x)?;
    Ok(clamp_gap(grads.grad_x.dot(&(x - s))))
}

/// Scaled projected-step norm `||x - P_X(x - tau grad_x L)|| / tau`.
pub fn gap_x_proj(set_x: &SetSpec, grads: &ImplicitGradients, x: &DVector<f64>, tau: f64) -> Result<f64> {
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig(format!("tau must be positive, got {tau}")));
    }
    let s = set_x.project(&(x - tau * &grads.grad_x))?;
    Ok(clamp_gap((x - s).norm() / tau))
}

/// Dual gap `||y - P_Y(y + sigma grad_y L)|| / sigma`.
pub fn gap_y(set_y: &SetSpec, grads: &ImplicitGradients, y: &DVector<f64>, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidConfig(format!("sigma must be positive, got {sigma}")));
    }
    let p = set_y.project(&(y + sigma * &grads.grad_y))?;
    Ok(clamp_gap((y - p).norm() / sigma))
}

/// Which primal gap to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum GapMode {
    /// Frank-Wolfe gap through the linear minimization oracle.
    Lmo,
    /// Scaled projected-gradient step.
    Proj,
}

impl GapMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            GapMode::Lmo => "lmo",
            GapMode::Proj => "proj",
        }
    }
}

impl fmt::Display for GapMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GapMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lmo" => Ok(GapMode::Lmo),
            "proj" => Ok(GapMode::Proj),
            other => Err(Error::InvalidConfig(format!("unknown gap mode `{other}`; valid options: lmo, proj"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub gap_x: f64,
    pub gap_y: f64,
    /// Always `gap_x + gap_y`.
    pub gap_z: f64,
    pub mode: GapMode,
    pub sigma_used: f64,
    pub tau_used: Option<f64>,
    pub gradients: ImplicitGradients,
    /// An inner solve missed its tolerance; the gaps are approximate.
    pub stale: bool,
}

impl GapReport {
    /// `gap_z <= eps`.
    pub fn is_stationary(&self, eps: f64) -> bool {
        self.gap_z <= eps
    }
}

/// Evaluates the primal and dual gaps at `(x, y)`. In projection mode a
/// missing `tau` defaults to [`DEFAULT_GAP_TAU`]. Inner solves that exhaust
/// their budget mark the report stale instead of failing.
#[allow(clippy::too_many_arguments)]
pub fn gap_report<P: SpBilevelProblem + ?Sized>(
    problem: &P,
    set_x: &SetSpec,
    set_y: &SetSpec,
    x: &DVector<f64>,
    y: &DVector<f64>,
    mode: GapMode,
    sigma: f64,
    tau: Option<f64>,
    opts: &InnerSolveOptions,
) -> Result<GapReport> {
    let gradients = implicit_gradients_lenient(problem, x, y, opts)?;
    let (gap_x, tau_used) = match mode {
        GapMode::Lmo => (gap_x_lmo(set_x, &gradients, x)?, None),
        GapMode::Proj => {
            let tau = tau.unwrap_or(DEFAULT_GAP_TAU);
            (gap_x_proj(set_x, &gradients, x, tau)?, Some(tau))
        }
    };
    let gap_y = gap_y(set_y, &gradients, y, sigma)?;
    Ok(GapReport {
        gap_x,
        gap_y,
        gap_z: gap_x + gap_y,
        mode,
        sigma_used: sigma,
        tau_used,
        stale: !gradients.is_fresh(opts),
        gradients,
    })
}
