//! Finite-difference consistency checks for user-supplied oracles.
//!
//! Every check compares an analytic oracle against a central difference of a
//! lower-order oracle along seeded random directions, so a report is
//! reproducible run to run.

use std::fmt;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_finite, Error, Result};
use crate::problem::SpBilevelProblem;
use crate::util::{bitwise_eq, unit_vector};

/// Default central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-6;
/// Pass threshold for finite-difference comparisons.
pub const FD_TOLERANCE: f64 = 1e-5;
/// Threshold for the algebraic probes (linearity, symmetry, coercivity).
pub const ALGEBRAIC_TOLERANCE: f64 = 1e-10;

const NUM_DIRECTIONS: usize = 10;
const POWER_ITERATIONS: usize = 200;
const CHECK_SEED: u64 = 0x5eed_c0de;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckEntry {
    pub name: String,
    /// Largest error observed over all probes.
    pub error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl CheckEntry {
    pub fn new(name: &str, error: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            error,
            tolerance,
            passed: error <= tolerance,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckReport {
    pub entries: Vec<CheckEntry>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn entry(&self, name: &str) -> Option<&CheckEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CheckEntry> {
        self.entries.iter().filter(|e| !e.passed)
    }

    pub fn merge(mut self, other: CheckReport) -> Self {
        self.entries.extend(other.entries);
        self
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for e in &self.entries {
            writeln!(
                f,
                "{:<6} {:<28} error={:.3e} tol={:.1e}",
                if e.passed { "PASS" } else { "FAIL" },
                e.name,
                e.error,
                e.tolerance
            )?;
        }
        Ok(())
    }
}

fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn relative_error_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / a.norm().max(b.norm()).max(1.0)
}

fn check_step(h: f64) -> Result<()> {
    if h > 0.0 && h <= 1e-3 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("finite-difference step must lie in (0, 1e-3], got {h}")))
    }
}

fn finite_vec(oracle: &str, v: DVector<f64>) -> Result<DVector<f64>> {
    check_finite(oracle, v.as_slice())?;
    Ok(v)
}

fn finite_val(oracle: &str, v: f64) -> Result<f64> {
    check_finite(oracle, &[v])?;
    Ok(v)
}

/// Compares every first-order oracle against central differences of the
/// matching value oracle along 10 seeded random unit directions.
pub fn check_gradients<P: SpBilevelProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    theta: &DVector<f64>,
    y: &DVector<f64>,
    h: f64,
) -> Result<CheckReport> {
    check_step(h)?;
    let dims = problem.dims();
    dims.check_x(x)?;
    dims.check_theta(theta)?;
    dims.check_y(y)?;

    let mut rng = ChaCha8Rng::seed_from_u64(CHECK_SEED);
    let phi = |x: &DVector<f64>, t: &DVector<f64>, y: &DVector<f64>| {
        finite_val("phi", problem.phi(x, t, y))
    };
    let g = |x: &DVector<f64>, t: &DVector<f64>| finite_val("g_val", problem.g_val(x, t));

    let gx = finite_vec("grad_phi_x", problem.grad_phi_x(x, theta, y))?;
    let gt = finite_vec("grad_phi_theta", problem.grad_phi_theta(x, theta, y))?;
    let gy = finite_vec("grad_phi_y", problem.grad_phi_y(x, theta, y))?;
    let gg = finite_vec("grad_g_theta", problem.grad_g_theta(x, theta))?;

    let mut err = [0.0f64; 4];
    for _ in 0..NUM_DIRECTIONS {
        let u = unit_vector(&mut rng, dims.n_x);
        let fd = (phi(&(x + h * &u), theta, y)? - phi(&(x - h * &u), theta, y)?) / (2.0 * h);
        err[0] = err[0].max(relative_error(fd, gx.dot(&u)));

        let u = unit_vector(&mut rng, dims.m_theta);
        let fd = (phi(x, &(theta + h * &u), y)? - phi(x, &(theta - h * &u), y)?) / (2.0 * h);
        err[1] = err[1].max(relative_error(fd, gt.dot(&u)));

        let u = unit_vector(&mut rng, dims.d_y);
        let fd = (phi(x, theta, &(y + h * &u))? - phi(x, theta, &(y - h * &u))?) / (2.0 * h);
        err[2] = err[2].max(relative_error(fd, gy.dot(&u)));

        let u = unit_vector(&mut rng, dims.m_theta);
        let fd = (g(x, &(theta + h * &u))? - g(x, &(theta - h * &u))?) / (2.0 * h);
        err[3] = err[3].max(relative_error(fd, gg.dot(&u)));
    }

    let pure = problem.phi(x, theta, y).to_bits() == problem.phi(x, theta, y).to_bits()
        && problem.g_val(x, theta).to_bits() == problem.g_val(x, theta).to_bits()
        && bitwise_eq(&gx, &problem.grad_phi_x(x, theta, y))
        && bitwise_eq(&gt, &problem.grad_phi_theta(x, theta, y))
        && bitwise_eq(&gy, &problem.grad_phi_y(x, theta, y))
        && bitwise_eq(&gg, &problem.grad_g_theta(x, theta));

    Ok(CheckReport {
        entries: vec![
            CheckEntry::new("grad_phi_x", err[0], FD_TOLERANCE),
            CheckEntry::new("grad_phi_theta", err[1], FD_TOLERANCE),
            CheckEntry::new("grad_phi_y", err[2], FD_TOLERANCE),
            CheckEntry::new("grad_g_theta", err[3], FD_TOLERANCE),
            CheckEntry::new("gradient_purity", if pure { 0.0 } else { 1.0 }, 0.0),
        ],
    })
}

/// Validates the two second-order oracles of `g` against central
/// differences of `grad_g_theta`, and probes the Hessian for linearity,
/// symmetry, and the declared `[mu_g, L_g]` curvature bounds.
pub fn check_hvp<P: SpBilevelProblem + ?Sized>(
    problem: &P,
    x: &DVector<f64>,
    theta: &DVector<f64>,
    h: f64,
) -> Result<CheckReport> {
    check_step(h)?;
    let dims = problem.dims();
    dims.check_x(x)?;
    dims.check_theta(theta)?;
    let constants = problem.constants();

    let mut rng = ChaCha8Rng::seed_from_u64(CHECK_SEED ^ 0xa5a5);
    let hvp = |v: &DVector<f64>| finite_vec("hvp_g_thetatheta", problem.hvp_g_thetatheta(x, theta, v));
    let grad_g = |x: &DVector<f64>, t: &DVector<f64>| finite_vec("grad_g_theta", problem.grad_g_theta(x, t));

    // Central differences of grad_g_theta along theta and along each x axis.
    let mut hvp_err = 0.0f64;
    let mut jvp_err = 0.0f64;
    let x_diffs: Vec<DVector<f64>> = (0..dims.n_x)
        .map(|j| {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            Ok((grad_g(&xp, theta)? - grad_g(&xm, theta)?) / (2.0 * h))
        })
        .collect::<Result<_>>()?;
    for _ in 0..NUM_DIRECTIONS {
        let v = unit_vector(&mut rng, dims.m_theta);
        let fd = (grad_g(x, &(theta + h * &v))? - grad_g(x, &(theta - h * &v))?) / (2.0 * h);
        hvp_err = hvp_err.max(relative_error_vec(&fd, &hvp(&v)?));

        let fd = DVector::from_iterator(dims.n_x, x_diffs.iter().map(|d| d.dot(&v)));
        let an = finite_vec("jvp_g_thetax", problem.jvp_g_thetax(x, theta, &v))?;
        jvp_err = jvp_err.max(relative_error_vec(&fd, &an));
    }

    let zero = hvp(&DVector::zeros(dims.m_theta))?;
    let zero_err = zero.amax();

    let mut lin_err = 0.0f64;
    let mut sym_err = 0.0f64;
    let mut coercive_err = 0.0f64;
    let bounds_violation = |rq: f64| -> f64 {
        let lo = constants.mu_g * (1.0 - ALGEBRAIC_TOLERANCE);
        let hi = constants.l_g * (1.0 + ALGEBRAIC_TOLERANCE);
        if rq < lo {
            (lo - rq) / constants.mu_g
        } else if rq > hi {
            (rq - hi) / constants.l_g
        } else {
            0.0
        }
    };
    for _ in 0..NUM_DIRECTIONS {
        let u = unit_vector(&mut rng, dims.m_theta);
        let w = unit_vector(&mut rng, dims.m_theta);
        let (a, b) = (1.7, -0.3);
        let hu = hvp(&u)?;
        let hw = hvp(&w)?;
        let combo = hvp(&(a * &u + b * &w))?;
        lin_err = lin_err.max(relative_error_vec(&combo, &(a * &hu + b * &hw)));

        let (uhw, whu) = (u.dot(&hw), w.dot(&hu));
        sym_err = sym_err.max((uhw - whu).abs() / hu.norm().max(hw.norm()).max(f64::MIN_POSITIVE));

        coercive_err = coercive_err.max(bounds_violation(u.dot(&hu)));
    }

    // Power iteration for both ends of the spectrum. Rayleigh quotients always
    // lie inside [lambda_min, lambda_max], so these probes never report a
    // violation that is not there.
    let shift = constants.l_g;
    let mut top = unit_vector(&mut rng, dims.m_theta);
    let mut bottom = unit_vector(&mut rng, dims.m_theta);
    for _ in 0..POWER_ITERATIONS {
        let next = hvp(&top)?;
        let n = next.norm();
        if n == 0.0 {
            break;
        }
        top = next / n;
        let next = shift * &bottom - hvp(&bottom)?;
        let n = next.norm();
        if n == 0.0 {
            break;
        }
        bottom = next / n;
    }
    coercive_err = coercive_err
        .max(bounds_violation(top.dot(&hvp(&top)?)))
        .max(bounds_violation(bottom.dot(&hvp(&bottom)?)));

    let pure = bitwise_eq(&problem.hvp_g_thetatheta(x, theta, &top), &problem.hvp_g_thetatheta(x, theta, &top))
        && bitwise_eq(&problem.jvp_g_thetax(x, theta, &top), &problem.jvp_g_thetax(x, theta, &top));

    Ok(CheckReport {
        entries: vec![
            CheckEntry::new("hvp_g_thetatheta", hvp_err, FD_TOLERANCE),
            CheckEntry::new("jvp_g_thetax", jvp_err, FD_TOLERANCE),
            CheckEntry::new("hvp_zero", zero_err, 0.0),
            CheckEntry::new("hvp_linearity", lin_err, ALGEBRAIC_TOLERANCE),
            CheckEntry::new("hvp_symmetry", sym_err, ALGEBRAIC_TOLERANCE),
            CheckEntry::new("coercivity", coercive_err, 0.0),
            CheckEntry::new("hessian_purity", if pure { 0.0 } else { 1.0 }, 0.0),
        ],
    })
}
