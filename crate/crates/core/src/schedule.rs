//! Step-size prescriptions: the experimental schedule driven by a single
//! tuning knob `nu`, the rate-optimal schedules with unit constants, and the
//! contraction factors that govern the inner recursions.

use crate::error::{Error, Result};
use crate::problem::SmoothnessConstants;
use crate::solver::{StepSizes, Variant};

/// Fixed projected-gradient step used by the experimental FP schedule.
pub const EXPERIMENT_TAU: f64 = 0.7;
const MU_FLOOR: f64 = 1e-12;

/// Contraction factors of the lower-level, adjoint, and regularized dual
/// recursions, plus the lower-level condition number.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryConstants {
    /// `(L_g - mu_g) / (L_g + mu_g)`.
    pub beta: f64,
    /// `1 - eta * mu_g`.
    pub rho: f64,
    /// `L_yy / (L_yy + 2 mu)`.
    pub rho_d: f64,
    /// `L_g / mu_g`.
    pub kappa_g: f64,
}

pub fn theory_constants(constants: &SmoothnessConstants, eta: f64, mu: f64) -> Result<TheoryConstants> {
    constants.validate()?;
    let eta_max = 2.0 / (constants.l_g + constants.mu_g);
    if !(eta > 0.0 && eta <= eta_max * (1.0 + 1e-12)) {
        return Err(Error::InvalidConfig(format!("eta must lie in (0, {eta_max}], got {eta}")));
    }
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::InvalidConfig(format!("mu must be positive, got {mu}")));
    }
    let SmoothnessConstants { mu_g, l_g, l_yy_phi, .. } = *constants;
    Ok(TheoryConstants {
        beta: (l_g - mu_g) / (l_g + mu_g),
        rho: (1.0 - eta * mu_g).max(0.0),
        rho_d: l_yy_phi / (l_yy_phi + 2.0 * mu),
        kappa_g: l_g / mu_g,
    })
}

fn check_horizon(k: usize) -> Result<f64> {
    if k == 0 {
        Err(Error::InvalidConfig("horizon K must be at least 1".into()))
    } else {
        Ok(k as f64)
    }
}

fn clamp_gamma(gamma: f64) -> f64 {
    gamma.min(1.0)
}

/// Largest dual step compatible with the regularized dual curvature.
fn dual_step(constants: &SmoothnessConstants, mu: f64) -> f64 {
    if constants.linear_in_y {
        1.0 / mu
    } else {
        2.0 / (constants.l_yy_phi + 2.0 * mu)
    }
}

/// The experimental schedule:
/// OPF uses `gamma = nu K^{-2/3}`, `mu = nu K^{-1/3}`;
/// FP uses `gamma = nu K^{-1/2}`, `mu = nu K^{-1/4}`, `tau = 0.7`.
/// Both use `sigma = 1/mu` and `alpha = eta = 2/(mu_g + L_g)`.
pub fn schedule_experiment(
    variant: Variant,
    k: usize,
    nu: f64,
    constants: &SmoothnessConstants,
) -> Result<StepSizes> {
    let kf = check_horizon(k)?;
    if !(nu > 0.0 && nu.is_finite()) {
        return Err(Error::InvalidConfig(format!("nu must be positive, got {nu}")));
    }
    let (gamma, mu, tau) = match variant {
        Variant::Opf => (nu * kf.powf(-2.0 / 3.0), nu * kf.powf(-1.0 / 3.0), EXPERIMENT_TAU),
        Variant::Fp => (nu * kf.powf(-0.5), nu * kf.powf(-0.25), EXPERIMENT_TAU),
    };
    let step = constants.lower_step();
    Ok(StepSizes {
        gamma: clamp_gamma(gamma),
        sigma: dual_step(constants, mu),
        tau,
        eta: step,
        alpha: step,
        mu,
    })
}

/// Rate-optimal constant schedules with every hidden constant set to one.
///
/// | variant | phi affine in y | mu                    | gamma                 |
/// |---------|-----------------|-----------------------|-----------------------|
/// | OPF     | no              | kappa^{3/4} K^{-1/4}  | (kappa K)^{-3/4}      |
/// | OPF     | yes             | kappa^2 K^{-1/3}      | (kappa K)^{-2/3}      |
/// | FP      | no              | kappa^{3/5} K^{-1/5}  | kappa^{9/5} K^{-3/5}  |
/// | FP      | yes             | K^{-1/4}              | K^{-1/2}              |
///
/// FP takes `tau = min(0.7, mu^2 / (gamma kappa^3))`.
pub fn schedule_theory(variant: Variant, k: usize, constants: &SmoothnessConstants) -> Result<StepSizes> {
    let kf = check_horizon(k)?;
    constants.validate()?;
    let kappa = constants.kappa_g();
    let (mu, gamma) = match (variant, constants.linear_in_y) {
        (Variant::Opf, false) => (kappa.powf(0.75) * kf.powf(-0.25), (kappa * kf).powf(-0.75)),
        (Variant::Opf, true) => (kappa.powi(2) * kf.powf(-1.0 / 3.0), (kappa * kf).powf(-2.0 / 3.0)),
        (Variant::Fp, false) => (kappa.powf(0.6) * kf.powf(-0.2), kappa.powf(1.8) * kf.powf(-0.6)),
        (Variant::Fp, true) => (kf.powf(-0.25), kf.powf(-0.5)),
    };
    let mu = mu.max(MU_FLOOR);
    let gamma = clamp_gamma(gamma);
    let tau = (mu * mu / (gamma * kappa.powi(3))).min(EXPERIMENT_TAU);
    let step = constants.lower_step();
    Ok(StepSizes {
        gamma,
        sigma: dual_step(constants, mu),
        tau,
        eta: step,
        alpha: step,
        mu,
    })
}
