//! The oracle interface for min-max problems with a bilevel structure.
//!
//! A problem couples an upper-level objective `phi(x, theta, y)`, concave in
//! `y`, with a lower-level objective `g(x, theta)` that is strongly convex in
//! `theta`. The quantity being optimized is `phi(x, theta*(x), y)` where
//! `theta*(x)` minimizes `g(x, .)`.
//!
//! Second derivatives of `g` are only ever accessed through products with a
//! vector, so large lower-level dimensions never require a dense Hessian.

use nalgebra::DVector;

use crate::error::{check_dim, Error, Result};

/// Dimensions of the min variable `x`, the max variable `y` and the
/// lower-level variable `theta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n_x: usize,
    pub d_y: usize,
    pub m_theta: usize,
}

impl Dims {
    pub fn new(n_x: usize, d_y: usize, m_theta: usize) -> Result<Self> {
        if n_x == 0 || d_y == 0 || m_theta == 0 {
            return Err(Error::InvalidConfig(format!(
                "all dimensions must be positive, got n_x={n_x}, d_y={d_y}, m_theta={m_theta}"
            )));
        }
        Ok(Self { n_x, d_y, m_theta })
    }

    pub fn check_x(&self, x: &DVector<f64>) -> Result<()> {
        check_dim("x", self.n_x, x.len())
    }

    pub fn check_y(&self, y: &DVector<f64>) -> Result<()> {
        check_dim("y", self.d_y, y.len())
    }

    pub fn check_theta(&self, theta: &DVector<f64>) -> Result<()> {
        check_dim("theta", self.m_theta, theta.len())
    }
}

/// The only smoothness constants that enter executable formulas: the
/// strong-convexity modulus and gradient Lipschitz constant of `g` in
/// `theta`, and the curvature of `phi` in `y`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothnessConstants {
    pub mu_g: f64,
    pub l_g: f64,
    /// `phi` is affine in `y`.
    pub linear_in_y: bool,
    pub l_yy_phi: f64,
}

impl SmoothnessConstants {
    pub fn new(mu_g: f64, l_g: f64, linear_in_y: bool, l_yy_phi: f64) -> Result<Self> {
        let c = Self {
            mu_g,
            l_g,
            linear_in_y,
            l_yy_phi,
        };
        c.validate()?;
        Ok(c)
    }

    /// Constants for a problem whose upper level is affine in `y`.
    pub fn linear(mu_g: f64, l_g: f64) -> Result<Self> {
        Self::new(mu_g, l_g, true, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu_g > 0.0 && self.mu_g.is_finite()) {
            return Err(Error::InvalidConfig(format!("mu_g must be positive, got {}", self.mu_g)));
        }
        if !(self.l_g >= self.mu_g && self.l_g.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "L_g must satisfy L_g >= mu_g, got L_g={} mu_g={}",
                self.l_g, self.mu_g
            )));
        }
        if !(self.l_yy_phi >= 0.0 && self.l_yy_phi.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "L_yy must be nonnegative, got {}",
                self.l_yy_phi
            )));
        }
        if self.linear_in_y && self.l_yy_phi != 0.0 {
            return Err(Error::InvalidConfig(
                "linear_in_y requires L_yy = 0".to_string(),
            ));
        }
        Ok(())
    }

    /// Condition number `L_g / mu_g` of the lower level.
    pub fn kappa_g(&self) -> f64 {
        self.l_g / self.mu_g
    }

    /// Gradient step `2 / (mu_g + L_g)` for the lower level.
    pub fn lower_step(&self) -> f64 {
        2.0 / (self.mu_g + self.l_g)
    }
}

/// Oracle bundle for a saddle point problem with a strongly convex lower
/// level. Implementations must be pure: identical inputs give bit-identical
/// outputs, and no oracle mutates shared state.
pub trait SpBilevelProblem: Send + Sync {
    fn dims(&self) -> Dims;

    fn constants(&self) -> SmoothnessConstants;

    /// Upper-level value `phi(x, theta, y)`.
    fn phi(&self, x: &DVector<f64>, theta: &DVector<f64>, y: &DVector<f64>) -> f64;

    fn grad_phi_x(&self, x: &DVector<f64>, theta: &DVector<f64>, y: &DVector<f64>) -> DVector<f64>;

    fn grad_phi_theta(
        &self,
        x: &DVector<f64>,
        theta: &DVector<f64>,
        y: &DVector<f64>,
    ) -> DVector<f64>;

    fn grad_phi_y(&self, x: &DVector<f64>, theta: &DVector<f64>, y: &DVector<f64>) -> DVector<f64>;

    /// Lower-level value `g(x, theta)`.
    fn g_val(&self, x: &DVector<f64>, theta: &DVector<f64>) -> f64;

    fn grad_g_theta(&self, x: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64>;

    /// `grad^2_{theta theta} g(x, theta) * v`, a vector in the theta space.
    fn hvp_g_thetatheta(
        &self,
        x: &DVector<f64>,
        theta: &DVector<f64>,
        v: &DVector<f64>,
    ) -> DVector<f64>;

    /// `grad^2_{theta x} g(x, theta) * v`: the x-gradient of
    /// `<grad_theta g(x, theta), v>`, a vector in the x space.
    fn jvp_g_thetax(&self, x: &DVector<f64>, theta: &DVector<f64>, v: &DVector<f64>)
        -> DVector<f64>;
}
