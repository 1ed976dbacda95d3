//! A fully quadratic instance whose lower-level solution, adjoint, and
//! implicit gradients all have closed forms.
//!
//! ```text
//! phi(x, theta, y) = x'Px/2 + x'M theta + y'(R theta + N x)
//! g(x, theta)      = theta'H theta/2 - theta'S x
//! ```
//!
//! so `theta*(x) = H^{-1} S x` and `v(x, y) = H^{-1}(M'x + R'y)`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::problem::{Dims, SmoothnessConstants, SpBilevelProblem};
use crate::sets::SetSpec;
use crate::util::{gaussian_matrix, unit_vector};

/// Radius of the primal Euclidean ball.
pub const TOY_X_RADIUS: f64 = 5.0;
/// Spectrum of the seeded lower-level Hessian is spread evenly over this range.
pub const TOY_EIGEN_RANGE: (f64, f64) = (1.0, 4.0);

#[derive(Debug, Clone)]
pub struct ToyQuadratic {
    pub p: DMatrix<f64>,
    pub m: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub n: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub s: DMatrix<f64>,
    dims: Dims,
    constants: SmoothnessConstants,
}

impl ToyQuadratic {
    /// Shapes: `P` n x n, `M` n x m, `R` d x m, `N` d x n, `H` m x m SPD,
    /// `S` m x n. `mu_g` and `L_g` must bound the spectrum of `H`.
    #[allow(clippy::too_many_arguments)]
    pub fn from_matrices(
        p: DMatrix<f64>,
        m: DMatrix<f64>,
        r: DMatrix<f64>,
        n: DMatrix<f64>,
        h: DMatrix<f64>,
        s: DMatrix<f64>,
        mu_g: f64,
        l_g: f64,
    ) -> Result<Self> {
        let (nx, mt, dy) = (p.nrows(), h.nrows(), r.nrows());
        let dims = Dims::new(nx, dy, mt)?;
        let shapes_ok = p.shape() == (nx, nx)
            && m.shape() == (nx, mt)
            && r.shape() == (dy, mt)
            && n.shape() == (dy, nx)
            && h.shape() == (mt, mt)
            && s.shape() == (mt, nx);
        if !shapes_ok {
            return Err(Error::InvalidConfig("toy quadratic matrices have inconsistent shapes".into()));
        }
        Ok(Self {
            p,
            m,
            r,
            n,
            h,
            s,
            dims,
            constants: SmoothnessConstants::linear(mu_g, l_g)?,
        })
    }
}

impl SpBilevelProblem for ToyQuadratic {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn constants(&self) -> SmoothnessConstants {
        self.constants
    }

    fn phi(&self, x: &DVector<f64>, theta: &DVector<f64>, y: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.p * x)) + x.dot(&(&self.m * theta)) + y.dot(&(&self.r * theta + &self.n * x))
    }

    fn grad_phi_x(&self, x: &DVector<f64>, theta: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        &self.p * x + &self.m * theta + self.n.tr_mul(y)
    }

    fn grad_phi_theta(&self, x: &DVector<f64>, _theta: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        self.m.tr_mul(x) + self.r.tr_mul(y)
    }

    fn grad_phi_y(&self, x: &DVector<f64>, theta: &DVector<f64>, _y: &DVector<f64>) -> DVector<f64> {
        &self.r * theta + &self.n * x
    }

    fn g_val(&self, x: &DVector<f64>, theta: &DVector<f64>) -> f64 {
        0.5 * theta.dot(&(&self.h * theta)) - theta.dot(&(&self.s * x))
    }

    fn grad_g_theta(&self, x: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64> {
        &self.h * theta - &self.s * x
    }

    fn hvp_g_thetatheta(&self, _x: &DVector<f64>, _theta: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        &self.h * v
    }

    fn jvp_g_thetax(&self, _x: &DVector<f64>, _theta: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        -self.s.tr_mul(v)
    }
}

/// Dense closed forms for the toy quadratic, computed with an explicit
/// Cholesky factorization of `H` and no iterative solves.
#[derive(Debug, Clone)]
pub struct ClosedForms {
    h_inv: DMatrix<f64>,
    p: DMatrix<f64>,
    m: DMatrix<f64>,
    r: DMatrix<f64>,
    n: DMatrix<f64>,
    s: DMatrix<f64>,
    /// Eigenvalues of `H`, ascending.
    pub eigenvalues: Vec<f64>,
}

impl ClosedForms {
    pub fn new(q: &ToyQuadratic) -> Result<Self> {
        let chol = q
            .h
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Coercivity("toy H is not positive definite".into()))?;
        let mut eigenvalues: Vec<f64> = q.h.clone().symmetric_eigenvalues().iter().copied().collect();
        eigenvalues.sort_by(f64::total_cmp);
        Ok(Self {
            h_inv: chol.inverse(),
            p: q.p.clone(),
            m: q.m.clone(),
            r: q.r.clone(),
            n: q.n.clone(),
            s: q.s.clone(),
            eigenvalues,
        })
    }

    pub fn theta_star(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.h_inv * (&self.s * x)
    }

    pub fn adjoint(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        &self.h_inv * (self.m.tr_mul(x) + self.r.tr_mul(y))
    }

    /// Total x-derivative of `phi(x, H^{-1} S x, y)`:
    /// `P x + M theta* + N'y + S' H^{-1} (M'x + R'y)`.
    pub fn grad_x(&self, x: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        &self.p * x + &self.m * self.theta_star(x) + self.n.tr_mul(y) + self.s.tr_mul(&self.adjoint(x, y))
    }

    pub fn grad_y(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.r * self.theta_star(x) + &self.n * x
    }
}

#[derive(Debug, Clone)]
pub struct ToyInstance {
    pub problem: ToyQuadratic,
    pub set_x: SetSpec,
    pub set_y: SetSpec,
    pub closed: ClosedForms,
}

fn random_spd(rng: &mut ChaCha8Rng, m: usize, (lo, hi): (f64, f64)) -> (DMatrix<f64>, f64, f64) {
    let q = gaussian_matrix(rng, m, m).qr().q();
    let eig = DVector::from_fn(m, |i, _| if m == 1 { lo } else { lo + (hi - lo) * i as f64 / (m - 1) as f64 });
    let mut h = &q * DMatrix::from_diagonal(&eig) * q.transpose();
    for i in 0..m {
        for j in 0..i {
            h[(i, j)] = h[(j, i)];
        }
    }
    (h, lo, if m == 1 { lo } else { hi })
}

/// Seeded toy instance with `X` the radius-5 ball and `Y` the simplex.
pub fn toy_quadratic(seed: u64, n_x: usize, m_theta: usize, d_y: usize) -> Result<ToyInstance> {
    toy_quadratic_with_spectrum(seed, n_x, m_theta, d_y, TOY_EIGEN_RANGE)
}

/// As [`toy_quadratic`] with the Hessian spectrum spread over `spectrum`.
pub fn toy_quadratic_with_spectrum(
    seed: u64,
    n_x: usize,
    m_theta: usize,
    d_y: usize,
    spectrum: (f64, f64),
) -> Result<ToyInstance> {
    Dims::new(n_x, d_y, m_theta)?;
    if !(spectrum.0 > 0.0 && spectrum.1 >= spectrum.0 && spectrum.1.is_finite()) {
        return Err(Error::InvalidConfig(format!("invalid Hessian spectrum {spectrum:?}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = gaussian_matrix(&mut rng, n_x, n_x);
    let p = &b * b.transpose() / n_x as f64;
    let m = 0.5 * gaussian_matrix(&mut rng, n_x, m_theta);
    let r = 0.5 * gaussian_matrix(&mut rng, d_y, m_theta);
    let n = 0.5 * gaussian_matrix(&mut rng, d_y, n_x);
    let s = 0.5 * gaussian_matrix(&mut rng, m_theta, n_x);
    let (h, mu_g, l_g) = random_spd(&mut rng, m_theta, spectrum);
    let problem = ToyQuadratic::from_matrices(p, m, r, n, h, s, mu_g, l_g)?;
    instance(problem)
}

fn instance(problem: ToyQuadratic) -> Result<ToyInstance> {
    let closed = ClosedForms::new(&problem)?;
    let dims = problem.dims();
    Ok(ToyInstance {
        set_x: SetSpec::ball2(DVector::zeros(dims.n_x), TOY_X_RADIUS)?,
        set_y: SetSpec::simplex(dims.d_y)?,
        closed,
        problem,
    })
}

/// A seeded toy instance together with a point `(x*, y*)` at which both
/// implicit-gradient optimality conditions hold exactly: `x*` is interior
/// with `grad_x L(x*, y*) = 0`, and `y*` is the simplex centroid with
/// `grad_y L(x*, y*)` a constant vector.
///
/// `N` is replaced by the smallest correction of the seeded `N` that
/// satisfies `N'y* = -q` and `N x* = c 1 - R theta*(x*)`, where `q` collects
/// the `N`-free part of `grad_x L(x*, y*)`.
pub fn toy_stationary_instance(
    seed: u64,
    n_x: usize,
    m_theta: usize,
    d_y: usize,
) -> Result<(ToyInstance, DVector<f64>, DVector<f64>)> {
    let base = toy_quadratic(seed, n_x, m_theta, d_y)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5add1e);
    let x_star = unit_vector(&mut rng, n_x);
    let y_star = DVector::from_element(d_y, 1.0 / d_y as f64);

    let cf = &base.closed;
    let q0 = &base.problem;
    let theta = cf.theta_star(&x_star);
    let q = &q0.p * &x_star + &q0.m * &theta + q0.s.tr_mul(&cf.adjoint(&x_star, &y_star));
    let r_theta = &q0.r * &theta;
    let c = -q.dot(&x_star) + y_star.dot(&r_theta);

    let a = -&q - q0.n.tr_mul(&y_star);
    let b = DVector::from_element(d_y, c) - &r_theta - &q0.n * &x_star;
    let yy = y_star.norm_squared();
    let b_perp = &b - &y_star * (y_star.dot(&b) / yy);
    let correction = &y_star * a.transpose() / yy + b_perp * x_star.transpose() / x_star.norm_squared();
    let n = &q0.n + correction;

    let (mu_g, l_g) = (q0.constants().mu_g, q0.constants().l_g);
    let problem = ToyQuadratic::from_matrices(q0.p.clone(), q0.m.clone(), q0.r.clone(), n, q0.h.clone(), q0.s.clone(), mu_g, l_g)?;
    Ok((instance(problem)?, x_star, y_star))
}
