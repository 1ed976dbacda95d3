//! Worst-task robust multi-task linear regression as a bilevel saddle point
//! problem.
//!
//! Variables: the min variable stacks the shared coefficients `x` (length
//! `d`) and the mixing weights `lambda` (length `T`); the max variable is a
//! task weighting `eta` on the simplex; the lower variable stacks the
//! task-specific coefficients `y_1, ..., y_T`.
//!
//! ```text
//! g((x, lambda), y)   = sum_i l_i(lambda_i y_i + (1 - lambda_i) x; train_i) + reg_rho/2 ||y||^2
//! phi((x, lambda), y, eta) = sum_i eta_i l_i(y_i; val_i)
//! l_i(u; D)           = ||A u - b||^2 / (2 n_rows)
//! ```

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::problem::{Dims, SmoothnessConstants, SpBilevelProblem};
use crate::sets::SetSpec;

use super::data::{LipschitzEstimate, MtlConfig, MtlDataset};

#[derive(Debug, Clone)]
struct TaskBlock {
    a_train: DMatrix<f64>,
    b_train: DVector<f64>,
    a_val: DMatrix<f64>,
    b_val: DVector<f64>,
    /// `A'A / n` and `A'b / n` on the training rows.
    gram_train: DMatrix<f64>,
    corr_train: DVector<f64>,
    gram_val: DMatrix<f64>,
    corr_val: DVector<f64>,
}

impl TaskBlock {
    fn loss(a: &DMatrix<f64>, b: &DVector<f64>, u: &DVector<f64>) -> f64 {
        (a * u - b).norm_squared() / (2.0 * a.nrows() as f64)
    }
}

/// The multi-task regression problem with closed-form oracles.
#[derive(Debug, Clone)]
pub struct MtlProblem {
    d: usize,
    tasks: Vec<TaskBlock>,
    reg_rho: f64,
    dims: Dims,
    constants: SmoothnessConstants,
}

fn gram(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows() as f64;
    let mut g = a.tr_mul(a) / n;
    // Exact symmetry keeps the Hessian oracle symmetric to the last bit.
    for i in 0..g.nrows() {
        for j in 0..i {
            g[(i, j)] = g[(j, i)];
        }
    }
    g
}

impl MtlProblem {
    pub fn new(ds: &MtlDataset, cfg: &MtlConfig) -> Result<Self> {
        cfg.validate()?;
        if ds.num_tasks() != cfg.num_tasks {
            return Err(Error::InvalidConfig(format!(
                "dataset has {} tasks but config asks for {}",
                ds.num_tasks(),
                cfg.num_tasks
            )));
        }
        let d = ds.d;
        let tasks: Vec<TaskBlock> = ds
            .tasks
            .iter()
            .map(|t| TaskBlock {
                gram_train: gram(&t.a_train),
                corr_train: t.a_train.tr_mul(&t.b_train) / t.n_train() as f64,
                gram_val: gram(&t.a_val),
                corr_val: t.a_val.tr_mul(&t.b_val) / t.n_val() as f64,
                a_train: t.a_train.clone(),
                b_train: t.b_train.clone(),
                a_val: t.a_val.clone(),
                b_val: t.b_val.clone(),
            })
            .collect();
        let curvature = tasks
            .iter()
            .map(|t| match cfg.lipschitz {
                LipschitzEstimate::Frobenius => t.a_train.norm_squared() / t.a_train.nrows() as f64,
                LipschitzEstimate::Spectral => SymmetricEigen::new(t.gram_train.clone()).eigenvalues.max(),
            })
            .fold(0.0, f64::max);
        let constants = SmoothnessConstants::linear(cfg.reg_rho, cfg.reg_rho + curvature)?;
        let dims = Dims::new(d + cfg.num_tasks, cfg.num_tasks, d * cfg.num_tasks)?;
        Ok(Self {
            d,
            tasks,
            reg_rho: cfg.reg_rho,
            dims,
            constants,
        })
    }

    pub fn feature_dim(&self) -> usize {
        self.d
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    /// Splits the min variable into `(x, lambda)`.
    pub fn split_x<'a>(&self, xl: &'a DVector<f64>) -> (nalgebra::DVectorView<'a, f64>, nalgebra::DVectorView<'a, f64>) {
        (xl.rows(0, self.d), xl.rows(self.d, self.tasks.len()))
    }

    fn block<'a>(&self, theta: &'a DVector<f64>, i: usize) -> nalgebra::DVectorView<'a, f64> {
        theta.rows(i * self.d, self.d)
    }

    /// Shared coefficients at zero and every mixing weight at one half.
    pub fn default_x0(&self) -> DVector<f64> {
        let mut x0 = DVector::zeros(self.dims.n_x);
        x0.rows_mut(self.d, self.tasks.len()).fill(0.5);
        x0
    }

    /// Per-task validation losses at the given task coefficients.
    pub fn validation_losses(&self, theta: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.tasks.len(), |i, _| {
            let t = &self.tasks[i];
            TaskBlock::loss(&t.a_val, &t.b_val, &self.block(theta, i).into_owned())
        })
    }

    /// Per-task training inputs `lambda_i y_i + (1 - lambda_i) x`.
    fn mixed(&self, xl: &DVector<f64>, theta: &DVector<f64>, i: usize) -> DVector<f64> {
        let (x, lam) = self.split_x(xl);
        lam[i] * self.block(theta, i) + (1.0 - lam[i]) * x
    }
}

impl SpBilevelProblem for MtlProblem {
    fn dims(&self) -> Dims {
        self.dims
    }

    fn constants(&self) -> SmoothnessConstants {
        self.constants
    }

    fn phi(&self, _x: &DVector<f64>, theta: &DVector<f64>, eta: &DVector<f64>) -> f64 {
        self.validation_losses(theta).dot(eta)
    }

    fn grad_phi_x(&self, _x: &DVector<f64>, _theta: &DVector<f64>, _eta: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(self.dims.n_x)
    }

    fn grad_phi_theta(&self, _x: &DVector<f64>, theta: &DVector<f64>, eta: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.dims.m_theta);
        for (i, t) in self.tasks.iter().enumerate() {
            let y = self.block(theta, i);
            let g = eta[i] * (&t.gram_val * y - &t.corr_val);
            out.rows_mut(i * self.d, self.d).copy_from(&g);
        }
        out
    }

    fn grad_phi_y(&self, _x: &DVector<f64>, theta: &DVector<f64>, _eta: &DVector<f64>) -> DVector<f64> {
        self.validation_losses(theta)
    }

    fn g_val(&self, xl: &DVector<f64>, theta: &DVector<f64>) -> f64 {
        let fit: f64 = self
            .tasks
            .iter()
            .enumerate()
            .map(|(i, t)| TaskBlock::loss(&t.a_train, &t.b_train, &self.mixed(xl, theta, i)))
            .sum();
        fit + 0.5 * self.reg_rho * theta.norm_squared()
    }

    fn grad_g_theta(&self, xl: &DVector<f64>, theta: &DVector<f64>) -> DVector<f64> {
        let (_, lam) = self.split_x(xl);
        let mut out = DVector::zeros(self.dims.m_theta);
        for (i, t) in self.tasks.iter().enumerate() {
            let u = self.mixed(xl, theta, i);
            let g = lam[i] * (&t.gram_train * u - &t.corr_train) + self.reg_rho * self.block(theta, i);
            out.rows_mut(i * self.d, self.d).copy_from(&g);
        }
        out
    }

    fn hvp_g_thetatheta(&self, xl: &DVector<f64>, _theta: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let (_, lam) = self.split_x(xl);
        let mut out = DVector::zeros(self.dims.m_theta);
        for (i, t) in self.tasks.iter().enumerate() {
            let vi = self.block(v, i);
            let h = (lam[i] * lam[i]) * (&t.gram_train * vi) + self.reg_rho * vi;
            out.rows_mut(i * self.d, self.d).copy_from(&h);
        }
        out
    }

    fn jvp_g_thetax(&self, xl: &DVector<f64>, theta: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let (x, lam) = self.split_x(xl);
        let mut out = DVector::zeros(self.dims.n_x);
        for (i, t) in self.tasks.iter().enumerate() {
            let vi = self.block(v, i);
            let l = lam[i];
            let gv = &t.gram_train * vi;
            // d/dx <grad_{y_i} g, v_i> = lambda_i (1 - lambda_i) G_i v_i
            let mut shared = out.rows_mut(0, self.d);
            shared += (l * (1.0 - l)) * &gv;
            // d/dlambda_i <grad_{y_i} g, v_i> = v_i'(G_i (2 lambda_i y_i + (1 - 2 lambda_i) x) - c_i)
            let point = (2.0 * l) * self.block(theta, i) + (1.0 - 2.0 * l) * x;
            out[self.d + i] = gv.dot(&point) - vi.dot(&t.corr_train);
        }
        out
    }
}

/// Builds the problem together with `X = {||x||_1 <= Q} x [0, 1]^T` and
/// `Y = simplex(T)`.
pub fn build_mtl_problem(ds: &MtlDataset, cfg: &MtlConfig) -> Result<(MtlProblem, SetSpec, SetSpec)> {
    let problem = MtlProblem::new(ds, cfg)?;
    let (d, t) = (ds.d, cfg.num_tasks);
    let set_x = SetSpec::product(vec![
        (SetSpec::l1_ball(cfg.l1_radius)?, 0..d),
        (SetSpec::uniform_box(t, 0.0, 1.0)?, d..d + t),
    ])?;
    let set_y = SetSpec::simplex(t)?;
    Ok((problem, set_x, set_y))
}

/// Lower-level minimizer by a dense Cholesky solve per task:
/// `(lambda_i^2 A'A/n + reg_rho I) y_i = lambda_i A'(b - (1 - lambda_i) A x) / n`.
pub fn exact_lower_solution(ds: &MtlDataset, x: &DVector<f64>, lambda: &DVector<f64>, reg_rho: f64) -> Result<DVector<f64>> {
    if x.len() != ds.d || lambda.len() != ds.num_tasks() {
        return Err(Error::Dimension {
            context: "exact_lower_solution".into(),
            expected: ds.d + ds.num_tasks(),
            got: x.len() + lambda.len(),
        });
    }
    if !(reg_rho > 0.0) {
        return Err(Error::InvalidConfig(format!("reg_rho must be positive, got {reg_rho}")));
    }
    let d = ds.d;
    let mut out = DVector::zeros(d * ds.num_tasks());
    for (i, t) in ds.tasks.iter().enumerate() {
        let (a, b) = (&t.a_train, &t.b_train);
        let n = a.nrows() as f64;
        let l = lambda[i];
        let lhs = (l * l / n) * a.transpose() * a + DMatrix::identity(d, d) * reg_rho;
        let rhs = (l / n) * a.transpose() * (b - (1.0 - l) * (a * x));
        let chol = lhs
            .cholesky()
            .ok_or_else(|| Error::Coercivity(format!("task {i} normal matrix is not positive definite")))?;
        out.rows_mut(i * d, d).copy_from(&chol.solve(&rhs));
    }
    Ok(out)
}
