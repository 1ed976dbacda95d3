//! Single-loop projection-free and fully projected solvers for constrained
//! nonconvex-concave saddle-point problems with a bilevel structure.
//!
//! ```text
//! min_{x in X} max_{y in Y}  phi(x, theta*(x), y)
//!   s.t. theta*(x) = argmin_theta g(x, theta)
//! ```
//!
//! with `g` strongly convex in `theta`. Problems are described by oracles
//! implementing [`SpBilevelProblem`]; constraint sets by [`SetSpec`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod benchmark;
pub mod check;
pub mod error;
pub mod metrics;
pub mod problem;
pub mod schedule;
pub mod sets;
pub mod solver;
pub mod verify;

mod util;

pub use check::{check_gradients, check_hvp, CheckEntry, CheckReport};
pub use error::{Error, Result};
pub use metrics::{gap_report, implicit_gradients, GapMode, GapReport, ImplicitGradients, InnerSolveOptions};
pub use problem::{Dims, SmoothnessConstants, SpBilevelProblem};
pub use schedule::{schedule_experiment, schedule_theory, theory_constants, TheoryConstants};
pub use sets::{SetShape, SetSpec};
pub use solver::{run, step, IterateState, SolverConfig, StepDiagnostics, StepSizes, Trace, Variant};

pub use nalgebra::{DMatrix, DVector};
