//! Concrete problem instances: robust multi-task regression and a closed-form
//! quadratic used as a verification oracle.

pub mod data;
pub mod mtl;
pub mod toy;

pub use data::{
    gen_from_model, gen_synthetic, load_csv, partition_tasks, task_sizes, train_count, LipschitzEstimate,
    MtlConfig, MtlDataset, SyntheticModel, TaskData,
};
pub use mtl::{build_mtl_problem, exact_lower_solution, MtlProblem};
pub use toy::{toy_quadratic, toy_quadratic_with_spectrum, toy_stationary_instance, ClosedForms, ToyInstance, ToyQuadratic};
