//! Dataset ingestion, task partitioning, and synthetic generation for the
//! robust multi-task regression benchmark.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::util::{gaussian_matrix, gaussian_vector};

/// How the lower-level gradient Lipschitz constant is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LipschitzEstimate {
    /// `max_i ||A_i||_F^2 / n_i`, a cheap upper bound.
    #[default]
    Frobenius,
    /// `max_i lambda_max(A_i' A_i / n_i)` from a dense eigensolve.
    Spectral,
}

/// One task's train/validation split.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub a_train: DMatrix<f64>,
    pub b_train: DVector<f64>,
    pub a_val: DMatrix<f64>,
    pub b_val: DVector<f64>,
}

impl TaskData {
    pub fn n_train(&self) -> usize {
        self.a_train.nrows()
    }

    pub fn n_val(&self) -> usize {
        self.a_val.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MtlConfig {
    pub num_tasks: usize,
    /// Tikhonov weight on the task-specific coefficients.
    pub reg_rho: f64,
    /// Radius of the L1 ball on the shared coefficients.
    pub l1_radius: f64,
    /// Fraction of each task's rows used for training.
    pub split_frac: f64,
    pub seed: u64,
    /// Standard deviation of the synthetic label noise.
    pub noise_std: f64,
    pub lipschitz: LipschitzEstimate,
}

impl Default for MtlConfig {
    fn default() -> Self {
        Self {
            num_tasks: 5,
            reg_rho: 0.1,
            l1_radius: 10.0,
            split_frac: 0.75,
            seed: 0,
            noise_std: 0.1,
            lipschitz: LipschitzEstimate::Frobenius,
        }
    }
}

impl MtlConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.num_tasks == 0 {
            return bad("num_tasks must be at least 1".into());
        }
        if !(self.reg_rho > 0.0 && self.reg_rho.is_finite()) {
            return bad(format!("reg_rho must be positive, got {}", self.reg_rho));
        }
        if !(self.l1_radius > 0.0 && self.l1_radius.is_finite()) {
            return bad(format!("l1_radius must be positive, got {}", self.l1_radius));
        }
        if !(self.split_frac > 0.0 && self.split_frac < 1.0) {
            return bad(format!("split_frac must lie in (0, 1), got {}", self.split_frac));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std must be nonnegative, got {}", self.noise_std));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MtlDataset {
    pub tasks: Vec<TaskData>,
    pub d: usize,
}

impl MtlDataset {
    pub fn new(tasks: Vec<TaskData>) -> Result<Self> {
        let d = tasks
            .first()
            .map(|t| t.a_train.ncols())
            .ok_or_else(|| Error::Data("dataset has no tasks".into()))?;
        for (i, t) in tasks.iter().enumerate() {
            if t.n_train() == 0 || t.n_val() == 0 {
                return Err(Error::Data(format!("task {i} needs at least one train and one validation row")));
            }
            if t.a_train.ncols() != d || t.a_val.ncols() != d {
                return Err(Error::Data(format!("task {i} has inconsistent feature dimension")));
            }
            if t.b_train.len() != t.n_train() || t.b_val.len() != t.n_val() {
                return Err(Error::Data(format!("task {i} has label/row count mismatch")));
            }
        }
        Ok(Self { tasks, d })
    }

    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }
}

/// Reads a numeric CSV with a header row. Returns the non-label columns in
/// file order and the label column. Every row containing a non-numeric cell
/// is reported by its 1-based line number (the header is line 1).
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .quoting(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Data(format!("cannot open {}: {e}", path.display())))?;
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?
        .iter()
        .map(str::to_string)
        .collect();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        return Err(Error::Data(format!("{} is empty", path.display())));
    }
    let label = headers.iter().position(|h| h == label_column).ok_or_else(|| {
        Error::Data(format!(
            "label column `{label_column}` not found in {}; available columns: {}",
            path.display(),
            headers.join(", ")
        ))
    })?;

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut bad_rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| Error::Data(format!("{} line {line}: {e}", path.display())))?;
        let parsed: Option<Vec<f64>> = record.iter().map(|c| c.parse::<f64>().ok()).collect();
        match parsed {
            Some(values) => rows.push(values),
            None => bad_rows.push(line),
        }
    }
    if !bad_rows.is_empty() {
        let lines: Vec<String> = bad_rows.iter().map(|r| r.to_string()).collect();
        return Err(Error::Data(format!(
            "{}: non-numeric cell in row(s) {}",
            path.display(),
            lines.join(", ")
        )));
    }
    if rows.is_empty() {
        return Err(Error::Data(format!("{} has a header but no data rows", path.display())));
    }
    let n = rows.len();
    let d = headers.len() - 1;
    let features = DMatrix::from_fn(n, d, |r, c| rows[r][if c < label { c } else { c + 1 }]);
    let labels = DVector::from_fn(n, |r, _| rows[r][label]);
    Ok((features, labels))
}

/// Sizes of `num_tasks` contiguous blocks of `n` rows; the remainder goes to
/// the last block.
pub fn task_sizes(n: usize, num_tasks: usize) -> Vec<usize> {
    let base = n / num_tasks;
    let mut sizes = vec![base; num_tasks];
    if let Some(last) = sizes.last_mut() {
        *last += n % num_tasks;
    }
    sizes
}

/// Number of training rows in a task of `n_rows`.
pub fn train_count(n_rows: usize, split_frac: f64) -> usize {
    (split_frac * n_rows as f64).ceil() as usize
}

fn check_row_budget(n: usize, cfg: &MtlConfig) -> Result<()> {
    cfg.validate()?;
    if n < 4 * cfg.num_tasks {
        return Err(Error::Data(format!(
            "need at least {} rows for {} tasks, got {n}",
            4 * cfg.num_tasks,
            cfg.num_tasks
        )));
    }
    for size in task_sizes(n, cfg.num_tasks) {
        let tr = train_count(size, cfg.split_frac);
        if tr == 0 || tr >= size {
            return Err(Error::Data(format!(
                "split_frac {} leaves an empty train or validation part for a task of {size} rows",
                cfg.split_frac
            )));
        }
    }
    Ok(())
}

fn split_task(a: DMatrix<f64>, b: DVector<f64>, split_frac: f64) -> TaskData {
    let n = a.nrows();
    let tr = train_count(n, split_frac);
    TaskData {
        a_train: a.rows(0, tr).into_owned(),
        b_train: b.rows(0, tr).into_owned(),
        a_val: a.rows(tr, n - tr).into_owned(),
        b_val: b.rows(tr, n - tr).into_owned(),
    }
}

/// Shuffles rows with the configured seed, splits them evenly into tasks,
/// and splits every task into a leading training part and a trailing
/// validation part.
pub fn partition_tasks(features: &DMatrix<f64>, labels: &DVector<f64>, cfg: &MtlConfig) -> Result<MtlDataset> {
    let n = features.nrows();
    if labels.len() != n {
        return Err(Error::Data(format!("{} labels for {n} feature rows", labels.len())));
    }
    check_row_budget(n, cfg)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));

    let mut start = 0;
    let mut tasks = Vec::with_capacity(cfg.num_tasks);
    for size in task_sizes(n, cfg.num_tasks) {
        let rows = &order[start..start + size];
        let a = features.select_rows(rows.iter());
        let b = DVector::from_iterator(size, rows.iter().map(|&r| labels[r]));
        tasks.push(split_task(a, b, cfg.split_frac));
        start += size;
    }
    MtlDataset::new(tasks)
}

/// Ground-truth parameters of the synthetic model
/// `b_i = A_i (lambda_i y_i + (1 - lambda_i) x) + noise`.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticModel {
    pub x: DVector<f64>,
    pub y: Vec<DVector<f64>>,
    pub lambda: Vec<f64>,
}

impl SyntheticModel {
    /// Standard normal `x` and `y_i`, uniform `lambda_i` on `[0, 1]`.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, d: usize, num_tasks: usize) -> Self {
        let x = gaussian_vector(rng, d);
        let mut y = Vec::with_capacity(num_tasks);
        let mut lambda = Vec::with_capacity(num_tasks);
        for _ in 0..num_tasks {
            y.push(gaussian_vector(rng, d));
            lambda.push(rng.random::<f64>());
        }
        Self { x, y, lambda }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// Draws the ground truth and a dataset from it. See [`gen_from_model`].
pub fn gen_synthetic(n: usize, d: usize, cfg: &MtlConfig) -> Result<(MtlDataset, SyntheticModel)> {
    if d == 0 {
        return Err(Error::InvalidConfig("feature dimension must be positive".into()));
    }
    check_row_budget(n, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = SyntheticModel::sample(&mut rng, d, cfg.num_tasks);
    let ds = sample_tasks(&mut rng, n, &model, cfg)?;
    Ok((ds, model))
}

/// Generates `n` rows from a fixed ground truth. Rows are assigned to tasks
/// with the same block sizes and train/validation split as
/// [`partition_tasks`]; since rows are i.i.d. no shuffle is needed.
pub fn gen_from_model(n: usize, model: &SyntheticModel, cfg: &MtlConfig) -> Result<MtlDataset> {
    if model.y.len() != cfg.num_tasks || model.lambda.len() != cfg.num_tasks {
        return Err(Error::InvalidConfig(format!(
            "model has {} tasks but config asks for {}",
            model.y.len(),
            cfg.num_tasks
        )));
    }
    check_row_budget(n, cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    sample_tasks(&mut rng, n, model, cfg)
}

fn sample_tasks<R: Rng + ?Sized>(rng: &mut R, n: usize, model: &SyntheticModel, cfg: &MtlConfig) -> Result<MtlDataset> {
    let d = model.dim();
    let mut tasks = Vec::with_capacity(cfg.num_tasks);
    for (i, size) in task_sizes(n, cfg.num_tasks).into_iter().enumerate() {
        let a = gaussian_matrix(rng, size, d);
        let lam = model.lambda[i];
        let coef = lam * &model.y[i] + (1.0 - lam) * &model.x;
        let noise = DVector::from_fn(size, |_, _| cfg.noise_std * rng.sample::<f64, _>(StandardNormal));
        let b = &a * coef + noise;
        tasks.push(split_task(a, b, cfg.split_frac));
    }
    MtlDataset::new(tasks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn csv_loads_features_and_label() {
        let f = write_tmp("f1,f2,y\n1,2,3\n4,5,6\n7,8,9\n");
        let (a, b) = load_csv(f.path(), "y").unwrap();
        assert_eq!(a.shape(), (3, 2));
        assert_eq!(b, DVector::from_vec(vec![3.0, 6.0, 9.0]));
        assert_eq!(a[(2, 1)], 8.0);
    }

    #[test]
    fn csv_label_in_the_middle_keeps_file_order() {
        let f = write_tmp("a,y,b\n1,2,3\n");
        let (a, b) = load_csv(f.path(), "y").unwrap();
        assert_eq!(a.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 3.0]);
        assert_eq!(b[0], 2.0);
    }

    #[test]
    fn csv_missing_label_names_columns() {
        let f = write_tmp("f1,f2,y\n1,2,3\n");
        let err = load_csv(f.path(), "target").unwrap_err().to_string();
        assert!(err.contains("target") && err.contains("f1, f2, y"), "{err}");
    }

    #[test]
    fn csv_non_numeric_cites_row() {
        let f = write_tmp("f1,f2,y\n1,2,abc\n");
        let err = load_csv(f.path(), "y").unwrap_err().to_string();
        assert!(err.contains("row(s) 2"), "{err}");
    }

    #[test]
    fn csv_empty_and_missing_files() {
        let f = write_tmp("");
        assert!(load_csv(f.path(), "y").is_err());
        let f = write_tmp("f1,y\n");
        assert!(load_csv(f.path(), "y").is_err());
        assert!(load_csv("/nonexistent/file.csv", "y").is_err());
    }

    #[test]
    fn partition_sizes() {
        let feats = DMatrix::from_fn(100, 3, |r, c| (r * 3 + c) as f64);
        let labels = DVector::from_fn(100, |r, _| r as f64);
        let cfg = MtlConfig::default();
        let ds = partition_tasks(&feats, &labels, &cfg).unwrap();
        assert_eq!(ds.num_tasks(), 5);
        for t in &ds.tasks {
            assert_eq!((t.n_train(), t.n_val()), (15, 5));
        }

        let cfg = MtlConfig {
            num_tasks: 1,
            split_frac: 0.5,
            ..MtlConfig::default()
        };
        let ds = partition_tasks(&feats.rows(0, 10).into_owned(), &labels.rows(0, 10).into_owned(), &cfg).unwrap();
        assert_eq!((ds.tasks[0].n_train(), ds.tasks[0].n_val()), (5, 5));
    }

    #[test]
    fn partition_keeps_rows_intact_and_is_seeded() {
        let feats = DMatrix::from_fn(40, 2, |r, c| (r * 2 + c) as f64);
        let labels = DVector::from_fn(40, |r, _| r as f64);
        let cfg = MtlConfig {
            num_tasks: 3,
            ..MtlConfig::default()
        };
        let a = partition_tasks(&feats, &labels, &cfg).unwrap();
        let b = partition_tasks(&feats, &labels, &cfg).unwrap();
        assert_eq!(a, b);
        // remainder row goes to the last task
        assert_eq!(a.tasks[2].n_train() + a.tasks[2].n_val(), 14);
        for t in &a.tasks {
            for r in 0..t.n_train() {
                let label = t.b_train[r];
                assert_eq!(t.a_train[(r, 0)], 2.0 * label);
            }
        }
        let c = partition_tasks(&feats, &labels, &MtlConfig { seed: 7, ..cfg }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn too_few_rows() {
        let feats = DMatrix::zeros(19, 2);
        let labels = DVector::zeros(19);
        assert!(partition_tasks(&feats, &labels, &MtlConfig::default()).is_err());
        assert!(gen_synthetic(19, 2, &MtlConfig::default()).is_err());
    }

    #[test]
    fn synthetic_is_deterministic_and_sized() {
        let cfg = MtlConfig {
            num_tasks: 2,
            ..MtlConfig::default()
        };
        let (a, model) = gen_synthetic(100, 5, &cfg).unwrap();
        let (b, _) = gen_synthetic(100, 5, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.d, 5);
        assert_eq!(model.lambda.len(), 2);
        assert!(model.lambda.iter().all(|l| (0.0..=1.0).contains(l)));
        for t in &a.tasks {
            assert_eq!((t.n_train(), t.n_val()), (38, 12));
        }
    }

    #[test]
    fn noiseless_labels_follow_the_model() {
        let cfg = MtlConfig {
            num_tasks: 2,
            noise_std: 0.0,
            ..MtlConfig::default()
        };
        let (ds, m) = gen_synthetic(40, 3, &cfg).unwrap();
        for (i, t) in ds.tasks.iter().enumerate() {
            let coef = m.lambda[i] * &m.y[i] + (1.0 - m.lambda[i]) * &m.x;
            assert!((&t.a_val * &coef - &t.b_val).amax() < 1e-12);
        }
    }
}
