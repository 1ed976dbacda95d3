//! The five subcommands. Each returns `Ok` on success or a [`CliError`]
//! carrying its exit code.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spb_core::benchmark::{gen_synthetic, MtlConfig};
use spb_core::check::DEFAULT_FD_STEP;
use spb_core::verify::{lower_solution_equivalence, set_oracle_report};
use spb_core::{check_gradients, check_hvp, CheckReport, DVector, SetSpec, Variant};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::plot::render_svg;
use crate::runner::{run_plan, Instance, Plan, RunOutcome};
use crate::trace::{running_average, TraceFile};

/// Global flags shared by every subcommand.
#[derive(Debug, Clone, Default)]
pub struct Options {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub quiet: bool,
}

impl Options {
    pub fn load_config(&self) -> Result<RunConfig> {
        let path = self
            .config
            .as_deref()
            .ok_or_else(|| CliError::Config("this command needs --config PATH".into()))?;
        let mut cfg = RunConfig::load(path)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }

    fn out_or(&self, cfg: &RunConfig, fallback: &str) -> PathBuf {
        self.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from(fallback))
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }
}

/// A seeded uniform point in `[-1, 1]^n`, projected onto `set` if given.
fn point(seed: u64, salt: u64, n: usize, set: Option<&SetSpec>) -> spb_core::Result<DVector<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let raw = DVector::from_fn(n, |_, _| rng.random_range(-1.0..=1.0));
    match set {
        Some(s) => s.project(&raw),
        None => Ok(raw),
    }
}

pub fn cmd_run(opts: &Options) -> Result<RunOutcome> {
    let cfg = opts.load_config()?;
    let out = opts.out_or(&cfg, &format!("trace_{}.csv", cfg.variant));
    let inst = Instance::build(&cfg)?;
    let plan = Plan::new(&cfg, cfg.variant, &inst)?;
    let outcome = run_plan(&cfg, &inst, &plan, Some(&out), opts.quiet)?;
    if let (Some(first), Some(last)) = (outcome.rows.first(), outcome.rows.last()) {
        opts.say(format!(
            "{} rows written to {}; gap_z {:e} at iter {} -> {:e} at iter {}",
            outcome.rows.len(),
            out.display(),
            first.gap_z,
            first.iter,
            last.gap_z,
            last.iter
        ));
    }
    if !outcome.stale_rows.is_empty() && !opts.quiet {
        eprintln!("warning: {} row(s) have stale gaps", outcome.stale_rows.len());
    }
    Ok(outcome)
}

/// Derivative checks on the configured problem plus the oracle
/// equivalence suites.
pub fn check_report(cfg: &RunConfig) -> Result<CheckReport> {
    let inst = Instance::build(cfg)?;
    let problem = inst.problem();
    let dims = problem.dims();
    let x = point(cfg.seed, 1, dims.n_x, Some(inst.set_x()))?;
    let theta = point(cfg.seed, 2, dims.m_theta, None)?;
    let y = point(cfg.seed, 3, dims.d_y, Some(inst.set_y()))?;
    let mut report = check_gradients(problem, &x, &theta, &y, DEFAULT_FD_STEP)?
        .merge(check_hvp(problem, &x, &theta, DEFAULT_FD_STEP)?)
        .merge(set_oracle_report(cfg.seed)?);
    if let Instance::Mtl {
        problem,
        set_x,
        dataset,
        ..
    } = &inst
    {
        let entry = lower_solution_equivalence(dataset, &cfg.mtl_config(), problem, set_x, cfg.seed, 20)?;
        report.entries.push(entry);
    }
    Ok(report)
}

pub fn cmd_check(opts: &Options) -> Result<CheckReport> {
    let cfg = opts.load_config()?;
    let report = check_report(&cfg)?;
    opts.say(report.to_string().trim_end());
    let failures = report.failures().count();
    if failures > 0 {
        return Err(CliError::CheckFailed(failures));
    }
    Ok(report)
}

fn join(v: impl IntoIterator<Item = f64>) -> String {
    v.into_iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(CliError::io(path))
}

/// Writes `task<i>_train.csv` and `task<i>_val.csv` for every task plus a
/// `ground_truth.txt` sidecar. Returns the paths written.
pub fn cmd_datagen(opts: &Options) -> Result<Vec<PathBuf>> {
    let cfg = opts.load_config()?;
    let dir = opts.out_or(&cfg, "data");
    let mcfg: MtlConfig = cfg.mtl_config();
    let (ds, model) = gen_synthetic(cfg.n, cfg.d, &mcfg)?;
    std::fs::create_dir_all(&dir).map_err(CliError::io(&dir))?;

    let mut columns: Vec<String> = (1..=ds.d).map(|j| format!("f{j}")).collect();
    columns.push(cfg.label_column.clone());
    let header = columns.join(",");
    let mut written = Vec::new();
    for (i, task) in ds.tasks.iter().enumerate() {
        for (part, a, b) in [("train", &task.a_train, &task.b_train), ("val", &task.a_val, &task.b_val)] {
            let mut s = String::new();
            writeln!(s, "{header}").unwrap();
            for r in 0..a.nrows() {
                writeln!(s, "{},{}", join(a.row(r).iter().copied()), b[r]).unwrap();
            }
            let path = dir.join(format!("task{}_{part}.csv", i + 1));
            write_file(&path, &s)?;
            written.push(path);
        }
    }

    let mut truth = String::new();
    writeln!(truth, "seed={}", cfg.seed).unwrap();
    writeln!(truth, "x={}", join(model.x.iter().copied())).unwrap();
    for (i, (y, lambda)) in model.y.iter().zip(&model.lambda).enumerate() {
        writeln!(truth, "lambda{}={lambda}", i + 1).unwrap();
        writeln!(truth, "y{}={}", i + 1, join(y.iter().copied())).unwrap();
    }
    let path = dir.join("ground_truth.txt");
    write_file(&path, &truth)?;
    written.push(path);
    opts.say(format!("wrote {} files to {}", written.len(), dir.display()));
    Ok(written)
}

pub fn cmd_plot(opts: &Options, traces: &[PathBuf]) -> Result<PathBuf> {
    if traces.is_empty() {
        return Err(CliError::Config("plot needs at least one trace file".into()));
    }
    let files = traces.iter().map(|p| TraceFile::read(p)).collect::<Result<Vec<_>>>()?;
    let out = opts.out.clone().unwrap_or_else(|| PathBuf::from("gap.svg"));
    write_file(&out, &render_svg(&files))?;
    opts.say(format!("wrote {}", out.display()));
    Ok(out)
}

/// First iteration whose running-average `gap_z` is strictly below each
/// threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct Crossing {
    pub variant: Variant,
    pub threshold: f64,
    pub iter: Option<usize>,
}

pub fn first_crossing(iters: &[usize], gaps: &[f64], threshold: f64) -> Option<usize> {
    running_average(gaps.iter().copied())
        .into_iter()
        .zip(iters)
        .find(|(avg, _)| *avg < threshold)
        .map(|(_, &k)| k)
}

#[derive(Debug)]
pub struct Comparison {
    pub traces: Vec<(Variant, PathBuf, RunOutcome)>,
    pub crossings: Vec<Crossing>,
}

/// Runs both variants on one problem instance concurrently and reports
/// threshold crossings in variant order.
pub fn cmd_compare(opts: &Options) -> Result<Comparison> {
    let cfg = opts.load_config()?;
    let dir = opts.out_or(&cfg, ".");
    let inst = Instance::build(&cfg)?;
    let plans = Variant::ALL.map(|v| Plan::new(&cfg, v, &inst));
    let plans = plans.into_iter().collect::<Result<Vec<_>>>()?;

    let results: Vec<(Variant, PathBuf, Result<RunOutcome>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = plans
            .iter()
            .map(|plan| {
                let path = dir.join(format!("trace_{}.csv", plan.variant));
                let (cfg, inst, quiet) = (&cfg, &inst, opts.quiet);
                scope.spawn(move || {
                    let r = run_plan(cfg, inst, plan, Some(&path), quiet);
                    (plan.variant, path, r)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("solver thread panicked")).collect()
    });

    let mut traces = Vec::new();
    for (variant, path, r) in results {
        traces.push((variant, path, r?));
    }
    let mut crossings = Vec::new();
    for (variant, path, outcome) in &traces {
        let iters: Vec<usize> = outcome.rows.iter().map(|r| r.iter).collect();
        let gaps: Vec<f64> = outcome.rows.iter().map(|r| r.gap_z).collect();
        opts.say(format!("{variant}: trace {}", path.display()));
        for &t in &cfg.thresholds {
            let iter = first_crossing(&iters, &gaps, t);
            match iter {
                Some(k) => opts.say(format!("  threshold {t}: reached at iter {k}")),
                None => opts.say(format!("  threshold {t}: not reached")),
            }
            crossings.push(Crossing {
                variant: *variant,
                threshold: t,
                iter,
            });
        }
    }
    Ok(Comparison { traces, crossings })
}
