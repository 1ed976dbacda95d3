//! Flat `key = value` run configurations.
//!
//! Blank lines and `#` comments are ignored. A trace file is also accepted:
//! its `# key=value` header carries the full resolved configuration, so a
//! run can be reproduced from the trace alone.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use spb_core::benchmark::{LipschitzEstimate, MtlConfig};
use spb_core::metrics::{DEFAULT_ADJOINT_TOL, DEFAULT_LOWER_TOL, DEFAULT_MAX_ITER};
use spb_core::schedule::EXPERIMENT_TAU;
use spb_core::{GapMode, Variant};

use crate::error::{CliError, Result};
use crate::trace::{fmt_f64, TRACE_VERSION_KEY};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProblemKind {
    ToyQuadratic,
    MtlSynthetic,
    MtlCsv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleSource {
    Experiment,
    Theory,
    Explicit,
}

/// Requested gap definition. `Auto` follows the variant's own oracle;
/// `LmoBoth` forces the Frank-Wolfe gap for every variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapChoice {
    Auto,
    Lmo,
    Proj,
    LmoBoth,
}

impl GapChoice {
    pub fn resolve(self, variant: Variant) -> GapMode {
        match (self, variant) {
            (GapChoice::Auto, Variant::Opf) | (GapChoice::Lmo | GapChoice::LmoBoth, _) => GapMode::Lmo,
            (GapChoice::Auto, Variant::Fp) | (GapChoice::Proj, _) => GapMode::Proj,
        }
    }
}

macro_rules! keyword_enum {
    ($ty:ident, $what:literal, $($name:literal => $variant:ident),+ $(,)?) => {
        impl $ty {
            pub fn as_str(&self) -> &'static str {
                match self {
                    $($ty::$variant => $name,)+
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $ty {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, String> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    other => Err(format!(
                        concat!("unknown ", $what, " `{}`; valid options: {}"),
                        other,
                        [$($name),+].join(", ")
                    )),
                }
            }
        }
    };
}

keyword_enum!(ProblemKind, "problem", "toy-quadratic" => ToyQuadratic, "mtl-synthetic" => MtlSynthetic, "mtl-csv" => MtlCsv);
keyword_enum!(ScheduleSource, "schedule", "experiment" => Experiment, "theory" => Theory, "explicit" => Explicit);
keyword_enum!(GapChoice, "gap mode", "auto" => Auto, "lmo" => Lmo, "proj" => Proj, "lmo-both" => LmoBoth);

/// Step sizes given directly in the config.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExplicitSteps {
    pub gamma: Option<f64>,
    pub sigma: Option<f64>,
    pub eta: Option<f64>,
    pub alpha: Option<f64>,
    pub mu: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub problem: ProblemKind,
    pub variant: Variant,
    pub schedule: ScheduleSource,
    pub nu: f64,
    /// Horizon `K`.
    pub iterations: usize,
    pub eval_every: usize,
    pub gap_mode: GapChoice,
    pub lower_tol: f64,
    pub adjoint_tol: f64,
    pub inner_max_iter: usize,
    pub seed: u64,
    /// FP projection step. `None` takes the schedule's value.
    pub tau: Option<f64>,
    pub steps: ExplicitSteps,
    /// Stop-reporting levels for `compare`.
    pub thresholds: Vec<f64>,
    pub toy_n_x: usize,
    pub toy_m_theta: usize,
    pub toy_d_y: usize,
    /// Synthetic rows and features.
    pub n: usize,
    pub d: usize,
    pub mtl: MtlConfig,
    pub csv_path: Option<PathBuf>,
    pub label_column: String,
    pub out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: ProblemKind::ToyQuadratic,
            variant: Variant::Opf,
            schedule: ScheduleSource::Experiment,
            nu: 1.0,
            iterations: 1000,
            eval_every: 100,
            gap_mode: GapChoice::Auto,
            lower_tol: DEFAULT_LOWER_TOL,
            adjoint_tol: DEFAULT_ADJOINT_TOL,
            inner_max_iter: DEFAULT_MAX_ITER,
            seed: 0,
            tau: None,
            steps: ExplicitSteps::default(),
            thresholds: vec![1e-2],
            toy_n_x: 4,
            toy_m_theta: 3,
            toy_d_y: 3,
            n: 1000,
            d: 20,
            mtl: MtlConfig::default(),
            csv_path: None,
            label_column: "label".into(),
            out: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    value.parse::<T>().map_err(|e| format!("invalid value `{value}` for `{key}`: {e}"))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<f64>, String> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn parse_lipschitz(value: &str) -> Result<LipschitzEstimate, String> {
    match value {
        "frobenius" => Ok(LipschitzEstimate::Frobenius),
        "spectral" => Ok(LipschitzEstimate::Spectral),
        other => Err(format!("unknown lipschitz estimate `{other}`; valid options: frobenius, spectral")),
    }
}

fn lipschitz_str(l: LipschitzEstimate) -> &'static str {
    match l {
        LipschitzEstimate::Frobenius => "frobenius",
        LipschitzEstimate::Spectral => "spectral",
    }
}

impl RunConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "problem" => self.problem = parse(key, value)?,
            "variant" => self.variant = value.parse().map_err(|e: spb_core::Error| e.to_string())?,
            "schedule" => self.schedule = parse(key, value)?,
            "nu" => self.nu = parse(key, value)?,
            "K" | "iterations" => self.iterations = parse(key, value)?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "gap_mode" => self.gap_mode = parse(key, value)?,
            "lower_tol" => self.lower_tol = parse(key, value)?,
            "adjoint_tol" => self.adjoint_tol = parse(key, value)?,
            "inner_max_iter" => self.inner_max_iter = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "tau" => self.tau = Some(parse(key, value)?),
            "gamma" => self.steps.gamma = Some(parse(key, value)?),
            "sigma" => self.steps.sigma = Some(parse(key, value)?),
            "eta" => self.steps.eta = Some(parse(key, value)?),
            "alpha" => self.steps.alpha = Some(parse(key, value)?),
            "mu" => self.steps.mu = Some(parse(key, value)?),
            "threshold" => self.thresholds = parse_list(key, value)?,
            "toy_n_x" => self.toy_n_x = parse(key, value)?,
            "toy_m_theta" => self.toy_m_theta = parse(key, value)?,
            "toy_d_y" => self.toy_d_y = parse(key, value)?,
            "n" => self.n = parse(key, value)?,
            "d" => self.d = parse(key, value)?,
            "num_tasks" => self.mtl.num_tasks = parse(key, value)?,
            "reg_rho" => self.mtl.reg_rho = parse(key, value)?,
            "l1_radius" => self.mtl.l1_radius = parse(key, value)?,
            "split_frac" => self.mtl.split_frac = parse(key, value)?,
            "noise_std" => self.mtl.noise_std = parse(key, value)?,
            "lipschitz" => self.mtl.lipschitz = parse_lipschitz(value)?,
            "csv_path" => self.csv_path = Some(PathBuf::from(value)),
            "label_column" => self.label_column = value.to_string(),
            "out" => self.out = Some(PathBuf::from(value)),
            _ => return Err(format!("unknown key `{key}`")),
        }
        Ok(())
    }

    /// Parses config text, or the header of a trace file.
    pub fn from_text(text: &str) -> Result<Self> {
        let is_trace = text
            .lines()
            .next()
            .is_some_and(|l| l.strip_prefix('#').is_some_and(|r| r.trim().starts_with(TRACE_VERSION_KEY)));
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = if is_trace {
                match raw.strip_prefix('#') {
                    Some(rest) => rest.trim(),
                    None => break,
                }
            } else {
                raw.split('#').next().unwrap_or("").trim()
            };
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {line_no}: expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            // Trace headers also carry derived quantities under dotted keys.
            if is_trace && (key.contains('.') || key == TRACE_VERSION_KEY) {
                continue;
            }
            cfg.set(key, value)
                .map_err(|e| CliError::Config(format!("line {line_no}: {e}")))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
        Self::from_text(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Checks cross-key constraints that single values cannot express.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.iterations == 0 {
            return bad("K must be at least 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        let s = &self.steps;
        let given = [s.gamma, s.sigma, s.eta, s.alpha, s.mu];
        match self.schedule {
            ScheduleSource::Explicit => {
                let names = ["gamma", "sigma", "eta", "alpha", "mu"];
                let missing: Vec<&str> = names.iter().zip(given).filter(|(_, v)| v.is_none()).map(|(n, _)| *n).collect();
                if !missing.is_empty() {
                    return bad(format!("schedule=explicit requires {}", missing.join(", ")));
                }
                if self.variant == Variant::Fp && self.tau.is_none() {
                    return bad("schedule=explicit with variant=fp requires tau".into());
                }
            }
            other => {
                if given.iter().any(Option::is_some) {
                    return bad(format!("gamma, sigma, eta, alpha, mu are only read with schedule=explicit (schedule={other})"));
                }
            }
        }
        if self.problem == ProblemKind::MtlCsv && self.csv_path.is_none() {
            return bad("problem=mtl-csv requires csv_path".into());
        }
        for t in &self.thresholds {
            if !(t.is_finite() && *t >= 0.0) {
                return bad(format!("thresholds must be finite and nonnegative, got {t}"));
            }
        }
        if !(self.lower_tol > 0.0 && self.adjoint_tol > 0.0) {
            return bad("inner tolerances must be positive".into());
        }
        Ok(())
    }

    /// The MTL settings with the run seed applied.
    pub fn mtl_config(&self) -> MtlConfig {
        MtlConfig {
            seed: self.seed,
            ..self.mtl.clone()
        }
    }

    /// Every key with its resolved value, in a fixed order. Parsing the
    /// output reproduces `self`.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![
            ("problem", self.problem.to_string()),
            ("variant", self.variant.to_string()),
            ("schedule", self.schedule.to_string()),
            ("nu", fmt_f64(self.nu)),
            ("K", self.iterations.to_string()),
            ("eval_every", self.eval_every.to_string()),
            ("gap_mode", self.gap_mode.to_string()),
            ("lower_tol", fmt_f64(self.lower_tol)),
            ("adjoint_tol", fmt_f64(self.adjoint_tol)),
            ("inner_max_iter", self.inner_max_iter.to_string()),
            ("seed", self.seed.to_string()),
        ];
        if let Some(tau) = self.tau {
            out.push(("tau", fmt_f64(tau)));
        }
        let s = &self.steps;
        for (k, v) in [("gamma", s.gamma), ("sigma", s.sigma), ("eta", s.eta), ("alpha", s.alpha), ("mu", s.mu)] {
            if let Some(v) = v {
                out.push((k, fmt_f64(v)));
            }
        }
        let thresholds: Vec<String> = self.thresholds.iter().copied().map(fmt_f64).collect();
        out.push(("threshold", thresholds.join(",")));
        match self.problem {
            ProblemKind::ToyQuadratic => {
                out.push(("toy_n_x", self.toy_n_x.to_string()));
                out.push(("toy_m_theta", self.toy_m_theta.to_string()));
                out.push(("toy_d_y", self.toy_d_y.to_string()));
            }
            ProblemKind::MtlSynthetic | ProblemKind::MtlCsv => {
                if self.problem == ProblemKind::MtlSynthetic {
                    out.push(("n", self.n.to_string()));
                    out.push(("d", self.d.to_string()));
                    out.push(("noise_std", fmt_f64(self.mtl.noise_std)));
                } else {
                    let path = self.csv_path.as_deref().unwrap_or(Path::new(""));
                    out.push(("csv_path", path.display().to_string()));
                    out.push(("label_column", self.label_column.clone()));
                }
                out.push(("num_tasks", self.mtl.num_tasks.to_string()));
                out.push(("reg_rho", fmt_f64(self.mtl.reg_rho)));
                out.push(("l1_radius", fmt_f64(self.mtl.l1_radius)));
                out.push(("split_frac", fmt_f64(self.mtl.split_frac)));
                out.push(("lipschitz", lipschitz_str(self.mtl.lipschitz).to_string()));
            }
        }
        out
    }

    pub fn to_text(&self) -> String {
        self.to_pairs().into_iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// The FP projection step the schedule resolves to when none is set.
    pub fn default_tau() -> f64 {
        EXPERIMENT_TAU
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_aliases() {
        let cfg = RunConfig::from_text(
            "# a run\nproblem = mtl-synthetic\nvariant=fp  # projected\nK = 500\nthreshold = 0.1, 0.01\n\nnum_tasks=3\n",
        )
        .unwrap();
        assert_eq!(cfg.problem, ProblemKind::MtlSynthetic);
        assert_eq!(cfg.variant, Variant::Fp);
        assert_eq!(cfg.iterations, 500);
        assert_eq!(cfg.thresholds, vec![0.1, 0.01]);
        assert_eq!(cfg.mtl.num_tasks, 3);
    }

    #[test]
    fn invalid_variant_names_options() {
        let err = RunConfig::from_text("variant = sgd\n").unwrap_err().to_string();
        assert!(err.contains("opf, fp"), "{err}");
        assert!(err.contains("line 1"), "{err}");
    }

    #[test]
    fn unknown_keys_and_malformed_lines_are_errors() {
        assert!(RunConfig::from_text("colour = red\n").is_err());
        assert!(RunConfig::from_text("K\n").is_err());
        assert!(RunConfig::from_text("K = many\n").is_err());
        assert!(RunConfig::from_text("gap_mode = fw\n").is_err());
    }

    #[test]
    fn explicit_schedule_needs_every_step() {
        let err = RunConfig::from_text("schedule = explicit\ngamma = 0.1\nsigma = 1\n").unwrap_err().to_string();
        assert!(err.contains("eta, alpha, mu"), "{err}");
        let ok = "schedule = explicit\ngamma = 0.1\nsigma = 1\neta = 0.4\nalpha = 0.4\nmu = 1\n";
        assert!(RunConfig::from_text(ok).is_ok());
        assert!(RunConfig::from_text(&format!("{ok}variant = fp\n")).is_err());
        assert!(RunConfig::from_text(&format!("{ok}variant = fp\ntau = 0.5\n")).is_ok());
        assert!(RunConfig::from_text("gamma = 0.1\n").is_err());
    }

    #[test]
    fn text_round_trips() {
        for text in [
            "problem = toy-quadratic\nseed = 4\ntau = 0.25\n",
            "problem = mtl-synthetic\nvariant = fp\nlipschitz = spectral\nnoise_std = 0\n",
            "problem = mtl-csv\ncsv_path = data/x.csv\nlabel_column = y\nschedule = theory\n",
            "schedule = explicit\ngamma = 0.1\nsigma = 1\neta = 0.4\nalpha = 0.4\nmu = 1e-3\n",
        ] {
            let cfg = RunConfig::from_text(text).unwrap();
            assert_eq!(RunConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        }
    }

    #[test]
    fn gap_choice_resolution() {
        assert_eq!(GapChoice::Auto.resolve(Variant::Opf), GapMode::Lmo);
        assert_eq!(GapChoice::Auto.resolve(Variant::Fp), GapMode::Proj);
        assert_eq!(GapChoice::LmoBoth.resolve(Variant::Fp), GapMode::Lmo);
        assert_eq!(GapChoice::Proj.resolve(Variant::Opf), GapMode::Proj);
    }
}
