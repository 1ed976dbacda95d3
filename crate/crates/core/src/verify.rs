//! Brute-force reference oracles for the feasible sets. Slow, exhaustive,
//! and deliberately independent of the sort-and-threshold code in `sets`.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::benchmark::{exact_lower_solution, MtlConfig, MtlDataset, MtlProblem};
use crate::check::{CheckEntry, CheckReport};
use crate::error::Result;
use crate::metrics::solve_lower;
use crate::sets::SetSpec;

/// All `2n` signed scaled basis vectors of the L1 ball.
pub fn l1_vertices(n: usize, radius: f64) -> Vec<DVector<f64>> {
    let mut out = Vec::with_capacity(2 * n);
    for i in 0..n {
        for sign in [1.0, -1.0] {
            let mut v = DVector::zeros(n);
            v[i] = sign * radius;
            out.push(v);
        }
    }
    out
}

pub fn simplex_vertices(n: usize) -> Vec<DVector<f64>> {
    (0..n)
        .map(|i| {
            let mut v = DVector::zeros(n);
            v[i] = 1.0;
            v
        })
        .collect()
}

/// All `2^n` corners. Only sensible for small `n`.
pub fn box_vertices(lo: &DVector<f64>, hi: &DVector<f64>) -> Vec<DVector<f64>> {
    let n = lo.len();
    (0..1usize << n)
        .map(|mask| DVector::from_fn(n, |i, _| if mask >> i & 1 == 1 { hi[i] } else { lo[i] }))
        .collect()
}

/// Minimum of `<c, v>` over an explicit vertex list.
pub fn min_over_vertices(c: &DVector<f64>, vertices: &[DVector<f64>]) -> f64 {
    vertices.iter().map(|v| c.dot(v)).fold(f64::INFINITY, f64::min)
}

/// Euclidean projection onto the probability simplex by enumerating every
/// support set and keeping the closest feasible candidate. Exponential in `n`.
pub fn project_simplex_brute(p: &DVector<f64>) -> DVector<f64> {
    let n = p.len();
    assert!(n <= 16, "brute-force projection is exponential");
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 1..1usize << n {
        let support: Vec<usize> = (0..n).filter(|i| mask >> i & 1 == 1).collect();
        let shift = (support.iter().map(|&i| p[i]).sum::<f64>() - 1.0) / support.len() as f64;
        let mut cand = DVector::zeros(n);
        let mut feasible = true;
        for &i in &support {
            let v = p[i] - shift;
            if v < 0.0 {
                feasible = false;
                break;
            }
            cand[i] = v;
        }
        if !feasible {
            continue;
        }
        let dist = (&cand - p).norm_squared();
        if best.as_ref().is_none_or(|(d, _)| dist < *d) {
            best = Some((dist, cand));
        }
    }
    best.expect("singleton supports are always feasible").1
}

/// Projection onto the L1 ball of the given radius via the brute-force
/// simplex projection of `|p| / radius`.
pub fn project_l1_brute(p: &DVector<f64>, radius: f64) -> DVector<f64> {
    if p.lp_norm(1) <= radius {
        return p.clone();
    }
    let scaled = p.map(|v| v.abs() / radius);
    let w = project_simplex_brute(&scaled);
    DVector::from_fn(p.len(), |i, _| p[i].signum() * w[i] * radius)
}

/// LMO on the L1 ball, simplex and box against vertex enumeration, over
/// `trials` seeded costs in dimensions 1 to 8. The error is the number of
/// mismatches, which must be zero.
pub fn lmo_equivalence(seed: u64, trials: usize) -> Result<CheckEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mismatches = 0usize;
    for trial in 0..trials {
        let n = 1 + trial % 8;
        let c = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
        let lo = DVector::from_fn(n, |_, _| rng.random_range(-2.0..0.0));
        let hi = DVector::from_fn(n, |i, _| lo[i] + rng.random_range(0.0..2.0));
        let radius = rng.random_range(0.5..3.0);
        let cases = [
            (SetSpec::l1_ball(radius)?, l1_vertices(n, radius)),
            (SetSpec::simplex(n)?, simplex_vertices(n)),
            (SetSpec::boxed(lo.clone(), hi.clone())?, box_vertices(&lo, &hi)),
        ];
        for (set, vertices) in cases {
            let s = set.lmo(&c)?;
            if !vertices.contains(&s) || c.dot(&s) != min_over_vertices(&c, &vertices) {
                mismatches += 1;
            }
        }
    }
    Ok(CheckEntry::new("lmo_vs_vertices", mismatches as f64, 0.0))
}

/// Sort-and-threshold simplex projection against support enumeration in
/// dimensions 1 to 6; the error is the largest coordinate difference.
pub fn simplex_projection_equivalence(seed: u64, trials: usize) -> Result<CheckEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for trial in 0..trials {
        let n = 1 + trial % 6;
        let p = DVector::from_fn(n, |_, _| rng.random_range(-2.0..2.0));
        let fast = SetSpec::simplex(n)?.project(&p)?;
        worst = worst.max((fast - project_simplex_brute(&p)).amax());
    }
    Ok(CheckEntry::new("simplex_projection_vs_brute", worst, 1e-10))
}

/// The per-task Cholesky lower-level solution against gradient descent at
/// `points` seeded feasible points; the error is the largest coordinate
/// difference.
pub fn lower_solution_equivalence(
    ds: &MtlDataset,
    cfg: &MtlConfig,
    problem: &MtlProblem,
    set_x: &SetSpec,
    seed: u64,
    points: usize,
) -> Result<CheckEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_x = ds.d + ds.num_tasks();
    let mut worst = 0.0f64;
    for _ in 0..points {
        let raw = DVector::from_fn(n_x, |_, _| rng.random_range(-3.0..3.0));
        let xl = set_x.project(&raw)?;
        let (x, lambda) = problem.split_x(&xl);
        let exact = exact_lower_solution(ds, &x.into_owned(), &lambda.into_owned(), cfg.reg_rho)?;
        let iterative = solve_lower(problem, &xl, None, 1e-10, 10_000_000)?.solution;
        worst = worst.max((exact - iterative).amax());
    }
    Ok(CheckEntry::new("exact_lower_vs_solve_lower", worst, 1e-8))
}

/// Both set suites in one report.
pub fn set_oracle_report(seed: u64) -> Result<CheckReport> {
    Ok(CheckReport {
        entries: vec![lmo_equivalence(seed, 1000)?, simplex_projection_equivalence(seed ^ 1, 1000)?],
    })
}
