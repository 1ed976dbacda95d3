//! Compact convex feasible sets with a linear minimization oracle and an
//! exact Euclidean projection.

use std::ops::Range;

use nalgebra::DVector;

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum SetShape {
    /// `{ p : ||p||_1 <= radius }` in any dimension.
    L1Ball { radius: f64 },
    /// The probability simplex in `dim` coordinates.
    Simplex { dim: usize },
    /// `{ p : lo <= p <= hi }` componentwise.
    Box { lo: DVector<f64>, hi: DVector<f64> },
    /// `{ p : ||p - center||_2 <= radius }`.
    Ball2 { center: DVector<f64>, radius: f64 },
    /// Cartesian product; each factor acts on a contiguous coordinate range.
    Product(Vec<(SetSpec, Range<usize>)>),
}

/// A feasible set together with its Euclidean diameter, computed once at
/// construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SetSpec {
    shape: SetShape,
    diameter: f64,
}

impl SetSpec {
    pub fn l1_ball(radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidSet(format!("L1 ball radius must be positive, got {radius}")));
        }
        Ok(Self {
            shape: SetShape::L1Ball { radius },
            diameter: 2.0 * radius,
        })
    }

    pub fn simplex(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidSet("simplex dimension must be positive".into()));
        }
        // A single point when dim = 1.
        let diameter = if dim == 1 { 0.0 } else { std::f64::consts::SQRT_2 };
        Ok(Self {
            shape: SetShape::Simplex { dim },
            diameter,
        })
    }

    pub fn boxed(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self> {
        check_dim("box bounds", lo.len(), hi.len())?;
        if lo.is_empty() {
            return Err(Error::InvalidSet("box must have at least one coordinate".into()));
        }
        if lo.iter().zip(hi.iter()).any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::InvalidSet("box requires finite lo <= hi componentwise".into()));
        }
        let diameter = (&hi - &lo).norm();
        Ok(Self {
            shape: SetShape::Box { lo, hi },
            diameter,
        })
    }

    /// The box `[lo, hi]^dim`.
    pub fn uniform_box(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::boxed(DVector::from_element(dim, lo), DVector::from_element(dim, hi))
    }

    pub fn ball2(center: DVector<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidSet(format!("ball radius must be positive, got {radius}")));
        }
        if center.is_empty() {
            return Err(Error::InvalidSet("ball center must have at least one coordinate".into()));
        }
        Ok(Self {
            shape: SetShape::Ball2 { center, radius },
            diameter: 2.0 * radius,
        })
    }

    /// Product of factors over ranges that must tile `[0, total)` in order.
    pub fn product(factors: Vec<(SetSpec, Range<usize>)>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidSet("product needs at least one factor".into()));
        }
        let mut next = 0;
        for (set, range) in &factors {
            if range.start != next || range.end <= range.start {
                return Err(Error::InvalidSet(format!(
                    "product ranges must partition [0, n) contiguously; factor at {range:?} expected to start at {next}"
                )));
            }
            if let Some(d) = set.ambient_dim() {
                check_dim("product factor", d, range.len())?;
            }
            next = range.end;
        }
        let diameter = factors
            .iter()
            .map(|(s, _)| s.diameter * s.diameter)
            .sum::<f64>()
            .sqrt();
        Ok(Self {
            shape: SetShape::Product(factors),
            diameter,
        })
    }

    pub fn shape(&self) -> &SetShape {
        &self.shape
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    /// Ambient dimension, or `None` for a bare L1 ball which accepts any.
    pub fn ambient_dim(&self) -> Option<usize> {
        match &self.shape {
            SetShape::L1Ball { .. } => None,
            SetShape::Simplex { dim } => Some(*dim),
            SetShape::Box { lo, .. } => Some(lo.len()),
            SetShape::Ball2 { center, .. } => Some(center.len()),
            SetShape::Product(f) => f.last().map(|(_, r)| r.end),
        }
    }

    fn check_input(&self, what: &str, v: &DVector<f64>) -> Result<()> {
        match self.ambient_dim() {
            Some(d) => check_dim(what, d, v.len()),
            None if v.is_empty() => Err(Error::Dimension {
                context: what.to_string(),
                expected: 1,
                got: 0,
            }),
            None => Ok(()),
        }
    }

    /// A minimizer of `<c, s>` over the set. Ties go to the lowest index.
    pub fn lmo(&self, c: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_input("lmo cost", c)?;
        Ok(self.lmo_unchecked(c))
    }

    fn lmo_unchecked(&self, c: &DVector<f64>) -> DVector<f64> {
        match &self.shape {
            SetShape::L1Ball { radius } => {
                let mut best = 0;
                for j in 1..c.len() {
                    if c[j].abs() > c[best].abs() {
                        best = j;
                    }
                }
                let mut s = DVector::zeros(c.len());
                // sign(0) is taken as +1 so the result stays a vertex.
                s[best] = if c[best] > 0.0 { -radius } else if c[best] < 0.0 { *radius } else { -radius };
                s
            }
            SetShape::Simplex { dim } => {
                let mut best = 0;
                for j in 1..*dim {
                    if c[j] < c[best] {
                        best = j;
                    }
                }
                let mut s = DVector::zeros(*dim);
                s[best] = 1.0;
                s
            }
            SetShape::Box { lo, hi } => DVector::from_fn(c.len(), |j, _| if c[j] < 0.0 { hi[j] } else { lo[j] }),
            SetShape::Ball2 { center, radius } => {
                let n = c.norm();
                if n == 0.0 {
                    center.clone()
                } else {
                    center - c * (*radius / n)
                }
            }
            SetShape::Product(factors) => {
                let mut s = DVector::zeros(c.len());
                for (set, r) in factors {
                    let part = set.lmo_unchecked(&c.rows(r.start, r.len()).into_owned());
                    s.rows_mut(r.start, r.len()).copy_from(&part);
                }
                s
            }
        }
    }

    /// Euclidean projection onto the set. Points that are already feasible
    /// (up to rounding in the membership test) are returned unchanged, which
    /// makes the projection bitwise idempotent.
    pub fn project(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_input("projection point", p)?;
        Ok(self.project_unchecked(p))
    }

    fn project_unchecked(&self, p: &DVector<f64>) -> DVector<f64> {
        match &self.shape {
            SetShape::L1Ball { radius } => {
                let l1 = p.lp_norm(1);
                if l1 <= radius * (1.0 + rounding_slack(p.len())) {
                    return p.clone();
                }
                let magnitudes = p.map(f64::abs);
                let shrunk = project_scaled_simplex(&magnitudes, *radius);
                DVector::from_fn(p.len(), |j, _| shrunk[j].copysign(p[j]))
            }
            SetShape::Simplex { .. } => {
                if in_simplex(p) {
                    p.clone()
                } else {
                    project_scaled_simplex(p, 1.0)
                }
            }
            SetShape::Box { lo, hi } => DVector::from_fn(p.len(), |j, _| p[j].clamp(lo[j], hi[j])),
            SetShape::Ball2 { center, radius } => {
                let offset = p - center;
                let n = offset.norm();
                if n <= radius * (1.0 + rounding_slack(p.len())) {
                    p.clone()
                } else {
                    center + offset * (*radius / n)
                }
            }
            SetShape::Product(factors) => {
                let mut s = DVector::zeros(p.len());
                for (set, r) in factors {
                    let part = set.project_unchecked(&p.rows(r.start, r.len()).into_owned());
                    s.rows_mut(r.start, r.len()).copy_from(&part);
                }
                s
            }
        }
    }

    /// True iff `p` lies within Euclidean distance `tol` of the set.
    pub fn contains(&self, p: &DVector<f64>, tol: f64) -> Result<bool> {
        if !(tol >= 0.0) {
            return Err(Error::InvalidConfig(format!("membership tolerance must be >= 0, got {tol}")));
        }
        self.check_input("membership point", p)?;
        if p.iter().any(|v| !v.is_finite()) {
            return Ok(false);
        }
        Ok((p - self.project_unchecked(p)).norm() <= tol)
    }
}

fn rounding_slack(n: usize) -> f64 {
    4.0 * n as f64 * f64::EPSILON
}

fn in_simplex(p: &DVector<f64>) -> bool {
    p.iter().all(|&v| v >= 0.0) && (p.sum() - 1.0).abs() <= rounding_slack(p.len())
}

/// Projection onto `{ s >= 0 : sum(s) = z }` by sorting and thresholding.
fn project_scaled_simplex(v: &DVector<f64>, z: f64) -> DVector<f64> {
    let mut sorted: Vec<f64> = v.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut threshold = 0.0;
    for (j, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - z) / (j + 1) as f64;
        if u - t > 0.0 {
            threshold = t;
        }
    }
    v.map(|u| (u - threshold).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn lmo_examples() {
        let ball = SetSpec::l1_ball(2.0).unwrap();
        assert_eq!(ball.lmo(&dvector![1.0, -3.0]).unwrap(), dvector![0.0, 2.0]);

        let simplex = SetSpec::simplex(3).unwrap();
        assert_eq!(simplex.lmo(&dvector![5.0, -1.0, 0.0]).unwrap(), dvector![0.0, 1.0, 0.0]);

        let unit = SetSpec::uniform_box(2, 0.0, 1.0).unwrap();
        assert_eq!(unit.lmo(&dvector![-1.0, 2.0]).unwrap(), dvector![1.0, 0.0]);

        let product = SetSpec::product(vec![
            (SetSpec::l1_ball(1.0).unwrap(), 0..2),
            (SetSpec::uniform_box(1, 0.0, 1.0).unwrap(), 2..3),
        ])
        .unwrap();
        assert_eq!(product.lmo(&dvector![0.5, -2.0, 1.0]).unwrap(), dvector![0.0, 1.0, 0.0]);
    }

    #[test]
    fn lmo_ties_take_lowest_index() {
        let ball = SetSpec::l1_ball(1.0).unwrap();
        assert_eq!(ball.lmo(&dvector![2.0, -2.0]).unwrap(), dvector![-1.0, 0.0]);
        let simplex = SetSpec::simplex(3).unwrap();
        assert_eq!(simplex.lmo(&dvector![1.0, 0.0, 0.0]).unwrap(), dvector![0.0, 1.0, 0.0]);
    }

    #[test]
    fn ball2_lmo_at_zero_cost_is_center() {
        let ball = SetSpec::ball2(dvector![1.0, 2.0], 3.0).unwrap();
        assert_eq!(ball.lmo(&dvector![0.0, 0.0]).unwrap(), dvector![1.0, 2.0]);
        assert_eq!(ball.lmo(&dvector![0.0, 1.0]).unwrap(), dvector![1.0, -1.0]);
    }

    #[test]
    fn projection_examples() {
        let simplex = SetSpec::simplex(3).unwrap();
        let p = simplex.project(&dvector![0.5, 0.5, 0.5]).unwrap();
        for v in p.iter() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(simplex.project(&dvector![1.2, 0.0, 0.0]).unwrap(), dvector![1.0, 0.0, 0.0]);

        let ball = SetSpec::l1_ball(1.0).unwrap();
        assert_eq!(ball.project(&dvector![0.3, -0.2]).unwrap(), dvector![0.3, -0.2]);

        let unit = SetSpec::uniform_box(3, 0.0, 1.0).unwrap();
        assert_eq!(unit.project(&dvector![-0.5, 2.0, 0.7]).unwrap(), dvector![0.0, 1.0, 0.7]);
    }

    #[test]
    fn l1_projection_restores_signs() {
        let ball = SetSpec::l1_ball(1.0).unwrap();
        let p = ball.project(&dvector![2.0, -1.0]).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] == 0.0);
        let p = ball.project(&dvector![-1.0, 1.0, 0.0]).unwrap();
        assert!((p[0] + 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn containment_examples() {
        let s2 = SetSpec::simplex(2).unwrap();
        assert!(s2.contains(&dvector![0.5, 0.5], 0.0).unwrap());
        let ball = SetSpec::l1_ball(1.0).unwrap();
        assert!(!ball.contains(&dvector![0.6, 0.6], 0.0).unwrap());
        assert!(ball.contains(&dvector![0.6, 0.6], 0.2).unwrap());
        // distance is 0.2 / sqrt(2)
        assert!(!ball.contains(&dvector![0.6, 0.6], 0.14).unwrap());
        assert!(ball.contains(&dvector![0.6, 0.6], 0.1415).unwrap());
        assert!(ball.contains(&dvector![0.6, 0.6], -1.0).is_err());
    }

    #[test]
    fn diameters() {
        assert_eq!(SetSpec::l1_ball(1.5).unwrap().diameter(), 3.0);
        assert_eq!(SetSpec::simplex(4).unwrap().diameter(), 2f64.sqrt());
        assert_eq!(SetSpec::boxed(dvector![0.0, 0.0], dvector![3.0, 4.0]).unwrap().diameter(), 5.0);
        assert_eq!(SetSpec::ball2(dvector![0.0], 2.0).unwrap().diameter(), 4.0);
        let product = SetSpec::product(vec![
            (SetSpec::l1_ball(2.0).unwrap(), 0..2),
            (SetSpec::uniform_box(1, 0.0, 3.0).unwrap(), 2..3),
        ])
        .unwrap();
        assert_eq!(product.diameter(), 5.0);
    }

    #[test]
    fn construction_errors() {
        assert!(SetSpec::l1_ball(0.0).is_err());
        assert!(SetSpec::simplex(0).is_err());
        assert!(SetSpec::boxed(dvector![1.0], dvector![0.0]).is_err());
        assert!(SetSpec::ball2(dvector![0.0], -1.0).is_err());
        let gap = SetSpec::product(vec![
            (SetSpec::l1_ball(1.0).unwrap(), 0..2),
            (SetSpec::simplex(2).unwrap(), 3..5),
        ]);
        assert!(gap.is_err());
        let wrong_len = SetSpec::product(vec![(SetSpec::simplex(3).unwrap(), 0..2)]);
        assert!(wrong_len.is_err());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let s = SetSpec::simplex(3).unwrap();
        assert!(matches!(s.lmo(&dvector![1.0, 2.0]), Err(Error::Dimension { .. })));
        assert!(matches!(s.project(&dvector![1.0]), Err(Error::Dimension { .. })));
        assert!(matches!(s.contains(&dvector![1.0], 0.0), Err(Error::Dimension { .. })));
    }
}
