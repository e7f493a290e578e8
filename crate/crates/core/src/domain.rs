//! Domain descriptors: boxes, orthants and punctured sets, tested per point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Domain {
    /// All of ℝᵈ.
    #[default]
    All,
    /// Closed box `lo ≤ x ≤ hi` (componentwise, infinite bounds allowed).
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// Open orthant: `signs[i] = 1` requires `x_i > 0`, `-1` requires
    /// `x_i < 0`, `0` leaves the axis free.
    Orthant { signs: Vec<i8> },
    /// Points whose `axis` coordinate is nonzero.
    NonzeroCoord { axis: usize },
    /// ℝᵈ without the origin.
    Punctured,
    /// Intersection of several descriptors.
    All_(Vec<Domain>),
}

impl Domain {
    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        Domain::Box { lo, hi }
    }

    pub fn positive_quadrant(dim: usize) -> Self {
        Domain::Orthant { signs: vec![1; dim] }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        if x.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match self {
            Domain::All => true,
            Domain::Box { lo, hi } => x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(v, (l, h))| *v >= *l && *v <= *h),
            Domain::Orthant { signs } => x.iter().zip(signs).all(|(v, s)| match s {
                1 => *v > 0.0,
                -1 => *v < 0.0,
                _ => true,
            }),
            Domain::NonzeroCoord { axis } => x.get(*axis).is_some_and(|v| *v != 0.0),
            Domain::Punctured => x.iter().any(|v| *v != 0.0),
            Domain::All_(parts) => parts.iter().all(|d| d.contains(x)),
        }
    }

    pub fn check(&self, x: &[f64]) -> Result<()> {
        if self.contains(x) {
            Ok(())
        } else {
            Err(Error::OutsideDomain(format!("{x:?} not in {self:?}")))
        }
    }

    /// Whether the domain is a subset of `other`, decided only for the
    /// descriptor pairs where that is cheap; otherwise `None`.
    pub fn box_within(&self, other: &Domain) -> Option<bool> {
        let Domain::Box { lo, hi } = self else {
            return None;
        };
        match other {
            Domain::All => Some(true),
            Domain::Box { lo: l2, hi: h2 } => Some(
                lo.iter().zip(l2).all(|(a, b)| a >= b) && hi.iter().zip(h2).all(|(a, b)| a <= b),
            ),
            Domain::Orthant { signs } => Some(signs.iter().enumerate().all(|(i, s)| match s {
                1 => lo[i] > 0.0,
                -1 => hi[i] < 0.0,
                _ => true,
            })),
            Domain::NonzeroCoord { axis } => Some(lo[*axis] > 0.0 || hi[*axis] < 0.0),
            Domain::Punctured => {
                Some(lo.iter().zip(hi).any(|(l, h)| *l > 0.0 || *h < 0.0))
            }
            Domain::All_(parts) => {
                let mut all = true;
                for p in parts {
                    all &= self.box_within(p)?;
                }
                Some(all)
            }
        }
    }
}

/// Axis-aligned sampling box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SampleBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::Dimension { expected: lo.len(), got: hi.len() });
        }
        if lo.iter().zip(&hi).any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad box {lo:?}..{hi:?}")));
        }
        Ok(SampleBox { lo, hi })
    }

    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        SampleBox { lo: vec![lo; dim], hi: vec![hi; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn as_domain(&self) -> Domain {
        Domain::Box { lo: self.lo.clone(), hi: self.hi.clone() }
    }

    /// Tensor grid with `n` points per axis, first axis varying slowest.
    pub fn grid(&self, n: usize) -> Vec<Vec<f64>> {
        let d = self.dim();
        let axis = |i: usize, k: usize| {
            if n == 1 {
                0.5 * (self.lo[i] + self.hi[i])
            } else {
                self.lo[i] + (self.hi[i] - self.lo[i]) * k as f64 / (n - 1) as f64
            }
        };
        let total = n.pow(d as u32);
        (0..total)
            .map(|mut idx| {
                let mut p = vec![0.0; d];
                for i in (0..d).rev() {
                    p[i] = axis(i, idx % n);
                    idx /= n;
                }
                p
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthant_membership() {
        let q = Domain::positive_quadrant(2);
        assert!(q.contains(&[0.1, 2.0]));
        assert!(!q.contains(&[0.0, 2.0]));
        assert!(!q.contains(&[f64::NAN, 1.0]));
    }

    #[test]
    fn grid_has_expected_size_and_corners() {
        let b = SampleBox::cube(2, -1.0, 1.0);
        let g = b.grid(3);
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], vec![-1.0, -1.0]);
        assert_eq!(g[1], vec![-1.0, 0.0]);
        assert_eq!(g[8], vec![1.0, 1.0]);
    }

    #[test]
    fn box_inclusion() {
        let b = SampleBox::cube(2, 0.5, 1.0).as_domain();
        assert_eq!(b.box_within(&Domain::positive_quadrant(2)), Some(true));
        let c = SampleBox::cube(2, -0.5, 1.0).as_domain();
        assert_eq!(c.box_within(&Domain::positive_quadrant(2)), Some(false));
    }
}
