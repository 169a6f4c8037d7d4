//! Exact Euclidean projection onto the feasible sets the lower level uses.
//!
//! Polyhedra `{w : a_j . w >= b_j}` in low dimension are handled by active-set
//! enumeration. The projection of `u` lies in the relative interior of exactly
//! one face, and equals the projection of `u` onto that face's affine hull. That
//! hull is cut out by at most `p` linearly independent active constraints, so
//! projecting `u` onto every such affine piece, discarding infeasible results and
//! keeping the nearest survivor gives the exact answer. The same enumeration
//! finds no feasible candidate exactly when the polyhedron is empty.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::vecops::{dist, dot, norm};
use crate::{Error, Result};

/// Relative slack used when deciding whether a candidate satisfies a constraint.
const FEAS_TOL: f64 = 1e-11;

/// Upper bound on the number of active sets examined by one projection.
const MAX_ACTIVE_SETS: usize = 1 << 20;

/// A fixed polyhedron `{w in R^p : a_j . w >= b_j for all j}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron {
    normals: Vec<Vec<f64>>,
    offsets: Vec<f64>,
    dim: usize,
}

impl Polyhedron {
    pub fn new(dim: usize, normals: Vec<Vec<f64>>, offsets: Vec<f64>) -> Result<Self> {
        if normals.len() != offsets.len() {
            return Err(Error::DimensionMismatch {
                expected: normals.len(),
                got: offsets.len(),
            });
        }
        if let Some(bad) = normals.iter().find(|a| a.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: bad.len(),
            });
        }
        if normals.iter().any(|a| norm(a) == 0.0) {
            return Err(Error::InvalidArgument("zero constraint normal".into()));
        }
        Ok(Self {
            normals,
            offsets,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_constraints(&self) -> usize {
        self.normals.len()
    }

    /// Largest constraint violation `max_j (b_j - a_j . w)^+`.
    pub fn max_violation(&self, w: &[f64]) -> f64 {
        self.normals
            .iter()
            .zip(&self.offsets)
            .map(|(a, b)| (b - dot(a, w)).max(0.0))
            .fold(0.0, f64::max)
    }

    fn accepts(&self, w: &[f64]) -> bool {
        let wn = norm(w);
        self.normals.iter().zip(&self.offsets).all(|(a, b)| {
            let slack = FEAS_TOL * (1.0 + b.abs() + norm(a) * wn);
            dot(a, w) >= b - slack
        })
    }

    /// Projects `u` onto the affine set `{w : a_j . w = b_j, j in active}`.
    /// Returns `None` when the active normals are (numerically) dependent.
    fn project_affine(&self, u: &[f64], active: &[usize]) -> Option<Vec<f64>> {
        let k = active.len();
        let gram = DMatrix::from_fn(k, k, |r, c| {
            dot(&self.normals[active[r]], &self.normals[active[c]])
        });
        let rhs = DVector::from_iterator(
            k,
            active
                .iter()
                .map(|&j| self.offsets[j] - dot(&self.normals[j], u)),
        );
        let chol = gram.clone().cholesky()?;
        // Reject near-parallel normals; the pivot ratio is a cheap condition proxy.
        let l = chol.l();
        let diag: Vec<f64> = (0..k).map(|i| l[(i, i)].abs()).collect();
        let (lo, hi) = diag
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &d| (lo.min(d), hi.max(d)));
        if lo <= 1e-10 * hi {
            return None;
        }
        let lambda = chol.solve(&rhs);
        let mut w = u.to_vec();
        for (idx, &j) in active.iter().enumerate() {
            for (wi, ai) in w.iter_mut().zip(&self.normals[j]) {
                *wi += lambda[idx] * ai;
            }
        }
        Some(w)
    }

    /// Exact Euclidean projection of `u`.
    pub fn project(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: u.len(),
            });
        }
        if self.accepts(u) {
            return Ok(u.to_vec());
        }
        let q = self.normals.len();
        let max_active = self.dim.min(q);
        if count_subsets(q, max_active) > MAX_ACTIVE_SETS {
            return Err(Error::InvalidArgument(format!(
                "{q} constraints in dimension {} is too many for active-set enumeration",
                self.dim
            )));
        }

        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut active = Vec::with_capacity(max_active);
        for size in 1..=max_active {
            active.clear();
            active.extend(0..size);
            loop {
                if let Some(w) = self.project_affine(u, &active) {
                    if self.accepts(&w) {
                        let d = dist(u, &w);
                        if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                            best = Some((d, w));
                        }
                    }
                }
                if !next_combination(&mut active, q) {
                    break;
                }
            }
        }
        best.map(|(_, w)| w).ok_or(Error::InfeasibleSet)
    }

    /// Whether the polyhedron is empty, decided by the same enumeration.
    pub fn is_empty(&self) -> bool {
        matches!(self.project(&vec![0.0; self.dim]), Err(Error::InfeasibleSet))
    }
}

fn count_subsets(q: usize, max_size: usize) -> usize {
    let mut total: usize = 1;
    let mut binom: usize = 1;
    for k in 1..=max_size {
        binom = binom.saturating_mul(q + 1 - k) / k;
        total = total.saturating_add(binom);
    }
    total
}

/// Advances `idx` to the next k-combination of `0..q` in lexicographic order.
fn next_combination(idx: &mut [usize], q: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < q - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

type OffsetFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;

/// Halfspaces with fixed normals and offsets that depend on the upper-level
/// variable: `Z(x) = {w : a_j . w >= b_j(x)}`.
#[derive(Clone)]
pub struct ParametricHalfspaces {
    dim: usize,
    normals: Vec<Vec<f64>>,
    offsets: Arc<OffsetFn>,
}

impl ParametricHalfspaces {
    pub fn new(
        dim: usize,
        normals: Vec<Vec<f64>>,
        offsets: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            normals,
            offsets: Arc::new(offsets),
        }
    }

    pub fn at(&self, x: &[f64]) -> Result<Polyhedron> {
        Polyhedron::new(self.dim, self.normals.clone(), (self.offsets)(x))
    }
}

impl fmt::Debug for ParametricHalfspaces {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ParametricHalfspaces")
            .field("dim", &self.dim)
            .field("normals", &self.normals)
            .finish_non_exhaustive()
    }
}

/// Parametric convex set `Z(x)` with an exact projection.
#[derive(Debug, Clone)]
pub enum FeasibleSet {
    /// All of `R^p`.
    Whole { dim: usize },
    /// `lower <= w <= upper`, bounds may be infinite.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Halfspaces(ParametricHalfspaces),
}

impl FeasibleSet {
    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.iter().zip(&upper).any(|(l, u)| l > u || l.is_nan() || u.is_nan()) {
            return Err(Error::InfeasibleSet);
        }
        Ok(FeasibleSet::Box { lower, upper })
    }

    pub fn nonnegative(dim: usize) -> Self {
        FeasibleSet::Box {
            lower: vec![0.0; dim],
            upper: vec![f64::INFINITY; dim],
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            FeasibleSet::Whole { dim } => *dim,
            FeasibleSet::Box { lower, .. } => lower.len(),
            FeasibleSet::Halfspaces(h) => h.dim,
        }
    }

    /// Euclidean projection of `u` onto `Z(x)`.
    pub fn project(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: u.len(),
            });
        }
        match self {
            FeasibleSet::Whole { .. } => Ok(u.to_vec()),
            FeasibleSet::Box { lower, upper } => Ok(u
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(v, (l, h))| v.max(*l).min(*h))
                .collect()),
            FeasibleSet::Halfspaces(h) => h.at(x)?.project(u),
        }
    }

    /// Largest constraint violation of `w` with respect to `Z(x)`.
    pub fn max_violation(&self, x: &[f64], w: &[f64]) -> f64 {
        match self {
            FeasibleSet::Whole { .. } => 0.0,
            FeasibleSet::Box { lower, upper } => w
                .iter()
                .zip(lower.iter().zip(upper))
                .map(|(v, (l, h))| (l - v).max(v - h).max(0.0))
                .fold(0.0, f64::max),
            FeasibleSet::Halfspaces(h) => match h.at(x) {
                Ok(poly) => poly.max_violation(w),
                Err(_) => f64::INFINITY,
            },
        }
    }

    pub fn contains(&self, x: &[f64], w: &[f64], tol: f64) -> bool {
        self.max_violation(x, w) <= tol
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> Polyhedron {
        Polyhedron::new(
            2,
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0], vec![0.0, -1.0]],
            vec![0.0, 0.0, -1.0, -1.0],
        )
        .unwrap()
    }

    #[test]
    fn combinations_are_enumerated_in_order() {
        let mut idx = vec![0, 1];
        let mut seen = vec![idx.clone()];
        while next_combination(&mut idx, 4) {
            seen.push(idx.clone());
        }
        assert_eq!(seen.len(), 6);
        assert_eq!(seen.last().unwrap(), &vec![2, 3]);
        assert_eq!(count_subsets(4, 2), 11);
    }

    #[test]
    fn square_projection_hits_vertex_and_facet() {
        let sq = unit_square();
        assert_eq!(sq.project(&[2.0, 3.0]).unwrap(), vec![1.0, 1.0]);
        let w = sq.project(&[0.5, -4.0]).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-15 && w[1].abs() < 1e-15);
        assert_eq!(sq.project(&[0.25, 0.75]).unwrap(), vec![0.25, 0.75]);
    }

    #[test]
    fn empty_polyhedron_is_reported() {
        let p = Polyhedron::new(1, vec![vec![1.0], vec![-1.0]], vec![1.0, 0.0]).unwrap();
        assert!(p.is_empty());
        assert!(matches!(p.project(&[0.3]), Err(Error::InfeasibleSet)));
    }

    #[test]
    fn parallel_normals_are_skipped() {
        // Two copies of the same halfspace plus y >= 0.
        let p = Polyhedron::new(
            2,
            vec![vec![1.0, 1.0], vec![2.0, 2.0], vec![0.0, 1.0]],
            vec![1.0, 2.0, 0.0],
        )
        .unwrap();
        let w = p.project(&[0.0, 0.0]).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-12 && (w[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn box_projection_clips() {
        let set = FeasibleSet::nonnegative(2);
        assert_eq!(set.project(&[0.0, 0.0], &[-1.0, -1.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(set.project(&[0.0, 0.0], &[-1.0, 2.0]).unwrap(), vec![0.0, 2.0]);
        assert!(FeasibleSet::boxed(vec![1.0], vec![0.0]).is_err());
    }

    #[test]
    fn dimension_is_checked() {
        let sq = unit_square();
        assert!(matches!(
            sq.project(&[1.0]),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }
}
