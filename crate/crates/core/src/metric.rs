//! Point storage, arrival ordering and the distance oracle.
//!
//! Points are identified by dense arrival-ordered ids. A [`PointStore`] is
//! append-only: once a point is in, its location never changes, so prefixes
//! `X_i` are always well defined and the store can be shared across threads
//! after loading. Duplicate locations are permitted and tracked explicitly
//! (points at the same location are interchangeable for every weighted
//! predicate, which the hot paths exploit).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{le_tol, Scalar};

/// Arrival-ordered point identifier, 0-based and dense.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PointId(pub u32);

impl PointId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl std::fmt::Display for PointId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Identifier of a distinct location (group of coincident points).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LocId(pub u32);

impl LocId {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    L1,
    L2,
    Matrix,
}

impl std::fmt::Display for MetricKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MetricKind::L1 => write!(f, "l1"),
            MetricKind::L2 => write!(f, "l2"),
            MetricKind::Matrix => write!(f, "matrix"),
        }
    }
}

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("point {0} not loaded (store has {1} points)")]
    UnknownPoint(u32, usize),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("matrix-backed store is fixed at {0} points and cannot grow")]
    MatrixFixed(usize),
    #[error("matrix must be square, got {rows} rows with {cols} entries")]
    MatrixShape { rows: usize, cols: usize },
    #[error("matrix asymmetry at ({a},{b}): {dab} vs {dba}")]
    Asymmetric {
        a: usize,
        b: usize,
        dab: f64,
        dba: f64,
    },
    #[error("negative distance {d} at ({a},{b})")]
    Negative { a: usize, b: usize, d: f64 },
    #[error("nonzero self-distance {d} at {a}")]
    NonzeroDiagonal { a: usize, d: f64 },
}

/// Witness of a triangle-inequality breach.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TriangleViolation {
    pub a: u32,
    pub b: u32,
    pub c: u32,
    pub direct: f64,
    pub via: f64,
}

/// Append-only point set with a distance oracle.
///
/// For `L1`/`L2` stores the coordinates are owned here; matrix stores carry
/// the full symmetric matrix up front (they cannot grow, which only the
/// adversary driver needs).
#[derive(Debug, Clone)]
pub struct PointStore<S: Scalar> {
    kind: MetricKind,
    dim: usize,
    coords: Vec<S>,
    matrix: Vec<S>,
    matrix_n: usize,
    len: usize,
    loc_of: Vec<LocId>,
    loc_rep: Vec<PointId>,
    loc_count: Vec<u32>,
}

impl<S: Scalar> PointStore<S> {
    pub fn new_euclidean(kind: MetricKind, dim: usize) -> Self {
        assert!(
            kind != MetricKind::Matrix,
            "use from_matrix for matrix stores"
        );
        assert!(dim > 0, "dimension must be positive");
        PointStore {
            kind,
            dim,
            coords: Vec::new(),
            matrix: Vec::new(),
            matrix_n: 0,
            len: 0,
            loc_of: Vec::new(),
            loc_rep: Vec::new(),
            loc_count: Vec::new(),
        }
    }

    /// Build a matrix-backed store. All `n` points are registered immediately
    /// (arrival order = row order); the matrix is validated for symmetry and
    /// nonnegativity here, triangle inequality via [`PointStore::validate_metric`].
    pub fn from_matrix(matrix: Vec<Vec<S>>) -> Result<Self, MetricError> {
        let n = matrix.len();
        let mut flat = Vec::with_capacity(n * n);
        for (a, row) in matrix.iter().enumerate() {
            if row.len() != n {
                return Err(MetricError::MatrixShape {
                    rows: n,
                    cols: row.len(),
                });
            }
            for (b, &d) in row.iter().enumerate() {
                if d < S::zero() {
                    return Err(MetricError::Negative {
                        a,
                        b,
                        d: d.to_f64().unwrap_or(f64::NAN),
                    });
                }
                if a == b && d != S::zero() {
                    return Err(MetricError::NonzeroDiagonal {
                        a,
                        d: d.to_f64().unwrap_or(f64::NAN),
                    });
                }
                let dba = matrix[b][a];
                if d != dba {
                    return Err(MetricError::Asymmetric {
                        a,
                        b,
                        dab: d.to_f64().unwrap_or(f64::NAN),
                        dba: dba.to_f64().unwrap_or(f64::NAN),
                    });
                }
                flat.push(d);
            }
        }
        let mut store = PointStore {
            kind: MetricKind::Matrix,
            dim: 0,
            coords: Vec::new(),
            matrix: flat,
            matrix_n: n,
            len: 0,
            loc_of: Vec::new(),
            loc_rep: Vec::new(),
            loc_count: Vec::new(),
        };
        for _ in 0..n {
            store.register_location();
            store.len += 1;
        }
        Ok(store)
    }

    #[inline]
    pub fn kind(&self) -> MetricKind {
        self.kind
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.len
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Append the next arrival. Returns its id.
    pub fn push(&mut self, coords: &[S]) -> Result<PointId, MetricError> {
        if self.kind == MetricKind::Matrix {
            return Err(MetricError::MatrixFixed(self.matrix_n));
        }
        if coords.len() != self.dim {
            return Err(MetricError::DimensionMismatch {
                expected: self.dim,
                got: coords.len(),
            });
        }
        self.coords.extend_from_slice(coords);
        let id = PointId(self.len as u32);
        self.len += 1;
        self.register_location();
        Ok(id)
    }

    fn register_location(&mut self) {
        let id = PointId(self.loc_of.len() as u32);
        // Group by exact zero distance against existing representatives; the
        // triangle inequality makes "d == 0" transitive, so reps suffice.
        for loc in 0..self.loc_rep.len() {
            let rep = self.loc_rep[loc];
            if self.raw_distance(id, rep) == S::zero() {
                self.loc_of.push(LocId(loc as u32));
                self.loc_count[loc] += 1;
                return;
            }
        }
        let loc = LocId(self.loc_rep.len() as u32);
        self.loc_rep.push(id);
        self.loc_count.push(1);
        self.loc_of.push(loc);
    }

    #[inline]
    pub fn coords_of(&self, p: PointId) -> &[S] {
        let i = p.index();
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    fn raw_distance(&self, a: PointId, b: PointId) -> S {
        match self.kind {
            MetricKind::Matrix => self.matrix[a.index() * self.matrix_n + b.index()],
            MetricKind::L1 => {
                let (xa, xb) = (self.coords_of(a), self.coords_of(b));
                let mut acc = S::zero();
                for i in 0..self.dim {
                    acc = acc + (xa[i] - xb[i]).abs();
                }
                acc
            }
            MetricKind::L2 => {
                let (xa, xb) = (self.coords_of(a), self.coords_of(b));
                let mut acc = S::zero();
                for i in 0..self.dim {
                    let d = xa[i] - xb[i];
                    acc = acc + d * d;
                }
                acc.sqrt()
            }
        }
    }

    /// Distance between two loaded points.
    pub fn distance(&self, a: PointId, b: PointId) -> Result<S, MetricError> {
        for p in [a, b] {
            if p.index() >= self.len {
                return Err(MetricError::UnknownPoint(p.0, self.len));
            }
        }
        Ok(self.raw_distance(a, b))
    }

    /// Unchecked distance for hot paths; panics on out-of-range ids.
    #[inline]
    pub fn dist(&self, a: PointId, b: PointId) -> S {
        debug_assert!(a.index() < self.len && b.index() < self.len);
        self.raw_distance(a, b)
    }

    #[inline]
    pub fn loc_of(&self, p: PointId) -> LocId {
        self.loc_of[p.index()]
    }

    /// Number of distinct locations among the first `prefix_len` points.
    /// Locations are numbered by first arrival, so reps are index-sorted.
    pub fn loc_count_in_prefix(&self, prefix_len: usize) -> usize {
        self.loc_rep
            .iter()
            .take_while(|r| r.index() < prefix_len)
            .count()
    }

    #[inline]
    pub fn num_locations(&self) -> usize {
        self.loc_rep.len()
    }

    /// First-arrived point at this location.
    #[inline]
    pub fn loc_rep(&self, loc: LocId) -> PointId {
        self.loc_rep[loc.index()]
    }

    /// Points at this location (count over the whole store).
    #[inline]
    pub fn loc_multiplicity(&self, loc: LocId) -> u32 {
        self.loc_count[loc.index()]
    }

    /// Distance between location representatives.
    #[inline]
    pub fn loc_dist(&self, a: LocId, b: LocId) -> S {
        self.raw_distance(self.loc_rep[a.index()], self.loc_rep[b.index()])
    }

    /// Scan for a triangle-inequality breach over the first `prefix_len`
    /// points (location reps only; coincident points add nothing). Returns
    /// the first violating triple in lexicographic order, if any.
    pub fn validate_metric(&self, prefix_len: usize) -> Option<TriangleViolation> {
        let reps: Vec<PointId> = self
            .loc_rep
            .iter()
            .copied()
            .filter(|r| r.index() < prefix_len)
            .collect();
        let m = reps.len();
        for ia in 0..m {
            for ic in 0..m {
                if ic == ia {
                    continue;
                }
                let direct = self.raw_distance(reps[ia], reps[ic]);
                for ib in 0..m {
                    if ib == ia || ib == ic {
                        continue;
                    }
                    let via = self.raw_distance(reps[ia], reps[ib])
                        + self.raw_distance(reps[ib], reps[ic]);
                    if !le_tol(direct, via) {
                        return Some(TriangleViolation {
                            a: reps[ia].0,
                            b: reps[ib].0,
                            c: reps[ic].0,
                            direct: direct.to_f64().unwrap_or(f64::NAN),
                            via: via.to_f64().unwrap_or(f64::NAN),
                        });
                    }
                }
            }
        }
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_store(xs: &[f64]) -> PointStore<f64> {
        let mut s = PointStore::new_euclidean(MetricKind::L2, 1);
        for &x in xs {
            s.push(&[x]).unwrap();
        }
        s
    }

    #[test]
    fn self_distance_is_zero() {
        let s = line_store(&[3.0, -1.0]);
        assert_eq!(s.distance(PointId(0), PointId(0)).unwrap(), 0.0);
    }

    #[test]
    fn l1_one_dimensional() {
        let mut s = PointStore::new_euclidean(MetricKind::L1, 1);
        s.push(&[0.0]).unwrap();
        s.push(&[3.0]).unwrap();
        assert_eq!(s.distance(PointId(0), PointId(1)).unwrap(), 3.0);
    }

    #[test]
    fn matrix_lookup_and_validation() {
        let m = vec![vec![0.0, 7.0], vec![7.0, 0.0]];
        let s = PointStore::<f64>::from_matrix(m).unwrap();
        assert_eq!(s.distance(PointId(0), PointId(1)).unwrap(), 7.0);
        assert!(s.validate_metric(2).is_none());
    }

    #[test]
    fn matrix_triangle_violation_witness() {
        let m = vec![
            vec![0.0, 1.0, 10.0],
            vec![1.0, 0.0, 1.0],
            vec![10.0, 1.0, 0.0],
        ];
        let s = PointStore::<f64>::from_matrix(m).unwrap();
        let v = s.validate_metric(3).expect("must detect breach");
        assert_eq!((v.a, v.b, v.c), (0, 1, 2));
        assert_eq!(v.direct, 10.0);
        assert_eq!(v.via, 2.0);
    }

    #[test]
    fn euclidean_is_a_metric() {
        let s = line_store(&[0.0, 1.5, -2.0, 8.0]);
        assert!(s.validate_metric(4).is_none());
    }

    #[test]
    fn unknown_point_errors() {
        let s = line_store(&[0.0]);
        assert!(matches!(
            s.distance(PointId(0), PointId(5)),
            Err(MetricError::UnknownPoint(5, 1))
        ));
    }

    #[test]
    fn duplicate_locations_grouped() {
        let s = line_store(&[1.0, 2.0, 1.0, 1.0]);
        assert_eq!(s.num_locations(), 2);
        assert_eq!(s.loc_of(PointId(0)), s.loc_of(PointId(2)));
        assert_eq!(s.loc_multiplicity(s.loc_of(PointId(0))), 3);
        assert_eq!(s.loc_rep(s.loc_of(PointId(1))), PointId(1));
    }

    #[test]
    fn asymmetric_matrix_rejected() {
        let m = vec![vec![0.0, 1.0], vec![2.0, 0.0]];
        assert!(PointStore::<f64>::from_matrix(m).is_err());
    }

    #[test]
    fn f32_store_works() {
        let mut s = PointStore::<f32>::new_euclidean(MetricKind::L2, 2);
        s.push(&[0.0, 0.0]).unwrap();
        s.push(&[3.0, 4.0]).unwrap();
        assert_eq!(s.distance(PointId(0), PointId(1)).unwrap(), 5.0);
    }
}
