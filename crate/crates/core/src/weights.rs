//! Natural weights over the growing prefix.
//!
//! The natural weight of a point `x` in a prefix `S` is the maximum number of
//! points of `S` whose distances to `x` sum to at most `2B`. Taking smallest
//! distances first is optimal, so the weight is the longest prefix of the
//! sorted distance multiset whose sum stays inside the window.
//!
//! Weights depend only on a point's location, so the index keeps one
//! structure per distinct location: a max-heap of the distances currently
//! inside the window plus a min-heap of the excluded ones. An arrival inserts
//! one distance per location and rebalances in amortized O(log n).

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::metric::{LocId, PointId, PointStore};
use crate::scalar::{le_tol, Scalar};

#[derive(Debug, Error)]
pub enum WeightError {
    #[error("point {0} is not in the prefix of length {1}")]
    NotInPrefix(u32, usize),
    #[error("out-of-order arrival: expected point {expected}, got {got}")]
    OutOfOrder { expected: u32, got: u32 },
    #[error("budget must be strictly positive, got {0}")]
    NonpositiveBudget(f64),
}

/// Weight of a point in some prefix (a count, always >= 1 for prefix members).
pub type Weight = u32;

#[derive(Debug, Clone, Copy, PartialEq)]
struct OrdF<S: Scalar>(S);

impl<S: Scalar> Eq for OrdF<S> {}

impl<S: Scalar> PartialOrd for OrdF<S> {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl<S: Scalar> Ord for OrdF<S> {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        // Distances are finite and nonnegative by construction.
        self.0.partial_cmp(&other.0).expect("distance is NaN")
    }
}

#[derive(Debug, Clone)]
struct LocWindow<S: Scalar> {
    inside: BinaryHeap<OrdF<S>>,
    outside: BinaryHeap<Reverse<OrdF<S>>>,
    inside_sum: S,
}

impl<S: Scalar> LocWindow<S> {
    fn new() -> Self {
        LocWindow {
            inside: BinaryHeap::new(),
            outside: BinaryHeap::new(),
            inside_sum: S::zero(),
        }
    }

    fn weight(&self) -> Weight {
        self.inside.len() as Weight
    }

    fn insert(&mut self, d: S, window: S) {
        let belongs_inside = match self.inside.peek() {
            Some(&OrdF(max_in)) => d <= max_in,
            None => true,
        };
        if belongs_inside {
            self.inside_sum = self.inside_sum + d;
            self.inside.push(OrdF(d));
        } else {
            self.outside.push(Reverse(OrdF(d)));
        }
        // Evict while over budget, then re-admit while there is room. The
        // eviction loop runs at most once per insert; admissions amortize.
        while !le_tol(self.inside_sum, window) {
            let OrdF(max_in) = self.inside.pop().expect("over budget implies nonempty");
            self.inside_sum = self.inside_sum - max_in;
            self.outside.push(Reverse(OrdF(max_in)));
        }
        while let Some(&Reverse(OrdF(min_out))) = self.outside.peek() {
            if le_tol(self.inside_sum + min_out, window) {
                self.outside.pop();
                self.inside_sum = self.inside_sum + min_out;
                self.inside.push(OrdF(min_out));
            } else {
                break;
            }
        }
    }
}

/// Immutable weight map over a fixed prefix, shareable while the live index
/// advances. Lookup is by location.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WeightSnapshot {
    prefix_len: usize,
    by_loc: Vec<Weight>,
}

impl WeightSnapshot {
    #[inline]
    pub fn prefix_len(&self) -> usize {
        self.prefix_len
    }

    /// Weight of `p` in this snapshot's prefix.
    pub fn weight<S: Scalar>(
        &self,
        store: &PointStore<S>,
        p: PointId,
    ) -> Result<Weight, WeightError> {
        if p.index() >= self.prefix_len {
            return Err(WeightError::NotInPrefix(p.0, self.prefix_len));
        }
        Ok(self.by_loc[store.loc_of(p).index()])
    }

    /// Unchecked lookup for hot paths; `p` must be in the prefix.
    #[inline]
    pub fn w<S: Scalar>(&self, store: &PointStore<S>, p: PointId) -> Weight {
        debug_assert!(p.index() < self.prefix_len);
        self.by_loc[store.loc_of(p).index()]
    }

    #[inline]
    pub fn w_loc(&self, loc: LocId) -> Weight {
        self.by_loc[loc.index()]
    }

    /// Number of locations present in the prefix.
    #[inline]
    pub fn num_locs(&self) -> usize {
        self.by_loc.len()
    }
}

/// Incrementally maintained natural weights over the arrival prefix.
#[derive(Debug, Clone)]
pub struct WeightIndex<S: Scalar> {
    window: S, // 2B
    prefix_len: usize,
    locs: Vec<LocWindow<S>>,
}

impl<S: Scalar> WeightIndex<S> {
    /// `budget` is the (effective) budget B; the weight window is `2B`.
    pub fn new(budget: S) -> Result<Self, WeightError> {
        if budget <= S::zero() {
            return Err(WeightError::NonpositiveBudget(
                budget.to_f64().unwrap_or(f64::NAN),
            ));
        }
        Ok(WeightIndex {
            window: budget + budget,
            prefix_len: 0,
            locs: Vec::new(),
        })
    }

    #[inline]
    pub fn prefix_len(&self) -> usize {
        self.prefix_len
    }

    /// Register the next arrival. `x` must already be in the store and be
    /// exactly the next point after the current prefix.
    pub fn update_on_arrival(
        &mut self,
        store: &PointStore<S>,
        x: PointId,
    ) -> Result<(), WeightError> {
        if x.index() != self.prefix_len {
            return Err(WeightError::OutOfOrder {
                expected: self.prefix_len as u32,
                got: x.0,
            });
        }
        let loc = store.loc_of(x);
        if loc.index() >= self.locs.len() {
            debug_assert_eq!(loc.index(), self.locs.len());
            // New location: seed its window with distances to the whole
            // existing prefix (one entry per point, via its rep).
            let mut w = LocWindow::new();
            for j in 0..self.prefix_len {
                let d = store.loc_dist(loc, store.loc_of(PointId(j as u32)));
                w.insert(d, self.window);
            }
            self.locs.push(w);
        }
        // Every tracked location gains one distance: to the new arrival.
        for li in 0..self.locs.len() {
            let d = store.loc_dist(LocId(li as u32), loc);
            self.locs[li].insert(d, self.window);
        }
        self.prefix_len += 1;
        Ok(())
    }

    /// Frozen copy of the current weights.
    pub fn snapshot(&self) -> WeightSnapshot {
        WeightSnapshot {
            prefix_len: self.prefix_len,
            by_loc: self.locs.iter().map(|l| l.weight()).collect(),
        }
    }

    pub fn weight(&self, store: &PointStore<S>, p: PointId) -> Result<Weight, WeightError> {
        if p.index() >= self.prefix_len {
            return Err(WeightError::NotInPrefix(p.0, self.prefix_len));
        }
        Ok(self.locs[store.loc_of(p).index()].weight())
    }
}

/// From-scratch natural weight of `x` in the prefix `X_prefix_len`, used as
/// the oracle the incremental index must match and as the public one-shot
/// query. Sorts all prefix distances and greedily fills the `2B` window.
pub fn natural_weight<S: Scalar>(
    store: &PointStore<S>,
    x: PointId,
    prefix_len: usize,
    budget: S,
) -> Result<Weight, WeightError> {
    if budget <= S::zero() {
        return Err(WeightError::NonpositiveBudget(
            budget.to_f64().unwrap_or(f64::NAN),
        ));
    }
    if x.index() >= prefix_len || prefix_len > store.len() {
        return Err(WeightError::NotInPrefix(x.0, prefix_len.min(store.len())));
    }
    let window = budget + budget;
    let mut dists: Vec<S> = (0..prefix_len)
        .map(|j| store.dist(x, PointId(j as u32)))
        .collect();
    dists.sort_by(|a, b| a.partial_cmp(b).expect("distance is NaN"));
    let mut sum = S::zero();
    let mut count = 0;
    for d in dists {
        if le_tol(sum + d, window) {
            sum = sum + d;
            count += 1;
        } else {
            break;
        }
    }
    Ok(count)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric::MetricKind;

    fn line_store(xs: &[f64]) -> PointStore<f64> {
        let mut s = PointStore::new_euclidean(MetricKind::L2, 1);
        for &x in xs {
            s.push(&[x]).unwrap();
        }
        s
    }

    /// Subset-enumeration oracle: maximum-cardinality subset of the prefix
    /// whose distance sum to `x` fits in 2B. Greedy-by-sorted-distance is
    /// optimal, but this one does not assume that.
    fn enumeration_oracle(store: &PointStore<f64>, x: PointId, prefix_len: usize, b: f64) -> u32 {
        let n = prefix_len;
        assert!(n <= 20);
        let mut best = 0u32;
        for mask in 0u32..(1 << n) {
            let mut sum = 0.0;
            for j in 0..n {
                if mask & (1 << j) != 0 {
                    sum += store.dist(x, PointId(j as u32));
                }
            }
            if le_tol(sum, 2.0 * b) {
                best = best.max(mask.count_ones());
            }
        }
        best
    }

    #[test]
    fn singleton_prefix_weight_is_one() {
        let s = line_store(&[5.0]);
        assert_eq!(natural_weight(&s, PointId(0), 1, 2.0).unwrap(), 1);
    }

    #[test]
    fn line_0_1_3_budget_2() {
        // sorted distances from 0: (0,1,3), prefix sums (0,1,4) <= 4.
        let s = line_store(&[0.0, 1.0, 3.0]);
        assert_eq!(natural_weight(&s, PointId(0), 3, 2.0).unwrap(), 3);
        assert_eq!(enumeration_oracle(&s, PointId(0), 3, 2.0), 3);
    }

    #[test]
    fn far_point_keeps_weight_one() {
        let s = line_store(&[0.0, 1.0, 100.0]);
        assert_eq!(natural_weight(&s, PointId(2), 3, 2.0).unwrap(), 1);
        assert_eq!(enumeration_oracle(&s, PointId(2), 3, 2.0), 1);
    }

    #[test]
    fn not_in_prefix_is_error() {
        let s = line_store(&[0.0, 1.0]);
        assert!(natural_weight(&s, PointId(1), 1, 2.0).is_err());
    }

    #[test]
    fn nonpositive_budget_rejected() {
        let s = line_store(&[0.0]);
        assert!(natural_weight(&s, PointId(0), 1, 0.0).is_err());
        assert!(WeightIndex::<f64>::new(0.0).is_err());
    }

    #[test]
    fn incremental_matches_scratch_on_arrivals() {
        let s = line_store(&[0.0, 1.0, 0.0, 3.0, 1.0, 7.0, 0.5]);
        let b = 1.5;
        let mut idx = WeightIndex::new(b).unwrap();
        for i in 0..s.len() {
            idx.update_on_arrival(&s, PointId(i as u32)).unwrap();
            for j in 0..=i {
                let inc = idx.weight(&s, PointId(j as u32)).unwrap();
                let scr = natural_weight(&s, PointId(j as u32), i + 1, b).unwrap();
                assert_eq!(inc, scr, "point {j} at prefix {}", i + 1);
            }
        }
    }

    #[test]
    fn snapshot_is_frozen() {
        let s = line_store(&[0.0, 0.0, 0.0]);
        let mut idx = WeightIndex::new(1.0).unwrap();
        idx.update_on_arrival(&s, PointId(0)).unwrap();
        let snap = idx.snapshot();
        idx.update_on_arrival(&s, PointId(1)).unwrap();
        idx.update_on_arrival(&s, PointId(2)).unwrap();
        assert_eq!(snap.weight(&s, PointId(0)).unwrap(), 1);
        assert_eq!(idx.weight(&s, PointId(0)).unwrap(), 3);
        assert!(snap.weight(&s, PointId(1)).is_err());
    }

    #[test]
    fn duplicate_arrival_bumps_weight() {
        let s = line_store(&[2.0, 2.0]);
        let mut idx = WeightIndex::new(1.0).unwrap();
        idx.update_on_arrival(&s, PointId(0)).unwrap();
        assert_eq!(idx.weight(&s, PointId(0)).unwrap(), 1);
        idx.update_on_arrival(&s, PointId(1)).unwrap();
        assert_eq!(idx.weight(&s, PointId(0)).unwrap(), 2);
    }

    #[test]
    fn distant_arrival_leaves_weight() {
        let s = line_store(&[0.0, 100.0]);
        let mut idx = WeightIndex::new(1.0).unwrap();
        idx.update_on_arrival(&s, PointId(0)).unwrap();
        idx.update_on_arrival(&s, PointId(1)).unwrap();
        assert_eq!(idx.weight(&s, PointId(0)).unwrap(), 1);
        assert_eq!(idx.weight(&s, PointId(1)).unwrap(), 1);
    }

    #[test]
    fn out_of_order_rejected() {
        let s = line_store(&[0.0, 1.0]);
        let mut idx = WeightIndex::new(1.0).unwrap();
        assert!(matches!(
            idx.update_on_arrival(&s, PointId(1)),
            Err(WeightError::OutOfOrder {
                expected: 0,
                got: 1
            })
        ));
    }
}
