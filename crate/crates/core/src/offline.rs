//! Offline k-median with centers restricted to the input points.
//!
//! Two solvers share one representation: clients are deduplicated to distinct
//! locations with multiplicities (coincident points are interchangeable both
//! as clients and as centers), so structured instances with heavy duplicate
//! mass enumerate over a handful of candidates.
//!
//! * [`exact_kmedian`] enumerates center subsets depth-first in index order,
//!   keeping the first minimum: deterministic lexicographic tie-breaking.
//! * [`local_search_kmedian`] is the classic swap heuristic (factor 5 for
//!   single swaps), deterministic via farthest-point seeding and
//!   first-improvement scan order.

use serde::Serialize;
use thiserror::Error;

use crate::metric::{MetricKind, PointId, PointStore};
use crate::scalar::{le_tol, Scalar};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("exact enumeration too large: C({locations}, {k}) = {subsets} exceeds cap {cap}; use local search")]
    CapExceeded {
        locations: usize,
        k: usize,
        subsets: u128,
        cap: u64,
    },
    #[error("empty client set")]
    EmptySet,
    #[error("unsupported swap size {0} (must be >= 1)")]
    BadSwapSize(usize),
    #[error("medoid factor check requires a Euclidean store")]
    NotEuclidean,
}

/// Chosen centers, at most `k`, all members of the clustered set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CenterSet {
    pub centers: Vec<PointId>,
    pub k: usize,
}

/// Assignment of every clustered point to its nearest chosen center
/// (ties to the smallest center arrival index) plus the total cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering<S: Scalar> {
    pub assignment: Vec<(PointId, PointId)>,
    pub cost: S,
}

/// `cost(S; c) = sum of d(p, c) over p in S`.
pub fn cost<S: Scalar>(store: &PointStore<S>, members: &[PointId], c: PointId) -> S {
    let mut acc = S::zero();
    for &p in members {
        acc = acc + store.dist(p, c);
    }
    acc
}

/// Distinct locations of `s` with multiplicity; `rep` is the smallest-index
/// member of `s` at that location. Sorted by rep index.
fn dedup_clients<S: Scalar>(store: &PointStore<S>, s: &[PointId]) -> Vec<(PointId, u32)> {
    let mut sorted: Vec<PointId> = s.to_vec();
    sorted.sort_unstable();
    let mut reps: Vec<(PointId, u32)> = Vec::new();
    let mut loc_slot: std::collections::HashMap<u32, usize> = std::collections::HashMap::new();
    for p in sorted {
        let loc = store.loc_of(p).0;
        match loc_slot.get(&loc) {
            Some(&i) => reps[i].1 += 1,
            None => {
                loc_slot.insert(loc, reps.len());
                reps.push((p, 1));
            }
        }
    }
    reps
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    acc
}

/// Exhaustive work estimate for [`exact_kmedian`] on a client set with
/// `locations` distinct locations; used by callers to pick a solver.
pub fn exact_subset_count(locations: usize, k: usize) -> u128 {
    binomial(locations, k.min(locations))
}

struct DfsBest<S: Scalar> {
    cost: S,
    centers: Vec<usize>,
}

fn dfs_enumerate<S: Scalar>(
    reps: &[(PointId, u32)],
    dist: &dyn Fn(usize, usize) -> S,
    k_eff: usize,
    start: usize,
    chosen: &mut Vec<usize>,
    dmin: &[S],
    best: &mut DfsBest<S>,
) {
    if chosen.len() == k_eff {
        let mut c = S::zero();
        for (i, &(_, mult)) in reps.iter().enumerate() {
            c = c + S::from_u32(mult).expect("mult fits") * dmin[i];
        }
        if c < best.cost {
            best.cost = c;
            best.centers = chosen.clone();
        }
        return;
    }
    let remaining = k_eff - chosen.len();
    for cand in start..=(reps.len() - remaining) {
        let mut nd = dmin.to_vec();
        for i in 0..reps.len() {
            let d = dist(i, cand);
            if d < nd[i] {
                nd[i] = d;
            }
        }
        chosen.push(cand);
        dfs_enumerate(reps, dist, k_eff, cand + 1, chosen, &nd, best);
        chosen.pop();
    }
}

fn assign_to_centers<S: Scalar>(
    store: &PointStore<S>,
    s: &[PointId],
    centers: &[PointId],
) -> Clustering<S> {
    let mut assignment = Vec::with_capacity(s.len());
    let mut total = S::zero();
    for &p in s {
        let mut best_c = centers[0];
        let mut best_d = store.dist(p, centers[0]);
        for &c in &centers[1..] {
            let d = store.dist(p, c);
            if d < best_d || (d == best_d && c < best_c) {
                best_d = d;
                best_c = c;
            }
        }
        total = total + best_d;
        assignment.push((p, best_c));
    }
    // Centers come sorted; the tie-break above still compares ids because
    // equal distances can pair with out-of-order candidates after sorting.
    Clustering {
        assignment,
        cost: total,
    }
}

/// Optimal k-median over `s` with centers from `s`, by exhaustive
/// enumeration over distinct locations. Deterministic: among equal-cost
/// solutions the lexicographically smallest center-index tuple wins.
pub fn exact_kmedian<S: Scalar>(
    store: &PointStore<S>,
    s: &[PointId],
    k: usize,
    cap: u64,
) -> Result<(CenterSet, Clustering<S>), SolverError> {
    if s.is_empty() {
        return Err(SolverError::EmptySet);
    }
    let reps = dedup_clients(store, s);
    let k_eff = k.min(reps.len());
    let subsets = binomial(reps.len(), k_eff);
    if subsets > cap as u128 {
        return Err(SolverError::CapExceeded {
            locations: reps.len(),
            k: k_eff,
            subsets,
            cap,
        });
    }
    let dist = |i: usize, j: usize| store.dist(reps[i].0, reps[j].0);
    let mut best = DfsBest {
        cost: S::infinity(),
        centers: Vec::new(),
    };
    let dmin = vec![S::infinity(); reps.len()];
    dfs_enumerate(&reps, &dist, k_eff, 0, &mut Vec::new(), &dmin, &mut best);
    let centers: Vec<PointId> = best.centers.iter().map(|&i| reps[i].0).collect();
    let clustering = assign_to_centers(store, s, &centers);
    Ok((CenterSet { centers, k }, clustering))
}

/// Swap-based local search: farthest-point seeding from the smallest-index
/// client, then first-improvement `swap_size`-swaps in deterministic scan
/// order until locally optimal. Single swaps give the classic factor-5
/// guarantee against the medoid optimum.
pub fn local_search_kmedian<S: Scalar>(
    store: &PointStore<S>,
    s: &[PointId],
    k: usize,
    swap_size: usize,
) -> Result<(CenterSet, Clustering<S>), SolverError> {
    if s.is_empty() {
        return Err(SolverError::EmptySet);
    }
    if swap_size == 0 {
        return Err(SolverError::BadSwapSize(swap_size));
    }
    let reps = dedup_clients(store, s);
    let l = reps.len();
    let k_eff = k.min(l);
    let dist = |i: usize, j: usize| store.dist(reps[i].0, reps[j].0);
    let multf = |i: usize| S::from_u32(reps[i].1).expect("mult fits");

    // Farthest-point seeding from the first client location.
    let mut centers: Vec<usize> = vec![0];
    let mut nearest: Vec<S> = (0..l).map(|i| dist(i, 0)).collect();
    while centers.len() < k_eff {
        let mut far = 0;
        for i in 1..l {
            if nearest[i] > nearest[far] {
                far = i;
            }
        }
        centers.push(far);
        for i in 0..l {
            let d = dist(i, far);
            if d < nearest[i] {
                nearest[i] = d;
            }
        }
    }
    centers.sort_unstable();

    let total_cost = |centers: &[usize]| -> S {
        let mut acc = S::zero();
        for i in 0..l {
            let mut dm = S::infinity();
            for &c in centers {
                let d = dist(i, c);
                if d < dm {
                    dm = d;
                }
            }
            acc = acc + multf(i) * dm;
        }
        acc
    };

    let mut cur = total_cost(&centers);
    let p = swap_size.min(k_eff);
    'improve: loop {
        // Enumerate p-subsets of current centers and p-subsets of candidates
        // in index order; apply the first strict improvement.
        let out_sets = combinations(centers.len(), p);
        for outs in &out_sets {
            let in_pool: Vec<usize> = (0..l).filter(|i| !centers.contains(i)).collect();
            if in_pool.len() < p {
                continue;
            }
            for ins in &combinations(in_pool.len(), p) {
                let mut trial = centers.clone();
                for (slot, &o) in outs.iter().enumerate() {
                    trial[o] = in_pool[ins[slot]];
                }
                trial.sort_unstable();
                let c = total_cost(&trial);
                if c < cur {
                    centers = trial;
                    cur = c;
                    continue 'improve;
                }
            }
        }
        break;
    }

    let center_ids: Vec<PointId> = centers.iter().map(|&i| reps[i].0).collect();
    let clustering = assign_to_centers(store, s, &center_ids);
    Ok((
        CenterSet {
            centers: center_ids,
            k,
        },
        clustering,
    ))
}

fn combinations(n: usize, p: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::new();
    fn rec(n: usize, p: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == p {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(n, p, i + 1, cur, out);
            cur.pop();
        }
    }
    rec(n, p, 0, &mut cur, &mut out);
    out
}

/// Smallest `t <= k_max` whose exact t-median cost is at most `budget`,
/// or `None` when even `k_max` labels cannot reach it.
pub fn min_labels_within_budget<S: Scalar>(
    store: &PointStore<S>,
    s: &[PointId],
    budget: S,
    k_max: usize,
    cap: u64,
) -> Result<Option<usize>, SolverError> {
    for t in 1..=k_max {
        let (_, clustering) = exact_kmedian(store, s, t, cap)?;
        if le_tol(clustering.cost, budget) {
            return Ok(Some(t));
        }
    }
    Ok(None)
}

/// Ratio of the centers-restricted optimum to the optimum over the clients
/// plus a regular grid spanning their bounding box (`grid_per_dim + 1`
/// samples per axis). The restricted optimum never loses more than a factor
/// of 2 against arbitrary centers, which this probes empirically.
pub fn medoid_factor_check<S: Scalar>(
    store: &PointStore<S>,
    s: &[PointId],
    k: usize,
    grid_per_dim: usize,
    cap: u64,
) -> Result<S, SolverError> {
    if store.kind() == MetricKind::Matrix {
        return Err(SolverError::NotEuclidean);
    }
    if s.is_empty() {
        return Err(SolverError::EmptySet);
    }
    let (_, medoid) = exact_kmedian(store, s, k, cap)?;

    let dim = store.dim();
    let reps = dedup_clients(store, s);
    let mut lo = vec![S::infinity(); dim];
    let mut hi = vec![S::neg_infinity(); dim];
    for &(p, _) in &reps {
        for (d, &c) in store.coords_of(p).iter().enumerate() {
            if c < lo[d] {
                lo[d] = c;
            }
            if c > hi[d] {
                hi[d] = c;
            }
        }
    }
    // Candidates: the clients themselves plus the grid.
    let mut candidates: Vec<Vec<S>> = reps
        .iter()
        .map(|&(p, _)| store.coords_of(p).to_vec())
        .collect();
    let steps = grid_per_dim.max(1);
    let mut cursor = vec![0usize; dim];
    loop {
        let pt: Vec<S> = (0..dim)
            .map(|d| {
                let f = S::from_usize(cursor[d]).unwrap() / S::from_usize(steps).unwrap();
                lo[d] + (hi[d] - lo[d]) * f
            })
            .collect();
        candidates.push(pt);
        let mut d = 0;
        loop {
            if d == dim {
                break;
            }
            cursor[d] += 1;
            if cursor[d] <= steps {
                break;
            }
            cursor[d] = 0;
            d += 1;
        }
        if d == dim {
            break;
        }
    }

    let cdist = |ci: usize, qi: usize| -> S {
        let a = store.coords_of(reps[ci].0);
        let b = &candidates[qi];
        match store.kind() {
            MetricKind::L1 => {
                let mut acc = S::zero();
                for d in 0..dim {
                    acc = acc + (a[d] - b[d]).abs();
                }
                acc
            }
            _ => {
                let mut acc = S::zero();
                for d in 0..dim {
                    let t = a[d] - b[d];
                    acc = acc + t * t;
                }
                acc.sqrt()
            }
        }
    };

    let k_eff = k.min(reps.len());
    let subsets = binomial(candidates.len(), k_eff);
    if subsets > cap as u128 {
        return Err(SolverError::CapExceeded {
            locations: candidates.len(),
            k: k_eff,
            subsets,
            cap,
        });
    }
    // Exhaustive over candidate subsets; clients stay the deduped reps.
    let mut best = S::infinity();
    let mut chosen: Vec<usize> = Vec::new();
    fn rec<S: Scalar>(
        nc: usize,
        k_eff: usize,
        start: usize,
        chosen: &mut Vec<usize>,
        dmin: &[S],
        reps: &[(PointId, u32)],
        cdist: &dyn Fn(usize, usize) -> S,
        best: &mut S,
    ) {
        if chosen.len() == k_eff {
            let mut c = S::zero();
            for (i, &(_, m)) in reps.iter().enumerate() {
                c = c + S::from_u32(m).unwrap() * dmin[i];
            }
            if c < *best {
                *best = c;
            }
            return;
        }
        let remaining = k_eff - chosen.len();
        for cand in start..=(nc - remaining) {
            let mut nd = dmin.to_vec();
            for i in 0..reps.len() {
                let d = cdist(i, cand);
                if d < nd[i] {
                    nd[i] = d;
                }
            }
            chosen.push(cand);
            rec(nc, k_eff, cand + 1, chosen, &nd, reps, cdist, best);
            chosen.pop();
        }
    }
    let dmin = vec![S::infinity(); reps.len()];
    rec(
        candidates.len(),
        k_eff,
        0,
        &mut chosen,
        &dmin,
        &reps,
        &cdist,
        &mut best,
    );

    if best == S::zero() {
        return Ok(S::one());
    }
    Ok(medoid.cost / best)
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

    fn ids(n: usize) -> Vec<PointId> {
        (0..n as u32).map(PointId).collect()
    }

    #[test]
    fn cost_examples() {
        let s = line_store(&[0.0, 1.0, 5.0]);
        assert_eq!(cost(&s, &[PointId(0)], PointId(0)), 0.0);
        assert_eq!(cost(&s, &ids(3), PointId(1)), 1.0 + 0.0 + 4.0);
        assert_eq!(cost(&s, &[], PointId(0)), 0.0);
    }

    /// Flat enumeration over point subsets, no dedup: the independent oracle.
    fn brute_force_kmedian(store: &PointStore<f64>, s: &[PointId], k: usize) -> f64 {
        let n = s.len();
        let k = k.min(n);
        let mut best = f64::INFINITY;
        let combos = combinations(n, k);
        for combo in combos {
            let centers: Vec<PointId> = combo.iter().map(|&i| s[i]).collect();
            let mut c = 0.0;
            for &p in s {
                let mut dm = f64::INFINITY;
                for &q in &centers {
                    dm = dm.min(store.dist(p, q));
                }
                c += dm;
            }
            if c < best {
                best = c;
            }
        }
        best
    }

    #[test]
    fn exact_line_examples() {
        let s = line_store(&[0.0, 1.0, 5.0]);
        let (cs, cl) = exact_kmedian(&s, &ids(3), 2, 1_000_000).unwrap();
        assert_eq!(cl.cost, 1.0);
        assert_eq!(cs.centers, vec![PointId(0), PointId(2)]); // lex tie-break over {0,5} vs {1,5}

        let s = line_store(&[0.0, 4.0, 10.0]);
        let (cs, cl) = exact_kmedian(&s, &ids(3), 1, 1_000_000).unwrap();
        assert_eq!(cs.centers, vec![PointId(1)]);
        assert_eq!(cl.cost, 10.0);
    }

    #[test]
    fn k_at_least_n_is_free() {
        let s = line_store(&[3.0, -2.0, 7.0]);
        let (_, cl) = exact_kmedian(&s, &ids(3), 5, 1_000_000).unwrap();
        assert_eq!(cl.cost, 0.0);
    }

    #[test]
    fn exact_matches_brute_force_random() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for trial in 0..40 {
            let n = rng.gen_range(2..10);
            let k = rng.gen_range(1..4usize);
            let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let s = line_store(&xs);
            let (_, cl) = exact_kmedian(&s, &ids(n), k, 1_000_000).unwrap();
            let bf = brute_force_kmedian(&s, &ids(n), k);
            assert!(
                (cl.cost - bf).abs() < 1e-9,
                "trial {trial}: {} vs {}",
                cl.cost,
                bf
            );
        }
    }

    #[test]
    fn exact_nonincreasing_in_k() {
        let s = line_store(&[0.0, 2.0, 3.5, 9.0, -4.0]);
        let mut prev = f64::INFINITY;
        for k in 1..=5 {
            let (_, cl) = exact_kmedian(&s, &ids(5), k, 1_000_000).unwrap();
            assert!(cl.cost <= prev + 1e-12);
            prev = cl.cost;
        }
    }

    #[test]
    fn cap_exceeded_reported() {
        let s = line_store(&(0..30).map(|i| i as f64).collect::<Vec<_>>());
        let err = exact_kmedian(&s, &ids(30), 10, 100).unwrap_err();
        assert!(matches!(err, SolverError::CapExceeded { .. }));
    }

    #[test]
    fn local_search_never_beats_exact_and_within_factor_five() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..60 {
            let n = rng.gen_range(2..12);
            let k = rng.gen_range(1..4usize);
            let xs: Vec<f64> = (0..n).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let s = line_store(&xs);
            let (_, ex) = exact_kmedian(&s, &ids(n), k, 1_000_000).unwrap();
            let (_, ls) = local_search_kmedian(&s, &ids(n), k, 1).unwrap();
            assert!(ls.cost >= ex.cost - 1e-9);
            assert!(
                ls.cost <= 5.0 * ex.cost + 1e-9,
                "ls {} exact {}",
                ls.cost,
                ex.cost
            );
        }
    }

    #[test]
    fn local_search_zero_cost_when_k_covers() {
        let s = line_store(&[1.0, 2.0, 2.0]);
        let (_, cl) = local_search_kmedian(&s, &ids(3), 2, 1).unwrap();
        assert_eq!(cl.cost, 0.0);
    }

    #[test]
    fn figure_one_layout_costs() {
        // {-2, 1 x (alpha+1), 0 x alpha} with alpha = 5, k = 2: optimum 2.
        let alpha = 5;
        let mut xs = vec![-2.0];
        xs.extend(std::iter::repeat(1.0).take(alpha + 1));
        xs.extend(std::iter::repeat(0.0).take(alpha));
        let s = line_store(&xs);
        let (_, ex) = exact_kmedian(&s, &ids(xs.len()), 2, 1_000_000).unwrap();
        assert_eq!(ex.cost, 2.0);
        let (_, ls) = local_search_kmedian(&s, &ids(xs.len()), 2, 1).unwrap();
        assert!(ls.cost <= 5.0 * 2.0 + 1e-9);
    }

    #[test]
    fn min_labels_examples() {
        let s = line_store(&[-2.0, 1.0]);
        assert_eq!(
            min_labels_within_budget(&s, &ids(2), 2.0, 4, 1_000_000).unwrap(),
            Some(2)
        );
        // single medoid suffices when B covers it
        let s = line_store(&[0.0, 1.0]);
        assert_eq!(
            min_labels_within_budget(&s, &ids(2), 1.0, 4, 1_000_000).unwrap(),
            Some(1)
        );
        // infeasible at k_max
        let s = line_store(&[0.0, 100.0, 200.0]);
        assert_eq!(
            min_labels_within_budget(&s, &ids(3), 1.0, 2, 1_000_000).unwrap(),
            None
        );
    }

    #[test]
    fn min_labels_nonincreasing_in_budget() {
        let s = line_store(&[0.0, 3.0, 10.0, 11.0]);
        let mut prev = usize::MAX;
        for b in [0.5, 1.5, 4.0, 30.0] {
            let t = min_labels_within_budget(&s, &ids(4), b, 4, 1_000_000)
                .unwrap()
                .unwrap();
            assert!(t <= prev);
            prev = t;
        }
    }

    #[test]
    fn clustering_cost_consistent_with_assignment() {
        let s = line_store(&[0.0, 1.0, 5.0, 6.0]);
        let (_, cl) = exact_kmedian(&s, &ids(4), 2, 1_000_000).unwrap();
        let mut recomputed = 0.0;
        for &(p, c) in &cl.assignment {
            recomputed += s.dist(p, c);
        }
        assert_eq!(recomputed, cl.cost);
    }

    #[test]
    fn medoid_factor_symmetric_pair() {
        // {-1, +1}, k = 1: medoid cost 2, midpoint also 2 -> ratio 1.
        let s = line_store(&[-1.0, 1.0]);
        let r = medoid_factor_check(&s, &ids(2), 1, 8, 1_000_000).unwrap();
        assert!((r - 1.0).abs() < 1e-9);
    }

    #[test]
    fn medoid_factor_collinear_odd() {
        let s = line_store(&[0.0, 1.0, 2.0]);
        let r = medoid_factor_check(&s, &ids(3), 1, 8, 1_000_000).unwrap();
        assert!((r - 1.0).abs() < 1e-9);
    }

    #[test]
    fn medoid_factor_bounded_by_two_random() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        for _ in 0..25 {
            let n = rng.gen_range(2..8);
            let mut st = PointStore::<f64>::new_euclidean(MetricKind::L2, 2);
            for _ in 0..n {
                st.push(&[rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)])
                    .unwrap();
            }
            let k = rng.gen_range(1..3usize);
            let r = medoid_factor_check(&st, &ids(n), k, 6, 10_000_000).unwrap();
            assert!(r <= 2.0 + 1e-9, "ratio {r}");
            assert!(r >= 1.0 - 1e-9);
        }
    }

    #[test]
    fn f32_exact_solver() {
        let mut st = PointStore::<f32>::new_euclidean(MetricKind::L2, 1);
        for x in [0.0f32, 4.0, 10.0] {
            st.push(&[x]).unwrap();
        }
        let (_, cl) = exact_kmedian(&st, &ids(3), 1, 1000).unwrap();
        assert_eq!(cl.cost, 10.0);
    }
}
