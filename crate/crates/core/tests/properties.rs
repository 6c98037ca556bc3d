//! Property tests for the invariants the modules advertise.

use proptest::prelude::*;

use kmedian_online::metric::{MetricKind, PointId, PointStore};
use kmedian_online::offline::{exact_kmedian, local_search_kmedian};
use kmedian_online::scalar::Real;
use kmedian_online::separation::{beta, is_well_separated};
use kmedian_online::weights::{natural_weight, WeightIndex};

fn line_store(xs: &[Real]) -> PointStore<Real> {
    let mut s = PointStore::new_euclidean(MetricKind::L2, 1);
    for &x in xs {
        s.push(&[x]).unwrap();
    }
    s
}

fn coords_strategy(max_n: usize) -> impl Strategy<Value = Vec<Real>> {
    prop::collection::vec(
        prop_oneof![
            // quantized values produce plenty of exact duplicates
            (-20i32..20).prop_map(|v| v as Real / 2.0),
            (-100.0f64..100.0).prop_map(|v| v),
        ],
        1..=max_n,
    )
}

proptest! {
    /// Incremental natural weights equal the from-scratch definition at
    /// every prefix, for every point.
    #[test]
    fn incremental_weights_match_scratch(xs in coords_strategy(40), b in 0.1f64..20.0) {
        let store = line_store(&xs);
        let mut idx = WeightIndex::new(b).unwrap();
        for i in 0..xs.len() {
            idx.update_on_arrival(&store, PointId(i as u32)).unwrap();
            for j in 0..=i {
                let inc = idx.weight(&store, PointId(j as u32)).unwrap();
                let scratch = natural_weight(&store, PointId(j as u32), i + 1, b).unwrap();
                prop_assert_eq!(inc, scratch, "point {} at prefix {}", j, i + 1);
            }
        }
    }

    /// Weights never decrease as the prefix grows.
    #[test]
    fn weights_are_monotone(xs in coords_strategy(40), b in 0.1f64..20.0) {
        let store = line_store(&xs);
        let mut idx = WeightIndex::new(b).unwrap();
        let mut prev: Vec<u32> = Vec::new();
        for i in 0..xs.len() {
            idx.update_on_arrival(&store, PointId(i as u32)).unwrap();
            for (j, &w_old) in prev.iter().enumerate() {
                let w_new = idx.weight(&store, PointId(j as u32)).unwrap();
                prop_assert!(w_new >= w_old);
                // one arrival adds one distance: the weight grows by at most 1
                prop_assert!(w_new <= w_old + 1);
            }
            prev = (0..=i).map(|j| idx.weight(&store, PointId(j as u32)).unwrap()).collect();
        }
    }

    /// A point's weight counts itself plus every exact duplicate (their
    /// inclusion is free).
    #[test]
    fn weight_at_least_duplicates(xs in coords_strategy(30), b in 0.1f64..10.0) {
        let store = line_store(&xs);
        let n = xs.len();
        for j in 0..n {
            let dups = xs.iter().filter(|&&v| v == xs[j]).count() as u32;
            let w = natural_weight(&store, PointId(j as u32), n, b).unwrap();
            prop_assert!(w >= dups);
        }
    }

    /// Separation is symmetric and monotone in both weights and beta.
    #[test]
    fn separation_monotonicity(
        wx in 1u32..50, wy in 1u32..50, d in 0.0f64..100.0,
        beta_v in 1.0f64..30.0, b in 0.1f64..5.0
    ) {
        let sep = is_well_separated(wx, wy, d, beta_v, b);
        prop_assert_eq!(sep, is_well_separated(wy, wx, d, beta_v, b));
        if sep {
            prop_assert!(is_well_separated(wx + 1, wy, d, beta_v, b));
            prop_assert!(is_well_separated(wx, wy + 1, d, beta_v, b));
            prop_assert!(is_well_separated(wx, wy, d, beta_v / 2.0, b));
        }
    }

    /// The schedule drops by exactly one third per phase.
    #[test]
    fn beta_thirds(k in 1usize..=20) {
        for t in 1..=(k + 1) {
            let hi: Real = beta(t, k).unwrap();
            let lo: Real = beta(t + 1, k).unwrap();
            prop_assert_eq!(hi, 3.0 * lo);
        }
    }

    /// Exact cost is a lower bound for local search, within its factor.
    #[test]
    fn local_search_sandwich(xs in coords_strategy(10), k in 1usize..=3) {
        let store = line_store(&xs);
        let ids: Vec<PointId> = (0..xs.len() as u32).map(PointId).collect();
        let (_, ex) = exact_kmedian(&store, &ids, k, 1_000_000).unwrap();
        let (_, ls) = local_search_kmedian(&store, &ids, k, 1).unwrap();
        prop_assert!(ls.cost >= ex.cost - 1e-9);
        prop_assert!(ls.cost <= 5.0 * ex.cost + 1e-9);
    }

    /// Exact cost never increases with k.
    #[test]
    fn exact_cost_nonincreasing_in_k(xs in coords_strategy(9)) {
        let store = line_store(&xs);
        let ids: Vec<PointId> = (0..xs.len() as u32).map(PointId).collect();
        let mut prev = Real::INFINITY;
        for k in 1..=xs.len().min(4) {
            let (_, cl) = exact_kmedian(&store, &ids, k, 1_000_000).unwrap();
            prop_assert!(cl.cost <= prev + 1e-12);
            prev = cl.cost;
        }
    }

    /// Stream files survive a write/parse round trip.
    #[test]
    fn stream_round_trip(xs in coords_strategy(25)) {
        use kmedian_online::io::{parse_stream, write_stream, StreamFile, StreamPoint};
        let file = StreamFile {
            meta: None,
            points: xs
                .iter()
                .enumerate()
                .map(|(i, &x)| StreamPoint { id: i as u32, coords: Some(vec![x]) })
                .collect(),
        };
        let text = write_stream(&file);
        prop_assert_eq!(parse_stream(&text).unwrap(), file);
    }
}
