//! End-to-end engine behavior on the structured instances.

use kmedian_online::engine::{
    run_on_coords, run_on_matrix, Engine, EngineConfig, EngineError, Geometry, SolverMode,
};
use kmedian_online::instances::{gen_beta_halving, gen_fig1, gen_label_conflict};
use kmedian_online::metric::MetricKind;
use kmedian_online::separation::BetaSchedule;
use kmedian_online::trace::{parse_trace, replay_trace, trace_to_string, PhaseEvent};

#[test]
fn single_point_stream() {
    let cfg = EngineConfig::new(3, 1.0);
    let res = run_on_coords(cfg, MetricKind::L2, 1, &[vec![5.0]]).unwrap();
    assert_eq!(res.labels, vec![1]);
    assert_eq!(res.summary.final_cost, 0.0);
    assert_eq!(res.summary.pivot_count, 1);
}

#[test]
fn duplicate_and_nearby_points_share_the_label() {
    let cfg = EngineConfig::new(2, 1.0);
    let pts = vec![vec![0.0], vec![0.0], vec![0.5]];
    let res = run_on_coords(cfg, MetricKind::L2, 1, &pts).unwrap();
    assert_eq!(res.labels, vec![1, 1, 1]);
    assert!(!res.summary.violated);
}

#[test]
fn far_singleton_triggers_add_case_2() {
    // k = 2: beta_2 = 8 * 3^2 = 72. A point at distance >= 72 * B with
    // weight 1 is well-separated from the lone pivot and becomes p_2.
    let cfg = EngineConfig::new(2, 1.0);
    let pts = vec![vec![0.0], vec![100.0]];
    let res = run_on_coords(cfg, MetricKind::L2, 1, &pts).unwrap();
    assert_eq!(res.labels, vec![1, 2]);
    assert_eq!(res.summary.add_counts, [0, 1, 0, 0]);
    assert_eq!(res.summary.pivot_count, 2);
}

#[test]
fn tie_between_pivots_takes_smaller_label() {
    // B = 2.5, k = 2: beta_2 * B = 180, beta_3 * B = 60. Four points at 0,
    // two at 100 (the second one fires the Add), then the midpoint: it is
    // 60-attached to both pivots, equidistant, and must take label 1.
    let cfg = EngineConfig::new(2, 2.5);
    let mut pts = vec![vec![0.0]; 4];
    pts.push(vec![100.0]);
    pts.push(vec![100.0]);
    pts.push(vec![50.0]);
    let res = run_on_coords(cfg, MetricKind::L2, 1, &pts).unwrap();
    assert_eq!(res.labels, vec![1, 1, 1, 1, 1, 2, 1]);
}

#[test]
fn fig1_trace_matches_the_narrative() {
    // With B = 2, k = 2 (beta_2 = 72, threshold 144): the origin's weight is
    // m + 4 and the 1-location's weight caps the pair product, so the
    // exchange fires at the 140th origin arrival and relocates the pivots to
    // 1 and 0. Cost afterwards is flat in alpha.
    let alpha = 200;
    let inst = gen_fig1(alpha);
    let cfg = EngineConfig::new(inst.k, inst.budget);
    let res = run_on_coords(cfg, inst.kind, inst.dim, &inst.points).unwrap();
    assert!(!res.summary.violated);
    assert_eq!(res.summary.pivot_count, 2);

    let exchanges: Vec<&PhaseEvent> = res
        .events
        .iter()
        .filter(|e| matches!(e, PhaseEvent::Exchange { .. }))
        .collect();
    assert_eq!(exchanges.len(), 1);
    match exchanges[0] {
        PhaseEvent::Exchange {
            i,
            case,
            x_alpha,
            x_gamma,
            j,
            pivots_after,
            ..
        } => {
            // Arrival = 1 (at -2) + (alpha + 1) (at 1) + 140th origin point.
            assert_eq!(*i, 1 + (alpha + 1) + 140);
            assert_eq!(*j, 1);
            assert_eq!(*case, 3); // c_1 is the 1-location rep = x_alpha itself
            assert_eq!(*x_alpha, 1); // first point at location 1
            assert_eq!(*x_gamma, (alpha + 2) as u32); // first origin point
                                                      // Pivot set afterwards: location 1 and the origin.
            assert_eq!(pivots_after.len(), 2);
            assert_eq!(pivots_after[0], 1);
            assert_eq!(pivots_after[1], (alpha + 2) as u32);
        }
        _ => unreachable!(),
    }

    // Post-split arrivals at the origin take label 2; cost flat in alpha.
    let res_big = run_on_coords(
        EngineConfig::new(2, 2.0),
        MetricKind::L2,
        1,
        &gen_fig1(500).points,
    )
    .unwrap();
    assert_eq!(res.summary.final_cost, res_big.summary.final_cost);
    assert_eq!(res.summary.final_cost, 142.0);
}

#[test]
fn fig1_small_alpha_never_splits() {
    // alpha = 100 caps the 1-location weight at 105 < 144, so no operation
    // ever fires and the whole stream keeps label 1.
    let inst = gen_fig1(100);
    let cfg = EngineConfig::new(inst.k, inst.budget);
    let res = run_on_coords(cfg, inst.kind, inst.dim, &inst.points).unwrap();
    assert_eq!(res.summary.pivot_count, 1);
    assert!(res.labels.iter().all(|&l| l == 1));
    assert_eq!(res.summary.final_cost, 103.0);
}

#[test]
fn beta_halving_standard_schedule_splits() {
    let inst = gen_beta_halving(10);
    let cfg = EngineConfig::new(inst.k, inst.budget);
    let res = run_on_coords(cfg, inst.kind, inst.dim, &inst.points).unwrap();
    assert!(!res.summary.violated);
    assert_eq!(res.summary.pivot_count, 3);
    // Probe mass pays only the 2-epsilon gap.
    assert!(
        res.summary.final_cost <= 10.0 * 0.02 + 1e-9,
        "cost {}",
        res.summary.final_cost
    );
}

#[test]
fn beta_halving_prefix_of_two_points_uses_two_labels() {
    let inst = gen_beta_halving(1);
    let cfg = EngineConfig::new(inst.k, inst.budget);
    let res = run_on_coords(cfg, inst.kind, inst.dim, &inst.points[..2].to_vec()).unwrap();
    assert_eq!(res.labels, vec![1, 2]);
    assert_eq!(res.summary.final_cost, 0.0);
}

#[test]
fn beta_halving_slow_schedule_stays_stuck() {
    // A 0.9-ratio schedule keeps both probe locations attached to both
    // weight-1 pivots forever: no third label, and the stuck mass pays the
    // half-span distance while the standard schedule pays 2 epsilon per
    // duplicate.
    let inst = gen_beta_halving(10);
    let mut cfg = EngineConfig::new(inst.k, inst.budget);
    cfg.beta_schedule = BetaSchedule::Geometric { ratio: 0.9 };
    let res = run_on_coords(cfg, inst.kind, inst.dim, &inst.points).unwrap();
    assert!(
        res.summary.pivot_count <= 2,
        "pivots {}",
        res.summary.pivot_count
    );

    let std_res = run_on_coords(
        EngineConfig::new(inst.k, inst.budget),
        inst.kind,
        inst.dim,
        &inst.points,
    )
    .unwrap();
    assert!(res.summary.final_cost >= 100.0 * std_res.summary.final_cost);
}

#[test]
fn label_conflict_mints_two_labels_in_one_operation() {
    let inst = gen_label_conflict();
    let cfg = EngineConfig::new(inst.k, inst.budget);
    let res = run_on_coords(cfg, inst.kind, inst.dim, &inst.points).unwrap();
    assert!(!res.summary.violated);
    assert!(res.summary.pivot_count <= inst.k);

    let two_mints: Vec<(&str, usize, usize)> = res
        .events
        .iter()
        .filter_map(|e| match e {
            PhaseEvent::Add {
                case: 4,
                t_before,
                t_after,
                ..
            } => Some(("add", *t_before, *t_after)),
            PhaseEvent::Exchange {
                case: 5,
                t_before,
                t_after,
                ..
            } => Some(("exchange", *t_before, *t_after)),
            _ => None,
        })
        .collect();
    assert_eq!(two_mints.len(), 1, "events: {:#?}", res.events);
    let (kind, t_before, t_after) = two_mints[0];
    assert_eq!(kind, "exchange");
    assert_eq!(t_after, t_before + 2);
    assert_eq!(res.summary.exchange_counts[4], 1);
}

#[test]
fn dishonest_budget_aborts_with_violation() {
    // Three far-apart heavy locations but k = 2 and a budget far below the
    // optimum: the engine must refuse rather than silently degrade.
    let mut pts: Vec<Vec<f64>> = Vec::new();
    for loc in [0.0, 1000.0, 2000.0] {
        for _ in 0..80 {
            pts.push(vec![loc]);
        }
    }
    let cfg = EngineConfig::new(2, 1.0);
    let res = run_on_coords(cfg, MetricKind::L2, 1, &pts).unwrap();
    assert!(res.summary.violated);
    assert!(res
        .events
        .iter()
        .any(|e| matches!(e, PhaseEvent::BudgetViolation { .. })));
}

#[test]
fn trace_replay_reconstructs_final_state() {
    for inst in [gen_fig1(150), gen_beta_halving(6), gen_label_conflict()] {
        let cfg = EngineConfig::new(inst.k, inst.budget);
        let res = run_on_coords(cfg, inst.kind, inst.dim, &inst.points).unwrap();
        let replayed = replay_trace(&res.events).unwrap();
        let pivots: Vec<u32> = res.pivots.iter().map(|p| p.0).collect();
        assert_eq!(replayed.pivots, pivots);
        let labels: Vec<(u32, usize)> = res
            .labels
            .iter()
            .enumerate()
            .map(|(p, &l)| (p as u32, l))
            .collect();
        assert_eq!(replayed.labels, labels);
        assert_eq!(replayed.violated, res.summary.violated);
    }
}

#[test]
fn traces_are_byte_identical_across_runs() {
    let inst = gen_label_conflict();
    let run = || {
        let cfg = EngineConfig::new(inst.k, inst.budget);
        let res = run_on_coords(cfg, inst.kind, inst.dim, &inst.points).unwrap();
        trace_to_string(&res.events)
    };
    let a = run();
    let b = run();
    assert_eq!(a, b);
    assert_eq!(
        parse_trace(&a).unwrap().len(),
        parse_trace(&b).unwrap().len()
    );
}

#[test]
fn matrix_geometry_runs() {
    // 4 points, two tight pairs far apart; k = 2, B = 1.
    let m = vec![
        vec![0.0, 0.5, 500.0, 500.0],
        vec![0.5, 0.0, 499.5, 499.5],
        vec![500.0, 499.5, 0.0, 0.5],
        vec![500.0, 499.5, 0.5, 0.0],
    ];
    let cfg = EngineConfig::new(2, 1.0);
    let res = run_on_matrix(cfg, m).unwrap();
    assert_eq!(res.labels, vec![1, 1, 2, 2]);
}

#[test]
fn poisoned_engine_rejects_further_points() {
    let mut pts: Vec<Vec<f64>> = Vec::new();
    for loc in [0.0, 1000.0, 2000.0] {
        for _ in 0..80 {
            pts.push(vec![loc]);
        }
    }
    let mut eng = Engine::new(
        EngineConfig::new(2, 1.0),
        Geometry::Euclidean {
            kind: MetricKind::L2,
            dim: 1,
        },
    )
    .unwrap();
    let mut violated = false;
    for p in &pts {
        match eng.step_coords(p) {
            Ok(_) => {}
            Err(EngineError::BudgetViolation { .. }) => {
                violated = true;
                break;
            }
            Err(e) => panic!("unexpected: {e}"),
        }
    }
    assert!(violated);
    assert!(matches!(
        eng.step_coords(&[0.0]),
        Err(EngineError::Poisoned)
    ));
}

#[test]
fn approx_mode_inflates_budget_and_stays_feasible() {
    let inst = gen_fig1(150);
    let cfg = EngineConfig::new(inst.k, inst.budget).with_solver(SolverMode::Approx);
    let res = run_on_coords(cfg, inst.kind, inst.dim, &inst.points).unwrap();
    assert_eq!(res.summary.b_eff, 10.0);
    assert!(!res.summary.violated);
    assert!(res.summary.pivot_count <= inst.k);
}
