//! Post-hoc verification of engine traces.
//!
//! Every check here is computed from `(stream, trace, k, B_eff)` alone: the
//! auditor replays the arrivals, maintains its own natural weights, and
//! re-derives every predicate from the definitions. The trace's weight
//! witnesses and offline-center assignments are treated as claims to verify,
//! not as ground truth; only the offline centers themselves (`y`) are taken
//! from the trace, which removes solver nondeterminism from verification.
//!
//! Sections are either *structural* (they must hold on any engine trace, no
//! matter how bad the budget guess was) or *premise-gated* (they are
//! consequences of `OPT <= B`, so they are only applicable when the caller
//! supplies an exact optimum within the effective budget).

use serde::Serialize;
use thiserror::Error;

use crate::metric::{LocId, PointId, PointStore};
use crate::offline;
use crate::scalar::{ge_tol, le_tol, Real};
use crate::separation::{beta, is_attached, is_well_separated, BetaSchedule};
use crate::trace::PhaseEvent;
use crate::weights::{Weight, WeightIndex, WeightSnapshot};

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("trace has no meta record")]
    MissingMeta,
    #[error("trace and stream disagree: {0}")]
    StreamMismatch(String),
    #[error("weights: {0}")]
    Weights(#[from] crate::weights::WeightError),
    #[error("solver: {0}")]
    Solver(#[from] offline::SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

/// One verified statement, with enough arithmetic in `detail` to re-check it
/// from the trace alone.
#[derive(Debug, Clone, Serialize)]
pub struct Verdict {
    pub section: &'static str,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arrival: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phase: Option<usize>,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct AuditReport {
    pub k: usize,
    pub b_eff: Real,
    pub n: usize,
    pub premise_checked: bool,
    pub verdicts: Vec<Verdict>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.status != Status::Fail)
    }

    pub fn failures(&self) -> Vec<&Verdict> {
        self.verdicts
            .iter()
            .filter(|v| v.status == Status::Fail)
            .collect()
    }

    fn push(
        &mut self,
        section: &'static str,
        status: Status,
        arrival: Option<usize>,
        phase: Option<usize>,
        detail: String,
    ) {
        self.verdicts.push(Verdict {
            section,
            status,
            arrival,
            phase,
            detail,
        });
    }

    fn pass(&mut self, section: &'static str, arrival: Option<usize>, detail: String) {
        self.push(section, Status::Pass, arrival, None, detail);
    }

    fn fail(&mut self, section: &'static str, arrival: Option<usize>, detail: String) {
        self.push(section, Status::Fail, arrival, None, detail);
    }
}

// Section names.
pub const SEC_CHAIN: &str = "event_chain";
pub const SEC_QUIESCENCE: &str = "operation_quiescence";
pub const SEC_GREEDY_LABEL: &str = "greedy_label_rule";
pub const SEC_WELL_SEP: &str = "pivot_well_separation";
pub const SEC_CENTER_RULE: &str = "estimated_center_rule";
pub const SEC_OP_CONDITIONS: &str = "operation_conditions";
pub const SEC_WITNESS: &str = "weight_witnesses";
pub const SEC_OFFLINE_ATTACH: &str = "offline_center_attachment";
pub const SEC_CENTER_ATTACH: &str = "estimated_center_attachment";
pub const SEC_INNER_OPTIONS: &str = "inner_step_center_options";
pub const SEC_CENTER_TRACKING: &str = "prior_center_tracking";
pub const SEC_FAR_POINTS: &str = "far_point_bounds";
pub const SEC_CLUSTER_SIZE: &str = "cluster_size_bound";
pub const SEC_PHASE_COST: &str = "per_phase_cost_bound";
pub const SEC_TOTAL_COST: &str = "total_cost_bound";
pub const SEC_FEASIBILITY: &str = "feasibility";

/// `g(k) = beta_1 (2k^3 + 3k^2 + 5k + 1) + 2k + 4`, the per-phase cost
/// constant; the total bound is `k^2 g(k) B`.
pub fn cost_constant(k: usize) -> Real {
    let b1: Real = beta(1, k).expect("k >= 1");
    let kf = k as Real;
    b1 * (2.0 * kf.powi(3) + 3.0 * kf.powi(2) + 5.0 * kf + 1.0) + 2.0 * kf + 4.0
}

struct EntryRec {
    arrival: usize,
    t_entry: usize,
    pivots_at_entry: Vec<PointId>,
    y: Vec<PointId>,
    y_pivot: Vec<usize>,
    centers: Vec<PointId>,
    w_prev: WeightSnapshot,
    landing_pivots: Vec<PointId>,
}

fn pid(v: u32) -> PointId {
    PointId(v)
}

fn pids(v: &[u32]) -> Vec<PointId> {
    v.iter().map(|&x| PointId(x)).collect()
}

/// Weighted product of a pair under a snapshot.
fn product(store: &PointStore<Real>, w: &WeightSnapshot, a: PointId, b: PointId) -> Real {
    (w.w(store, a).min(w.w(store, b)) as Real) * store.dist(a, b)
}

fn pair_separated(
    store: &PointStore<Real>,
    w: &WeightSnapshot,
    a: PointId,
    b: PointId,
    beta: Real,
    b_eff: Real,
) -> bool {
    is_well_separated(w.w(store, a), w.w(store, b), store.dist(a, b), beta, b_eff)
}

fn set_separated(
    store: &PointStore<Real>,
    w: &WeightSnapshot,
    pts: &[PointId],
    beta: Real,
    b_eff: Real,
) -> Option<(PointId, PointId)> {
    for i in 0..pts.len() {
        for j in (i + 1)..pts.len() {
            if !pair_separated(store, w, pts[i], pts[j], beta, b_eff) {
                return Some((pts[i], pts[j]));
            }
        }
    }
    None
}

/// Independent re-derivation of "some Add operation is applicable".
fn add_applicable(
    store: &PointStore<Real>,
    w: &WeightSnapshot,
    pivots: &[PointId],
    beta_next: Real,
    b_eff: Real,
) -> Option<PointId> {
    'locs: for li in 0..w.num_locs() {
        let loc = LocId(li as u32);
        let rep = store.loc_rep(loc);
        for &p in pivots {
            if is_attached(
                w.w_loc(loc),
                w.w(store, p),
                store.dist(rep, p),
                beta_next,
                b_eff,
            ) {
                continue 'locs;
            }
        }
        return Some(rep);
    }
    None
}

/// Independent re-derivation of "some Exchange operation is applicable".
fn exchange_applicable(
    store: &PointStore<Real>,
    w: &WeightSnapshot,
    pivots: &[PointId],
    beta_next: Real,
    b_eff: Real,
) -> Option<(PointId, PointId, usize)> {
    let t = pivots.len();
    for j in 1..=t {
        let others: Vec<PointId> = pivots
            .iter()
            .enumerate()
            .filter(|&(m, _)| m != j - 1)
            .map(|(_, &p)| p)
            .collect();
        if set_separated(store, w, &others, beta_next, b_eff).is_some() {
            continue;
        }
        let wp = w.w(store, pivots[j - 1]);
        let mut cands: Vec<PointId> = Vec::new();
        'locs: for li in 0..w.num_locs() {
            let loc = LocId(li as u32);
            let rep = store.loc_rep(loc);
            if w.w_loc(loc) < wp {
                continue;
            }
            if !is_attached(
                w.w_loc(loc),
                wp,
                store.dist(rep, pivots[j - 1]),
                beta_next,
                b_eff,
            ) {
                continue;
            }
            for &o in &others {
                if is_attached(
                    w.w_loc(loc),
                    w.w(store, o),
                    store.dist(rep, o),
                    beta_next,
                    b_eff,
                ) {
                    continue 'locs;
                }
            }
            cands.push(rep);
        }
        for a in 0..cands.len() {
            for g in (a + 1)..cands.len() {
                if pair_separated(store, w, cands[a], cands[g], beta_next, b_eff) {
                    return Some((cands[a], cands[g], j));
                }
            }
        }
    }
    None
}

/// Validity of a specific exchange triple (not necessarily the engine's
/// lexicographic pick; the operation is allowed to be an arbitrary
/// applicable one).
fn exchange_conditions_hold(
    store: &PointStore<Real>,
    w: &WeightSnapshot,
    pivots: &[PointId],
    x_alpha: PointId,
    x_gamma: PointId,
    j: usize,
    beta_next: Real,
    b_eff: Real,
) -> Result<(), String> {
    let p_j = pivots[j - 1];
    let wp = w.w(store, p_j);
    for (name, x) in [("alpha", x_alpha), ("gamma", x_gamma)] {
        if !is_attached(w.w(store, x), wp, store.dist(x, p_j), beta_next, b_eff) {
            return Err(format!("x_{name} not attached to pivot {j}"));
        }
        if w.w(store, x) < wp {
            return Err(format!("w(x_{name}) < w(p_{j})"));
        }
    }
    let mut group: Vec<PointId> = vec![x_alpha, x_gamma];
    group.extend(
        pivots
            .iter()
            .enumerate()
            .filter(|&(m, _)| m != j - 1)
            .map(|(_, &p)| p),
    );
    if let Some((a, b)) = set_separated(store, w, &group, beta_next, b_eff) {
        return Err(format!("exchange group pair ({a}, {b}) not well-separated"));
    }
    Ok(())
}

/// Full structural and bound-level audit of one trace against its stream.
///
/// `exact_opt` gates the premise-dependent sections: when it is known and at
/// most the effective budget, feasibility and the cost bounds are checked;
/// otherwise they are reported as skipped.
pub fn audit_trace(
    store: &PointStore<Real>,
    events: &[PhaseEvent],
    exact_opt: Option<Real>,
) -> Result<AuditReport, AuditError> {
    let (k, b_eff) = match events.first() {
        Some(PhaseEvent::Meta { k, b_eff, .. }) => (*k, *b_eff),
        _ => return Err(AuditError::MissingMeta),
    };
    let schedule = BetaSchedule::Standard;
    let beta_at = |t: usize| schedule.beta_at::<Real>(t, k);

    let n_labeled = events
        .iter()
        .filter(|e| matches!(e, PhaseEvent::Init { .. } | PhaseEvent::Label { .. }))
        .count();
    let violated = events
        .iter()
        .any(|e| matches!(e, PhaseEvent::BudgetViolation { .. }));
    let n_arrivals = events.iter().filter_map(|e| e.arrival()).max().unwrap_or(0);
    if n_arrivals > store.len() {
        return Err(AuditError::StreamMismatch(format!(
            "trace references arrival {n_arrivals} but stream has {} points",
            store.len()
        )));
    }
    // Every point id an event mentions must already have arrived; a forged
    // trace must fail cleanly, not crash the weight lookups below.
    for ev in events {
        let Some(i) = ev.arrival() else { continue };
        let mut ids: Vec<u32> = Vec::new();
        // Center computations read the pre-arrival snapshot, so everything
        // they mention must predate the arrival itself.
        let mut bound = i;
        match ev {
            PhaseEvent::Init { point, .. } | PhaseEvent::Label { point, .. } => ids.push(*point),
            PhaseEvent::EstimatedCenters {
                y,
                centers,
                pivots,
                wit,
                ..
            } => {
                bound = i - 1;
                ids.extend(y);
                ids.extend(centers);
                ids.extend(pivots);
                ids.extend(wit.iter().map(|w| w.point));
            }
            PhaseEvent::Add {
                x_alpha,
                pivots_before,
                pivots_after,
                wit,
                ..
            } => {
                ids.push(*x_alpha);
                ids.extend(pivots_before);
                ids.extend(pivots_after);
                ids.extend(wit.iter().map(|w| w.point));
            }
            PhaseEvent::Exchange {
                x_alpha,
                x_gamma,
                pivots_before,
                pivots_after,
                wit,
                ..
            } => {
                ids.push(*x_alpha);
                ids.push(*x_gamma);
                ids.extend(pivots_before);
                ids.extend(pivots_after);
                ids.extend(wit.iter().map(|w| w.point));
            }
            _ => {}
        }
        if let Some(&bad) = ids.iter().find(|&&p| p as usize >= bound) {
            return Err(AuditError::StreamMismatch(format!(
                "event at arrival {i} references point {bad}, which has not arrived"
            )));
        }
    }

    let premise = matches!(exact_opt, Some(o) if le_tol(o, b_eff));
    let mut report = AuditReport {
        k,
        b_eff,
        n: n_labeled,
        premise_checked: premise,
        verdicts: Vec::new(),
    };

    // Group events by arrival, preserving order.
    let mut by_arrival: Vec<Vec<&PhaseEvent>> = vec![Vec::new(); n_arrivals + 1];
    for ev in events.iter() {
        if let Some(i) = ev.arrival() {
            by_arrival[i].push(ev);
        }
    }

    let mut weights = WeightIndex::<Real>::new(b_eff)?;
    let mut pivots: Vec<PointId> = Vec::new();
    let mut centers: Vec<PointId> = Vec::new();
    let mut labels: Vec<(usize, usize)> = Vec::new(); // (arrival, label), index = point id
    let mut entries: Vec<EntryRec> = Vec::new();
    let mut sep_checks = 0usize;
    let mut quiescence_checks = 0usize;
    let mut label_checks = 0usize;
    let mut witness_checks = 0usize;
    let mut op_checks = 0usize;
    let mut inner_checks = 0usize;

    let check_witnesses = |report: &mut AuditReport,
                           store: &PointStore<Real>,
                           arrival: usize,
                           wit: &[crate::trace::WeightWitness],
                           w_prev: &WeightSnapshot,
                           w_cur: &WeightSnapshot,
                           count: &mut usize| {
        for ww in wit {
            *count += 1;
            let p = pid(ww.point);
            let expect_prev = if p.index() < w_prev.prefix_len() {
                Some(w_prev.w(store, p))
            } else {
                None
            };
            let expect_cur = w_cur.w(store, p);
            if expect_prev != ww.w_prev || expect_cur != ww.w_cur {
                report.fail(
                    SEC_WITNESS,
                    Some(arrival),
                    format!(
                        "point {}: trace says w_prev={:?}, w_cur={}; recomputed w_prev={:?}, w_cur={}",
                        ww.point, ww.w_prev, ww.w_cur, expect_prev, expect_cur
                    ),
                );
            }
        }
    };

    for arrival in 1..=n_arrivals {
        let x = pid((arrival - 1) as u32);
        let w_prev = weights.snapshot();
        weights.update_on_arrival(store, x)?;
        let w_cur = weights.snapshot();
        let evs = &by_arrival[arrival];

        if arrival == 1 {
            match evs.as_slice() {
                [PhaseEvent::Init { point, label, .. }] if *point == 0 && *label == 1 => {
                    pivots = vec![pid(0)];
                    labels.push((1, 1));
                }
                other => {
                    report.fail(
                        SEC_CHAIN,
                        Some(1),
                        format!("expected a lone init event, got {other:?}"),
                    );
                    return Ok(report);
                }
            }
            continue;
        }

        let has_entry = matches!(evs.first(), Some(PhaseEvent::EstimatedCenters { .. }));
        let applicable = add_applicable(store, &w_cur, &pivots, beta_at(pivots.len() + 1), b_eff)
            .is_some()
            || exchange_applicable(store, &w_cur, &pivots, beta_at(pivots.len() + 1), b_eff)
                .is_some();
        quiescence_checks += 1;
        if applicable && !has_entry {
            report.fail(
                SEC_QUIESCENCE,
                Some(arrival),
                "an Add or Exchange operation was applicable but the trace performs none"
                    .to_string(),
            );
        } else if !applicable && has_entry {
            report.fail(
                SEC_QUIESCENCE,
                Some(arrival),
                "estimated centers recomputed although no operation was applicable".to_string(),
            );
        }

        let mut idx = 0;
        let mut entry_t = pivots.len();
        if has_entry {
            if let PhaseEvent::EstimatedCenters {
                t,
                y,
                y_pivot,
                centers: ev_centers,
                pivots: ev_pivots,
                wit,
                ..
            } = evs[0]
            {
                idx = 1;
                entry_t = *t;
                if *t != pivots.len() || pids(ev_pivots) != pivots {
                    report.fail(
                        SEC_CHAIN,
                        Some(arrival),
                        format!(
                            "entry snapshot t={t}/{ev_pivots:?} vs audited {}/{pivots:?}",
                            pivots.len()
                        ),
                    );
                }
                check_witnesses(
                    &mut report,
                    store,
                    arrival,
                    wit,
                    &w_prev,
                    &w_cur,
                    &mut witness_checks,
                );
                // Re-derive the weighted-nearest pivot for every offline
                // center and the estimated-center choice.
                let ys = pids(y);
                let mut derived_assign = Vec::with_capacity(ys.len());
                for &yh in &ys {
                    let mut best_j = 1usize;
                    let mut best_v = Real::INFINITY;
                    for (jm1, &p) in pivots.iter().enumerate() {
                        let v = product(store, &w_prev, yh, p);
                        if v < best_v {
                            best_v = v;
                            best_j = jm1 + 1;
                        }
                    }
                    derived_assign.push(best_j);
                }
                if derived_assign != *y_pivot {
                    report.fail(
                        SEC_CENTER_RULE,
                        Some(arrival),
                        format!("offline-center pivot assignment {y_pivot:?} != derived {derived_assign:?}"),
                    );
                }
                let beta_next = beta_at(*t + 1);
                let mut derived_centers = Vec::with_capacity(*t);
                for j in 1..=*t {
                    let p_j = pivots[j - 1];
                    let wp = w_prev.w(store, p_j);
                    let mut delta: Vec<PointId> = Vec::new();
                    if let Some(&c_old) = centers.get(j - 1) {
                        let wc = w_prev.w(store, c_old);
                        if wc > wp && is_attached(wc, wp, store.dist(c_old, p_j), beta_next, b_eff)
                        {
                            delta.push(c_old);
                        }
                    }
                    for (h, &yh) in ys.iter().enumerate() {
                        if derived_assign[h] == j && w_prev.w(store, yh) > wp {
                            delta.push(yh);
                        }
                    }
                    let mut best = p_j;
                    let mut best_w = wp;
                    for &c in &delta {
                        let wc = w_prev.w(store, c);
                        if wc > best_w || (wc == best_w && best != p_j && c < best) {
                            best = c;
                            best_w = wc;
                        }
                    }
                    derived_centers.push(best);
                }
                if derived_centers != pids(ev_centers) {
                    report.fail(
                        SEC_CENTER_RULE,
                        Some(arrival),
                        format!("estimated centers {ev_centers:?} != derived {derived_centers:?}"),
                    );
                }
                centers = pids(ev_centers);
                entries.push(EntryRec {
                    arrival,
                    t_entry: *t,
                    pivots_at_entry: pivots.clone(),
                    y: ys,
                    y_pivot: y_pivot.clone(),
                    centers: centers.clone(),
                    w_prev: w_prev.clone(),
                    landing_pivots: Vec::new(),
                });
            }
        }

        // Operation chain.
        while idx < evs.len() {
            let ev = evs[idx];
            match ev {
                PhaseEvent::Add {
                    case,
                    x_alpha,
                    t_before,
                    t_after,
                    pivots_before,
                    pivots_after,
                    wit,
                    ..
                } => {
                    op_checks += 1;
                    check_witnesses(
                        &mut report,
                        store,
                        arrival,
                        wit,
                        &w_prev,
                        &w_cur,
                        &mut witness_checks,
                    );
                    if pids(pivots_before) != pivots || *t_before != pivots.len() {
                        report.fail(
                            SEC_CHAIN,
                            Some(arrival),
                            format!("add: pivots_before {pivots_before:?} != audited {pivots:?}"),
                        );
                    }
                    let t = pivots.len();
                    let w_t: &WeightSnapshot = if t == entry_t { &w_prev } else { &w_cur };
                    let xa = pid(*x_alpha);
                    // The candidate must be well-separated from all pivots.
                    if let Some(&p) = pivots.iter().find(|&&p| {
                        is_attached(
                            w_cur.w(store, xa),
                            w_cur.w(store, p),
                            store.dist(xa, p),
                            beta_at(t + 1),
                            b_eff,
                        )
                    }) {
                        report.fail(
                            SEC_OP_CONDITIONS,
                            Some(arrival),
                            format!("add candidate {x_alpha} attached to pivot point {p}"),
                        );
                    }
                    // Case gates.
                    let beta2 = beta_at(t + 2);
                    let sep_center: Vec<usize> = (1..=centers.len())
                        .filter(|&j| {
                            let c = centers[j - 1];
                            pivots.iter().all(|&p| {
                                pair_separated(store, &w_cur, c, p, beta_at(t + 1), b_eff)
                            })
                        })
                        .collect();
                    let qualifying: Vec<usize> = (1..=centers.len())
                        .filter(|&j| {
                            let c = centers[j - 1];
                            is_attached(
                                w_cur.w(store, c),
                                w_cur.w(store, xa),
                                store.dist(c, xa),
                                beta2,
                                b_eff,
                            ) && w_t.w(store, c) >= w_t.w(store, pivots[j - 1])
                        })
                        .collect();
                    let expect_case: u8 = if !sep_center.is_empty() {
                        1
                    } else {
                        match qualifying.len() {
                            0 => 2,
                            1 => 3,
                            _ => 4,
                        }
                    };
                    if expect_case != *case {
                        report.fail(
                            SEC_OP_CONDITIONS,
                            Some(arrival),
                            format!("add case {case} but conditions derive case {expect_case} (separated centers {sep_center:?}, qualifying {qualifying:?})"),
                        );
                    }
                    // Semantics of the case on the pivot vector.
                    let mut expect = pivots.clone();
                    match expect_case {
                        1 => {
                            let j = sep_center[0];
                            let old = expect[j - 1];
                            expect[j - 1] = centers[j - 1];
                            expect.push(old);
                        }
                        2 => expect.push(xa),
                        3 => {
                            let j = qualifying[0];
                            let old = expect[j - 1];
                            expect[j - 1] = xa;
                            expect.push(old);
                        }
                        _ => {
                            let (f, g) = (qualifying[0], qualifying[1]);
                            let old_f = expect[f - 1];
                            let old_g = expect[g - 1];
                            expect.push(old_f);
                            expect.push(old_g);
                            expect[f - 1] = centers[f - 1];
                            expect[g - 1] = centers[g - 1];
                        }
                    }
                    if expect_case == *case
                        && (pids(pivots_after) != expect || *t_after != expect.len())
                    {
                        report.fail(SEC_OP_CONDITIONS, Some(arrival), format!("add case {case}: pivots_after {pivots_after:?} != derived {expect:?}"));
                    }
                    pivots = pids(pivots_after);
                }
                PhaseEvent::Exchange {
                    case,
                    x_alpha,
                    x_gamma,
                    j,
                    t_before,
                    t_after,
                    pivots_before,
                    pivots_after,
                    wit,
                    ..
                } => {
                    op_checks += 1;
                    check_witnesses(
                        &mut report,
                        store,
                        arrival,
                        wit,
                        &w_prev,
                        &w_cur,
                        &mut witness_checks,
                    );
                    if pids(pivots_before) != pivots || *t_before != pivots.len() {
                        report.fail(
                            SEC_CHAIN,
                            Some(arrival),
                            format!(
                                "exchange: pivots_before {pivots_before:?} != audited {pivots:?}"
                            ),
                        );
                    }
                    let t = pivots.len();
                    let (xa, xg) = (pid(*x_alpha), pid(*x_gamma));
                    if let Err(msg) = exchange_conditions_hold(
                        store,
                        &w_cur,
                        &pivots,
                        xa,
                        xg,
                        *j,
                        beta_at(t + 1),
                        b_eff,
                    ) {
                        report.fail(
                            SEC_OP_CONDITIONS,
                            Some(arrival),
                            format!("exchange on j={j}: {msg}"),
                        );
                    }
                    let beta2 = beta_at(t + 2);
                    let expect_case: u8 = if *j > entry_t {
                        1
                    } else {
                        let c = centers[*j - 1];
                        let wc = w_cur.w(store, c);
                        if wc < w_cur.w(store, pivots[*j - 1]) {
                            2
                        } else if is_attached(
                            wc,
                            w_cur.w(store, xa),
                            store.dist(c, xa),
                            beta2,
                            b_eff,
                        ) {
                            3
                        } else if is_attached(
                            wc,
                            w_cur.w(store, xg),
                            store.dist(c, xg),
                            beta2,
                            b_eff,
                        ) {
                            4
                        } else {
                            5
                        }
                    };
                    if expect_case != *case {
                        report.fail(
                            SEC_OP_CONDITIONS,
                            Some(arrival),
                            format!(
                                "exchange case {case} but conditions derive case {expect_case}"
                            ),
                        );
                    }
                    let mut expect = pivots.clone();
                    match expect_case {
                        1..=3 => {
                            expect[*j - 1] = xa;
                            expect.push(xg);
                        }
                        4 => {
                            expect[*j - 1] = xg;
                            expect.push(xa);
                        }
                        _ => {
                            expect.push(xa);
                            expect.push(xg);
                            expect[*j - 1] = centers[*j - 1];
                        }
                    }
                    if expect_case == *case
                        && (pids(pivots_after) != expect || *t_after != expect.len())
                    {
                        report.fail(SEC_OP_CONDITIONS, Some(arrival), format!("exchange case {case}: pivots_after {pivots_after:?} != derived {expect:?}"));
                    }
                    pivots = pids(pivots_after);
                }
                PhaseEvent::Label {
                    point, label, dist, ..
                } => {
                    label_checks += 1;
                    if *point as usize != arrival - 1 {
                        report.fail(
                            SEC_CHAIN,
                            Some(arrival),
                            format!("label event for point {point} at arrival {arrival}"),
                        );
                    }
                    // Greedy rule: nearest pivot, ties to the smallest label.
                    let mut best = 1usize;
                    let mut best_d = store.dist(x, pivots[0]);
                    for (m, &p) in pivots.iter().enumerate().skip(1) {
                        let d = store.dist(x, p);
                        if d < best_d {
                            best_d = d;
                            best = m + 1;
                        }
                    }
                    if best != *label {
                        report.fail(
                            SEC_GREEDY_LABEL,
                            Some(arrival),
                            format!("point {point} labeled {label}, nearest pivot is {best} at distance {best_d}"),
                        );
                    }
                    if (best_d - dist).abs() > 1e-9 {
                        report.fail(
                            SEC_GREEDY_LABEL,
                            Some(arrival),
                            format!("recorded distance {dist} != {best_d}"),
                        );
                    }
                    if pivots.len() > k {
                        report.fail(
                            SEC_FEASIBILITY,
                            Some(arrival),
                            format!(
                                "label assigned while {} pivots exceed k = {k}",
                                pivots.len()
                            ),
                        );
                    }
                    labels.push((arrival, *label));
                    // After the chain, nothing may remain applicable.
                    if has_entry
                        && (add_applicable(
                            store,
                            &w_cur,
                            &pivots,
                            beta_at(pivots.len() + 1),
                            b_eff,
                        )
                        .is_some()
                            || exchange_applicable(
                                store,
                                &w_cur,
                                &pivots,
                                beta_at(pivots.len() + 1),
                                b_eff,
                            )
                            .is_some())
                    {
                        report.fail(
                            SEC_QUIESCENCE,
                            Some(arrival),
                            "operation chain stopped while an operation was still applicable"
                                .to_string(),
                        );
                    }
                }
                PhaseEvent::BudgetViolation { .. } => {}
                other => {
                    report.fail(
                        SEC_CHAIN,
                        Some(arrival),
                        format!("unexpected event {other:?}"),
                    );
                }
            }
            idx += 1;
        }

        if let Some(rec) = entries.last_mut() {
            if rec.arrival == arrival {
                rec.landing_pivots = pivots.clone();
            }
        }

        // Pivot well-separation at the end of every arrival, at the current
        // phase's parameter and current weights.
        sep_checks += 1;
        let bt = beta_at(pivots.len());
        if let Some((a, b)) = set_separated(store, &w_cur, &pivots, bt, b_eff) {
            report.fail(
                SEC_WELL_SEP,
                Some(arrival),
                format!(
                    "pivots {a} and {b} attached: min(w)={} * d={} < beta_t*B = {}",
                    w_cur.w(store, a).min(w_cur.w(store, b)),
                    store.dist(a, b),
                    bt * b_eff
                ),
            );
        }

        // Inner-step invariants at entries: separation of each intermediate
        // pivot set plus the per-label center options.
        if has_entry {
            let entry = entries.last().expect("pushed above");
            let mut step_pivots = entry.pivots_at_entry.clone();
            let chain: Vec<&PhaseEvent> = evs
                .iter()
                .filter(|e| matches!(e, PhaseEvent::Add { .. } | PhaseEvent::Exchange { .. }))
                .copied()
                .collect();
            let mut steps: Vec<Vec<PointId>> = vec![step_pivots.clone()];
            for ev in &chain {
                match ev {
                    PhaseEvent::Add { pivots_after, .. }
                    | PhaseEvent::Exchange { pivots_after, .. } => {
                        step_pivots = pids(pivots_after);
                        steps.push(step_pivots.clone());
                    }
                    _ => {}
                }
            }
            for step in &steps {
                inner_checks += 1;
                let t = step.len();
                let w_t: &WeightSnapshot = if t == entry.t_entry {
                    &entry.w_prev
                } else {
                    &w_cur
                };
                if let Some((a, b)) = set_separated(store, w_t, step, beta_at(t), b_eff) {
                    report.fail(
                        SEC_WELL_SEP,
                        Some(arrival),
                        format!("inner step t={t}: pivots {a}, {b} attached"),
                    );
                }
                if !premise {
                    continue;
                }
                for j in 1..=entry.t_entry {
                    let c = entry.centers[j - 1];
                    let a_holds = step
                        .iter()
                        .all(|&p| pair_separated(store, &w_cur, c, p, beta_at(t + 1), b_eff));
                    let b_holds = is_attached(
                        w_t.w(store, c),
                        w_t.w(store, step[j - 1]),
                        store.dist(c, step[j - 1]),
                        beta_at(t + 1),
                        b_eff,
                    );
                    let f_bound = beta_at(entry.t_entry) * ((t - entry.t_entry) as Real);
                    let c_holds = !ge_tol(product(store, w_t, c, step[j - 1]), f_bound * b_eff)
                        && w_t.w(store, c) < w_t.w(store, step[j - 1]);
                    if !(a_holds || b_holds || c_holds) {
                        report.fail(
                            SEC_INNER_OPTIONS,
                            Some(arrival),
                            format!("label {j} center {c} at inner step t={t}: none of the three tracking options holds"),
                        );
                    }
                }
            }
        }
    }

    report.pass(
        SEC_CHAIN,
        None,
        format!("{n_labeled} arrivals replayed, {op_checks} operations chained"),
    );
    report.pass(
        SEC_QUIESCENCE,
        None,
        format!("{quiescence_checks} arrivals checked for missed operations"),
    );
    report.pass(
        SEC_GREEDY_LABEL,
        None,
        format!("{label_checks} label assignments checked"),
    );
    report.pass(
        SEC_WELL_SEP,
        None,
        format!("{sep_checks} arrival-end separation checks, {inner_checks} inner-step checks"),
    );
    report.pass(
        SEC_WITNESS,
        None,
        format!("{witness_checks} weight witnesses recomputed"),
    );

    // ----- entry-level attachment invariants (structural) -----
    for e in &entries {
        let t = e.t_entry;
        let beta_next = beta_at(t + 1);
        for (h, &yh) in e.y.iter().enumerate() {
            let pj = e.pivots_at_entry[e.y_pivot[h] - 1];
            if !is_attached(
                e.w_prev.w(store, yh),
                e.w_prev.w(store, pj),
                store.dist(yh, pj),
                beta_next,
                b_eff,
            ) {
                report.fail(
                    SEC_OFFLINE_ATTACH,
                    Some(e.arrival),
                    format!("offline center {yh} not attached to its pivot {pj} at the phase end"),
                );
            }
        }
        for j in 1..=t {
            let c = e.centers[j - 1];
            let p = e.pivots_at_entry[j - 1];
            let (wc, wp) = (e.w_prev.w(store, c), e.w_prev.w(store, p));
            if !is_attached(wc, wp, store.dist(c, p), beta_next, b_eff) {
                report.fail(
                    SEC_CENTER_ATTACH,
                    Some(e.arrival),
                    format!("estimated center {c} not attached to pivot {p} (label {j})"),
                );
            }
            if wc < wp {
                report.fail(
                    SEC_CENTER_ATTACH,
                    Some(e.arrival),
                    format!("estimated center {c} lighter than pivot {p} (label {j}): {wc} < {wp}"),
                );
            }
            if wc == wp && c != p {
                report.fail(
                    SEC_CENTER_ATTACH,
                    Some(e.arrival),
                    format!("weight tie without identity for label {j}: center {c}, pivot {p}"),
                );
            }
        }
    }
    report.pass(
        SEC_OFFLINE_ATTACH,
        None,
        format!("{} entries checked", entries.len()),
    );
    report.pass(
        SEC_CENTER_ATTACH,
        None,
        format!("{} entries checked", entries.len()),
    );

    // ----- premise-gated phase audits -----
    if !premise {
        for sec in [
            SEC_CENTER_TRACKING,
            SEC_FAR_POINTS,
            SEC_CLUSTER_SIZE,
            SEC_PHASE_COST,
            SEC_TOTAL_COST,
            SEC_FEASIBILITY,
        ] {
            report.push(
                sec,
                Status::Skipped,
                None,
                None,
                "premise OPT <= B not established".to_string(),
            );
        }
        return Ok(report);
    }

    let g_k = cost_constant(k);

    // Non-intermediate phases: entry r ends phase r. Phase r >= 1 starts at
    // entry r-1's landing; the final (unfinished) phase is audited only for
    // what is defined without its closing entry.
    let m = entries.len();
    let phase_pivots = |r: usize| -> &[PointId] {
        if r == 0 {
            &entries[0].pivots_at_entry // the initial single pivot, while m > 0
        } else {
            &entries[r - 1].landing_pivots
        }
    };
    let phase_start = |r: usize| if r == 0 { 1 } else { entries[r - 1].arrival };
    let phase_end_excl = |r: usize| {
        if r < m {
            entries[r].arrival
        } else {
            n_labeled + 1
        }
    };

    // Tracking of the previous phase's center against the
    // current phase's pivot, at the end of the current phase.
    for r in 1..m {
        let t_now = phase_pivots(r).len();
        let t_prev = phase_pivots(r - 1).len();
        let w_end = &entries[r].w_prev;
        let prev_centers = &entries[r - 1].centers;
        let w_prev_end = &entries[r - 1].w_prev;
        for j in 1..=t_prev.min(prev_centers.len()) {
            let c = prev_centers[j - 1];
            let p = phase_pivots(r)[j - 1];
            let wc_prev = w_prev_end.w(store, c);
            let opt_a = wc_prev <= w_end.w(store, p)
                && le_tol(
                    (wc_prev as Real) * store.dist(c, p),
                    beta_at(t_prev) * ((t_now - t_prev) as Real) * b_eff,
                );
            let opt_b = is_attached(
                w_end.w(store, c),
                w_end.w(store, p),
                store.dist(c, p),
                beta_at(t_now + 1),
                b_eff,
            );
            if !(opt_a || opt_b) {
                report.push(
                    SEC_CENTER_TRACKING,
                    Status::Fail,
                    Some(entries[r].arrival),
                    Some(t_now),
                    format!("label {j}: prior center {c} neither weight-bounded-close nor attached to pivot {p}"),
                );
            }
        }
    }
    report.push(
        SEC_CENTER_TRACKING,
        Status::Pass,
        None,
        None,
        format!("{} phase transitions checked", m.saturating_sub(1)),
    );

    // Per completed phase: far-point bounds, cluster-size bound, cost bound.
    let mut far_checks = 0usize;
    let mut size_checks = 0usize;
    let mut cost_checks = 0usize;
    for r in 0..m {
        let t_phase = phase_pivots(r).len();
        let e = &entries[r];
        let w_end = &e.w_prev;
        let end_excl = phase_end_excl(r); // first arrival not in the phase
        let cluster_upto = |arrival_excl: usize, j: usize| -> Vec<PointId> {
            labels
                .iter()
                .take(arrival_excl - 1)
                .enumerate()
                .filter(|&(_, &(_, l))| l == j)
                .map(|(p, _)| pid(p as u32))
                .collect()
        };
        // Offline centers for the phase: pivots + logged y's, assignment by
        // nearest with smallest-index ties.
        let mut p_t: Vec<PointId> = phase_pivots(r).to_vec();
        p_t.extend(e.y.iter().copied());
        p_t.sort_unstable();
        p_t.dedup();
        let assign = |p: PointId| -> PointId {
            let mut best = p_t[0];
            let mut best_d = store.dist(p, p_t[0]);
            for &c in &p_t[1..] {
                let d = store.dist(p, c);
                if d < best_d || (d == best_d && c < best) {
                    best_d = d;
                    best = c;
                }
            }
            best
        };
        for j in 1..=t_phase {
            let c_j = e.centers[j - 1];
            let p_j = phase_pivots(r)[j - 1];
            let full: Vec<PointId> = cluster_upto(end_excl, j);
            // Cluster-size bound.
            size_checks += 1;
            let bound = ((2 * k + 1) * t_phase) as Real * w_end.w(store, c_j) as Real;
            if (full.len() as Real) > bound + 1e-9 {
                report.push(
                    SEC_CLUSTER_SIZE,
                    Status::Fail,
                    Some(e.arrival),
                    Some(t_phase),
                    format!("label {j}: |C| = {} > (2k+1) T w(c) = {bound}", full.len()),
                );
            }
            // Per-phase cost bound.
            cost_checks += 1;
            let cost_c = offline::cost(store, &full, c_j);
            let cbound = t_phase as Real * g_k * b_eff;
            if !le_tol(cost_c, cbound) {
                report.push(
                    SEC_PHASE_COST,
                    Status::Fail,
                    Some(e.arrival),
                    Some(t_phase),
                    format!("label {j}: cost(C; c) = {cost_c} > T g(k) B = {cbound}"),
                );
            }
            // Far points: labeled j during this phase, offline-assigned to a
            // center attached to a different pivot.
            far_checks += 1;
            let start = phase_start(r);
            let during: Vec<PointId> = labels
                .iter()
                .enumerate()
                .filter(|&(_, &(arr, l))| l == j && arr >= start && arr < end_excl)
                .map(|(p, _)| pid(p as u32))
                .collect();
            let mut s_far: Vec<PointId> = Vec::new();
            for &p in &during {
                let c = assign(p);
                if c == p_j {
                    continue; // assigned to the pivot itself
                }
                if let Some(h) = e.y.iter().position(|&yh| yh == c) {
                    let owner = e.pivots_at_entry[e.y_pivot[h] - 1];
                    if owner != p_j {
                        s_far.push(p);
                    }
                } else if let Some(idx) = phase_pivots(r).iter().position(|&pp| pp == c) {
                    if idx + 1 != j {
                        s_far.push(p);
                    }
                }
            }
            let far_size_bound = k as Real * w_end.w(store, p_j) as Real;
            if (s_far.len() as Real) > far_size_bound + 1e-9 {
                report.push(
                    SEC_FAR_POINTS,
                    Status::Fail,
                    Some(e.arrival),
                    Some(t_phase),
                    format!(
                        "label {j}: |S_far| = {} > k w(p) = {far_size_bound}",
                        s_far.len()
                    ),
                );
            }
            let far_cost = offline::cost(store, &s_far, p_j);
            let far_bound = k as Real * (beta_at(t_phase + 1) + 2.0) * b_eff;
            if !le_tol(far_cost, far_bound) {
                report.push(
                    SEC_FAR_POINTS,
                    Status::Fail,
                    Some(e.arrival),
                    Some(t_phase),
                    format!("label {j}: cost(S_far; p) = {far_cost} > k (beta+2) B = {far_bound}"),
                );
            }
        }
    }
    report.push(
        SEC_FAR_POINTS,
        Status::Pass,
        None,
        None,
        format!("{far_checks} far-point bounds checked"),
    );
    report.push(
        SEC_CLUSTER_SIZE,
        Status::Pass,
        None,
        None,
        format!("{size_checks} cluster-size bounds checked"),
    );
    report.push(
        SEC_PHASE_COST,
        Status::Pass,
        None,
        None,
        format!("{cost_checks} per-phase cost bounds checked"),
    );

    // Total cost and feasibility at stream end.
    let all_labels: Vec<usize> = labels.iter().map(|&(_, l)| l).collect();
    let total = crate::engine::cluster_based_cost(store, &all_labels);
    let total_bound = (k * k) as Real * g_k * b_eff;
    if le_tol(total, total_bound) {
        report.pass(
            SEC_TOTAL_COST,
            None,
            format!("final cost {total} <= k^2 g(k) B = {total_bound}"),
        );
    } else {
        report.fail(
            SEC_TOTAL_COST,
            None,
            format!("final cost {total} > k^2 g(k) B = {total_bound}"),
        );
    }
    if violated {
        report.fail(
            SEC_FEASIBILITY,
            None,
            "budget violation despite OPT <= B".to_string(),
        );
    } else if pivots.len() <= k {
        report.pass(
            SEC_FEASIBILITY,
            None,
            format!("{} labels used, k = {k}", pivots.len()),
        );
    } else {
        report.fail(
            SEC_FEASIBILITY,
            None,
            format!("{} labels used > k = {k}", pivots.len()),
        );
    }

    Ok(report)
}

/// Brute-force confirmation that no `k + 1` points of the set are
/// `beta`-well-separated w.r.t. the set's natural weights, given that the
/// exact k-median optimum is within budget and `beta > 8`.
#[derive(Debug, Clone, Serialize)]
pub struct SeparatedSetVerdict {
    pub applicable: bool,
    pub exact_opt: Real,
    /// A separated (k+1)-subset, if one exists (which refutes the bound).
    pub witness: Option<Vec<u32>>,
}

pub fn check_separated_set_bound(
    store: &PointStore<Real>,
    budget: Real,
    k: usize,
    beta: Real,
    cap: u64,
) -> Result<SeparatedSetVerdict, AuditError> {
    let n = store.len();
    let ids: Vec<PointId> = (0..n as u32).map(PointId).collect();
    let (_, cl) = offline::exact_kmedian(store, &ids, k, cap)?;
    let applicable = le_tol(cl.cost, budget) && beta > 8.0;
    if !applicable {
        return Ok(SeparatedSetVerdict {
            applicable,
            exact_opt: cl.cost,
            witness: None,
        });
    }
    let mut weights = WeightIndex::<Real>::new(budget)?;
    for &p in &ids {
        weights.update_on_arrival(store, p)?;
    }
    let w = weights.snapshot();
    // Depth-first over distinct locations with pairwise pruning: separated
    // sets cannot contain coincident pairs.
    let locs: Vec<PointId> = (0..w.num_locs())
        .map(|l| store.loc_rep(LocId(l as u32)))
        .collect();
    let mut chosen: Vec<PointId> = Vec::new();
    fn dfs(
        store: &PointStore<Real>,
        w: &WeightSnapshot,
        locs: &[PointId],
        start: usize,
        target: usize,
        beta: Real,
        budget: Real,
        chosen: &mut Vec<PointId>,
    ) -> Option<Vec<u32>> {
        if chosen.len() == target {
            return Some(chosen.iter().map(|p| p.0).collect());
        }
        for i in start..locs.len() {
            let cand = locs[i];
            if chosen.iter().all(|&c| {
                is_well_separated(
                    w.w(store, c),
                    w.w(store, cand),
                    store.dist(c, cand),
                    beta,
                    budget,
                )
            }) {
                chosen.push(cand);
                if let Some(found) = dfs(store, w, locs, i + 1, target, beta, budget, chosen) {
                    return Some(found);
                }
                chosen.pop();
            }
        }
        None
    }
    let witness = dfs(store, &w, &locs, 0, k + 1, beta, budget, &mut chosen);
    Ok(SeparatedSetVerdict {
        applicable,
        exact_opt: cl.cost,
        witness,
    })
}

/// The weighted triangle helper in its sharp product form: whenever
/// `w(x) <= w(p)`, the x-y product is at most the sum of the x-p and y-p
/// products, so a pair separated at `beta` forces `beta < beta_x + beta_y`
/// for any attachment levels of the two legs.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TriangleVerdict {
    pub applicable: bool,
    pub holds: bool,
    pub lhs: Real,
    pub rhs: Real,
}

pub fn check_weighted_triangle(
    wx: Weight,
    wy: Weight,
    wp: Weight,
    d_xy: Real,
    d_xp: Real,
    d_yp: Real,
) -> TriangleVerdict {
    let applicable = wx <= wp;
    let lhs = (wx.min(wy) as Real) * d_xy;
    let rhs = (wx.min(wp) as Real) * d_xp + (wy.min(wp) as Real) * d_yp;
    TriangleVerdict {
        applicable,
        holds: !applicable || le_tol(lhs, rhs),
        lhs,
        rhs,
    }
}
