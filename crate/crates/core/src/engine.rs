//! The online engine: per-arrival operation loop, estimated-center
//! subroutine, Add and Exchange operations, greedy labeling.
//!
//! One pivot per label. The loop for arrival `x_i` (weights `w_i` over the
//! prefix including `x_i`, `w_{i-1}` excluding it):
//!
//! 1. if an Add or Exchange operation is applicable, recompute estimated
//!    centers once from `X_{i-1}` and `w_{i-1}`, then repeatedly apply an
//!    applicable operation, Adds first, until none applies;
//! 2. give `x_i` the label of its nearest pivot.
//!
//! "Apply an arbitrary applicable one" is made deterministic: the Add
//! candidate is the smallest-arrival-index qualifying point, Exchange
//! candidates are chosen lexicographically by `(j, alpha, gamma)`, and
//! within-case label choices take the smallest label(s). Every structural
//! change is logged as a [`PhaseEvent`]; replaying the log reproduces the
//! final state bit-exactly.

use serde::Serialize;
use thiserror::Error;

use crate::metric::{LocId, MetricError, MetricKind, PointId, PointStore};
use crate::offline::{self, exact_subset_count, SolverError};
use crate::scalar::Real;
use crate::separation::{is_attached, is_well_separated, BetaSchedule};
use crate::trace::{PhaseEvent, WeightWitness, TRACE_SCHEMA_VERSION};
use crate::weights::{Weight, WeightError, WeightIndex, WeightSnapshot};

/// How the engine obtains offline k-median solutions for prefixes.
///
/// `Exact` always enumerates (erroring when the cap is blown). `Approx`
/// enumerates when `C(locations, k) <= cap` and falls back to single-swap
/// local search otherwise; because local search is a 5-approximation the
/// engine then runs against the inflated budget `5 * B`, which preserves
/// every guarantee with `B` replaced by `5B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverMode {
    Exact,
    Approx,
}

impl SolverMode {
    pub fn budget_factor(self) -> Real {
        match self {
            SolverMode::Exact => 1.0,
            SolverMode::Approx => 5.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SolverMode::Exact => "exact",
            SolverMode::Approx => "approx5",
        }
    }
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub k: usize,
    /// User budget B (must be positive).
    pub budget: Real,
    pub solver: SolverMode,
    /// Enumeration cap for the exact solver.
    pub exact_cap: u64,
    /// Separation schedule. `Standard` everywhere except the regression
    /// harness demonstrating why slower decay breaks the algorithm.
    pub beta_schedule: BetaSchedule,
}

impl EngineConfig {
    pub fn new(k: usize, budget: Real) -> Self {
        EngineConfig {
            k,
            budget,
            solver: SolverMode::Exact,
            exact_cap: 1_000_000,
            beta_schedule: BetaSchedule::Standard,
        }
    }

    pub fn with_solver(mut self, solver: SolverMode) -> Self {
        self.solver = solver;
        self
    }

    /// Budget the run actually uses in weights and thresholds.
    pub fn effective_budget(&self) -> Real {
        self.budget * self.solver.budget_factor()
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(
        "budget violation at arrival {arrival}: {reason} (budget B={budget} is likely below OPT)"
    )]
    BudgetViolation {
        arrival: usize,
        reason: String,
        budget: Real,
    },
    #[error("offline solver: {0}")]
    Solver(#[from] SolverError),
    #[error("metric: {0}")]
    Metric(#[from] MetricError),
    #[error("weights: {0}")]
    Weights(#[from] WeightError),
    #[error("k must be >= 1")]
    BadK,
    #[error("engine already aborted by a budget violation")]
    Poisoned,
    #[error("matrix store exhausted: all {0} points already processed")]
    MatrixExhausted(usize),
}

/// Geometry the engine's internal store is built with.
#[derive(Debug, Clone)]
pub enum Geometry {
    Euclidean { kind: MetricKind, dim: usize },
    Matrix(Vec<Vec<Real>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct PhaseRecord {
    t: usize,
    labeled: usize,
}

/// Online engine over its own append-only store.
pub struct Engine {
    cfg: EngineConfig,
    b_eff: Real,
    store: PointStore<Real>,
    weights: WeightIndex<Real>,
    prev_snap: Option<WeightSnapshot>,
    pivots: Vec<PointId>,
    centers: Vec<PointId>,
    labels: Vec<usize>,
    events: Vec<PhaseEvent>,
    phases: Vec<PhaseRecord>,
    add_counts: [u64; 4],
    exchange_counts: [u64; 5],
    violated: bool,
}

/// Per-arrival outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StepOutcome {
    pub point: PointId,
    pub label: usize,
}

/// Everything a finished (or aborted) run exposes.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub events: Vec<PhaseEvent>,
    pub labels: Vec<usize>,
    pub pivots: Vec<PointId>,
    pub centers: Vec<PointId>,
    pub summary: RunSummary,
    pub store: PointStore<Real>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub n: usize,
    pub k: usize,
    pub b_user: Real,
    pub b_eff: Real,
    pub labels_used: usize,
    pub pivot_count: usize,
    pub phases: usize,
    pub intermediate_phases: usize,
    pub add_counts: [u64; 4],
    pub exchange_counts: [u64; 5],
    pub final_cost: Real,
    pub cost_over_b_eff: Real,
    pub est_center_cost: Option<Real>,
    pub violated: bool,
}

impl Engine {
    pub fn new(cfg: EngineConfig, geometry: Geometry) -> Result<Self, EngineError> {
        if cfg.k == 0 {
            return Err(EngineError::BadK);
        }
        let b_eff = cfg.effective_budget();
        let store = match geometry {
            Geometry::Euclidean { kind, dim } => PointStore::new_euclidean(kind, dim),
            Geometry::Matrix(m) => PointStore::from_matrix(m)?,
        };
        let weights = WeightIndex::new(b_eff)?;
        let meta = PhaseEvent::Meta {
            schema: TRACE_SCHEMA_VERSION,
            k: cfg.k,
            b_user: cfg.budget,
            b_eff,
            solver: cfg.solver.name().to_string(),
            metric: store.kind(),
        };
        Ok(Engine {
            cfg,
            b_eff,
            store,
            weights,
            prev_snap: None,
            pivots: Vec::new(),
            centers: Vec::new(),
            labels: Vec::new(),
            events: vec![meta],
            phases: Vec::new(),
            add_counts: [0; 4],
            exchange_counts: [0; 5],
            violated: false,
        })
    }

    #[inline]
    pub fn effective_budget(&self) -> Real {
        self.b_eff
    }

    #[inline]
    pub fn pivot_count(&self) -> usize {
        self.pivots.len()
    }

    #[inline]
    pub fn pivots(&self) -> &[PointId] {
        &self.pivots
    }

    #[inline]
    pub fn store(&self) -> &PointStore<Real> {
        &self.store
    }

    /// Feed the next arrival by coordinates (Euclidean geometries).
    pub fn step_coords(&mut self, coords: &[Real]) -> Result<StepOutcome, EngineError> {
        if self.violated {
            return Err(EngineError::Poisoned);
        }
        let id = self.store.push(coords)?;
        self.process(id)
    }

    /// Process the next preloaded point (matrix geometries).
    pub fn step_next(&mut self) -> Result<StepOutcome, EngineError> {
        if self.violated {
            return Err(EngineError::Poisoned);
        }
        let next = self.weights.prefix_len();
        if next >= self.store.len() {
            return Err(EngineError::MatrixExhausted(self.store.len()));
        }
        self.process(PointId(next as u32))
    }

    fn beta_at(&self, t: usize) -> Real {
        self.cfg.beta_schedule.beta_at(t, self.cfg.k)
    }

    fn w_of(&self, snap: &WeightSnapshot, p: PointId) -> Weight {
        snap.w(&self.store, p)
    }

    fn witness(
        &self,
        points: &[PointId],
        w_prev: Option<&WeightSnapshot>,
        w_cur: &WeightSnapshot,
    ) -> Vec<WeightWitness> {
        let mut seen = std::collections::BTreeSet::new();
        let mut out = Vec::new();
        for &p in points {
            if !seen.insert(p.0) {
                continue;
            }
            let prev = w_prev.and_then(|s| {
                if p.index() < s.prefix_len() {
                    Some(s.w(&self.store, p))
                } else {
                    None
                }
            });
            out.push(WeightWitness {
                point: p.0,
                w_prev: prev,
                w_cur: self.w_of(w_cur, p),
            });
        }
        out
    }

    fn enter_phase(&mut self, t: usize) {
        self.phases.push(PhaseRecord { t, labeled: 0 });
    }

    fn process(&mut self, x: PointId) -> Result<StepOutcome, EngineError> {
        let arrival = x.index() + 1; // 1-based, as in the trace
        let w_before = if x.index() == 0 {
            None
        } else {
            Some(self.weights.snapshot())
        };
        self.weights.update_on_arrival(&self.store, x)?;
        let w_cur = self.weights.snapshot();

        if x.index() == 0 {
            self.pivots.push(x);
            self.labels.push(1);
            self.enter_phase(1);
            self.phases.last_mut().expect("just pushed").labeled += 1;
            self.events.push(PhaseEvent::Init {
                i: arrival,
                point: x.0,
                label: 1,
            });
            self.prev_snap = Some(w_cur);
            return Ok(StepOutcome { point: x, label: 1 });
        }
        let w_prev = w_before.expect("arrival > 1 has a previous snapshot");

        let entering = self.find_add_candidate(&w_cur).is_some()
            || self.find_exchange_candidate(&w_cur).is_some();
        if entering {
            let entry_t = self.pivots.len();
            self.compute_estimated_centers(arrival, &w_prev)?;
            loop {
                if let Some(x_alpha) = self.find_add_candidate(&w_cur) {
                    self.apply_add(arrival, x_alpha, entry_t, &w_prev, &w_cur)?;
                } else if let Some((x_alpha, x_gamma, j)) = self.find_exchange_candidate(&w_cur) {
                    self.apply_exchange(arrival, x_alpha, x_gamma, j, entry_t, &w_prev, &w_cur)?;
                } else {
                    break;
                }
            }
        }

        if self.pivots.len() > self.cfg.k {
            return self.abort(
                arrival,
                format!(
                    "labeling with {} pivots exceeds k = {}",
                    self.pivots.len(),
                    self.cfg.k
                ),
            );
        }
        let (label, dist) = self.nearest_pivot(x);
        self.labels.push(label);
        self.phases
            .last_mut()
            .expect("phase exists after init")
            .labeled += 1;
        self.events.push(PhaseEvent::Label {
            i: arrival,
            point: x.0,
            label,
            dist,
        });
        self.prev_snap = Some(w_cur);
        Ok(StepOutcome { point: x, label })
    }

    fn abort(&mut self, arrival: usize, reason: String) -> Result<StepOutcome, EngineError> {
        self.violated = true;
        self.events.push(PhaseEvent::BudgetViolation {
            i: arrival,
            t: self.pivots.len(),
            reason: reason.clone(),
        });
        Err(EngineError::BudgetViolation {
            arrival,
            reason,
            budget: self.cfg.budget,
        })
    }

    fn nearest_pivot(&self, x: PointId) -> (usize, Real) {
        let mut best = 1usize;
        let mut best_d = self.store.dist(x, self.pivots[0]);
        for (idx, &p) in self.pivots.iter().enumerate().skip(1) {
            let d = self.store.dist(x, p);
            if d < best_d {
                best_d = d;
                best = idx + 1;
            }
        }
        (best, best_d)
    }

    /// Smallest-arrival-index point that is `beta_{t+1}`-well-separated from
    /// every pivot w.r.t. `w_i`. Locations stand in for their points.
    fn find_add_candidate(&self, w_cur: &WeightSnapshot) -> Option<PointId> {
        let beta = self.beta_at(self.pivots.len() + 1);
        let piv: Vec<(LocId, Weight)> = self
            .pivots
            .iter()
            .map(|&p| (self.store.loc_of(p), self.w_of(w_cur, p)))
            .collect();
        'locs: for loc_i in 0..w_cur.num_locs() {
            let loc = LocId(loc_i as u32);
            let w_loc = w_cur.w_loc(loc);
            for &(ploc, wp) in &piv {
                let d = self.store.loc_dist(loc, ploc);
                if !is_well_separated(w_loc, wp, d, beta, self.b_eff) {
                    continue 'locs;
                }
            }
            return Some(self.store.loc_rep(loc));
        }
        None
    }

    /// Lexicographically smallest `(j, alpha, gamma)` with: alpha and gamma
    /// `beta_{t+1}`-attached to `p_j`, both at least as heavy as `p_j`, and
    /// `{alpha, gamma} + pivots - {p_j}` pairwise `beta_{t+1}`-well-separated,
    /// all w.r.t. `w_i`.
    fn find_exchange_candidate(&self, w_cur: &WeightSnapshot) -> Option<(PointId, PointId, usize)> {
        let t = self.pivots.len();
        let beta = self.beta_at(t + 1);
        let piv: Vec<(LocId, Weight)> = self
            .pivots
            .iter()
            .map(|&p| (self.store.loc_of(p), self.w_of(w_cur, p)))
            .collect();

        // attach_mask[loc] has bit j-1 set iff loc is attached to pivot j.
        let num_locs = w_cur.num_locs();
        let mut attach_mask = vec![0u32; num_locs];
        for loc_i in 0..num_locs {
            let loc = LocId(loc_i as u32);
            let w_loc = w_cur.w_loc(loc);
            for (jm1, &(ploc, wp)) in piv.iter().enumerate() {
                let d = self.store.loc_dist(loc, ploc);
                if is_attached(w_loc, wp, d, beta, self.b_eff) {
                    attach_mask[loc_i] |= 1 << jm1;
                }
            }
        }

        for j in 1..=t {
            // Pivots other than p_j must themselves be pairwise separated.
            let others: Vec<usize> = (0..t).filter(|&m| m != j - 1).collect();
            let mut others_ok = true;
            'pairs: for a in 0..others.len() {
                for b in (a + 1)..others.len() {
                    let (la, wa) = piv[others[a]];
                    let (lb, wb) = piv[others[b]];
                    if !is_well_separated(wa, wb, self.store.loc_dist(la, lb), beta, self.b_eff) {
                        others_ok = false;
                        break 'pairs;
                    }
                }
            }
            if !others_ok {
                continue;
            }
            let wp = piv[j - 1].1;
            let only_j = 1u32 << (j - 1);
            let cands: Vec<LocId> = (0..num_locs)
                .filter(|&li| attach_mask[li] == only_j && w_cur.w_loc(LocId(li as u32)) >= wp)
                .map(|li| LocId(li as u32))
                .collect();
            for a in 0..cands.len() {
                for g in (a + 1)..cands.len() {
                    let (wa, wg) = (w_cur.w_loc(cands[a]), w_cur.w_loc(cands[g]));
                    let d = self.store.loc_dist(cands[a], cands[g]);
                    if is_well_separated(wa, wg, d, beta, self.b_eff) {
                        return Some((
                            self.store.loc_rep(cands[a]),
                            self.store.loc_rep(cands[g]),
                            j,
                        ));
                    }
                }
            }
        }
        None
    }

    /// Offline solve over the prefix `X_{i-1}` per the configured mode.
    fn solve_prefix(&self, prefix_len: usize) -> Result<Vec<PointId>, EngineError> {
        let ids: Vec<PointId> = (0..prefix_len as u32).map(PointId).collect();
        let locs = self.store.loc_count_in_prefix(prefix_len);
        let k = self.cfg.k;
        let within_cap = exact_subset_count(locs, k) <= self.cfg.exact_cap as u128;
        let centers = match self.cfg.solver {
            SolverMode::Exact => {
                offline::exact_kmedian(&self.store, &ids, k, self.cfg.exact_cap)?.0
            }
            SolverMode::Approx => {
                if within_cap {
                    offline::exact_kmedian(&self.store, &ids, k, self.cfg.exact_cap)?.0
                } else {
                    offline::local_search_kmedian(&self.store, &ids, k, 1)?.0
                }
            }
        };
        Ok(centers.centers)
    }

    /// The estimated-center subroutine, once per outer-loop entry, computed
    /// from `X_{i-1}` and `w_{i-1}` with `T` = current pivot count.
    fn compute_estimated_centers(
        &mut self,
        arrival: usize,
        w_prev: &WeightSnapshot,
    ) -> Result<(), EngineError> {
        let t = self.pivots.len();
        let beta_next = self.beta_at(t + 1);
        let prefix_len = arrival - 1;
        let ys = self.solve_prefix(prefix_len)?;

        // (dagger): pivot with minimum weighted distance to each y.
        let mut y_pivot = Vec::with_capacity(ys.len());
        for &y in &ys {
            let wy = self.w_of(w_prev, y);
            let mut best_j = 1usize;
            let mut best_v = Real::INFINITY;
            for (jm1, &p) in self.pivots.iter().enumerate() {
                let v = (wy.min(self.w_of(w_prev, p)) as Real) * self.store.dist(y, p);
                if v < best_v {
                    best_v = v;
                    best_j = jm1 + 1;
                }
            }
            y_pivot.push(best_j);
        }

        let old_centers = self.centers.clone();
        let mut new_centers = Vec::with_capacity(t);
        for j in 1..=t {
            let p_j = self.pivots[j - 1];
            let wp = self.w_of(w_prev, p_j);
            // delta(p_j): the previous estimated center when it is heavier
            // and still attached, plus every offline center assigned here
            // that is heavier than the pivot.
            let mut delta: Vec<PointId> = Vec::new();
            if let Some(&c_old) = old_centers.get(j - 1) {
                let wc = self.w_of(w_prev, c_old);
                let d = self.store.dist(c_old, p_j);
                if wc > wp && is_attached(wc, wp, d, beta_next, self.b_eff) {
                    delta.push(c_old);
                }
            }
            for (h, &y) in ys.iter().enumerate() {
                if y_pivot[h] == j && self.w_of(w_prev, y) > wp {
                    delta.push(y);
                }
            }
            // (double dagger): heaviest of delta unless the pivot already
            // dominates; ties to the smallest arrival index.
            let mut best = p_j;
            let mut best_w = wp;
            for &c in &delta {
                let wc = self.w_of(w_prev, c);
                if wc > best_w || (wc == best_w && best != p_j && c < best) {
                    best = c;
                    best_w = wc;
                }
            }
            new_centers.push(best);
        }
        self.centers = new_centers;

        let mut involved: Vec<PointId> = self.pivots.clone();
        involved.extend_from_slice(&ys);
        involved.extend_from_slice(&self.centers);
        let w_cur = self.weights.snapshot();
        let wit = self.witness(&involved, Some(w_prev), &w_cur);
        self.events.push(PhaseEvent::EstimatedCenters {
            i: arrival,
            t,
            y: ys.iter().map(|p| p.0).collect(),
            y_pivot,
            centers: self.centers.iter().map(|p| p.0).collect(),
            pivots: self.pivots.iter().map(|p| p.0).collect(),
            wit,
        });
        Ok(())
    }

    fn guard_growth(&mut self, arrival: usize, minted: usize) -> Result<(), EngineError> {
        if self.pivots.len() + minted > self.cfg.k + 2 {
            self.abort(
                arrival,
                format!(
                    "operation would grow pivots to {} > k + 2 = {}",
                    self.pivots.len() + minted,
                    self.cfg.k + 2
                ),
            )
            .map(|_| ())
        } else {
            Ok(())
        }
    }

    fn apply_add(
        &mut self,
        arrival: usize,
        x_alpha: PointId,
        entry_t: usize,
        w_prev: &WeightSnapshot,
        w_cur: &WeightSnapshot,
    ) -> Result<(), EngineError> {
        let t = self.pivots.len();
        let beta1 = self.beta_at(t + 1);
        let beta2 = self.beta_at(t + 2);
        // w_t is the pre-arrival snapshot for the entry's first operation and
        // the current one afterwards.
        let w_t: &WeightSnapshot = if t == entry_t { w_prev } else { w_cur };
        let pivots_before: Vec<u32> = self.pivots.iter().map(|p| p.0).collect();

        // Case 1: some estimated center is separated from every pivot.
        let mut case1_j = None;
        for j in 1..=self.centers.len() {
            let c = self.centers[j - 1];
            let wc = self.w_of(w_cur, c);
            let sep_all = self.pivots.iter().all(|&p| {
                is_well_separated(
                    wc,
                    self.w_of(w_cur, p),
                    self.store.dist(c, p),
                    beta1,
                    self.b_eff,
                )
            });
            if sep_all {
                case1_j = Some(j);
                break;
            }
        }

        let (case, labels): (u8, Vec<usize>) = if let Some(j) = case1_j {
            self.guard_growth(arrival, 1)?;
            let old_pj = self.pivots[j - 1];
            self.pivots[j - 1] = self.centers[j - 1];
            self.pivots.push(old_pj);
            (1, vec![j, self.pivots.len()])
        } else {
            // Labels whose center is attached to x_alpha and at least as
            // heavy (under w_t) as its current pivot.
            let w_alpha_cur = self.w_of(w_cur, x_alpha);
            let qualifying: Vec<usize> = (1..=self.centers.len())
                .filter(|&j| {
                    let c = self.centers[j - 1];
                    let attached = is_attached(
                        self.w_of(w_cur, c),
                        w_alpha_cur,
                        self.store.dist(c, x_alpha),
                        beta2,
                        self.b_eff,
                    );
                    attached && self.w_of(w_t, c) >= self.w_of(w_t, self.pivots[j - 1])
                })
                .collect();
            match qualifying.len() {
                0 => {
                    self.guard_growth(arrival, 1)?;
                    self.pivots.push(x_alpha);
                    (2, vec![self.pivots.len()])
                }
                1 => {
                    self.guard_growth(arrival, 1)?;
                    let j = qualifying[0];
                    let old_pj = self.pivots[j - 1];
                    self.pivots[j - 1] = x_alpha;
                    self.pivots.push(old_pj);
                    (3, vec![j, self.pivots.len()])
                }
                _ => {
                    self.guard_growth(arrival, 2)?;
                    let (f, g) = (qualifying[0], qualifying[1]);
                    let old_pf = self.pivots[f - 1];
                    let old_pg = self.pivots[g - 1];
                    self.pivots.push(old_pf);
                    self.pivots.push(old_pg);
                    self.pivots[f - 1] = self.centers[f - 1];
                    self.pivots[g - 1] = self.centers[g - 1];
                    (4, vec![f, g, self.pivots.len() - 1, self.pivots.len()])
                }
            }
        };

        self.add_counts[(case - 1) as usize] += 1;
        self.enter_phase(self.pivots.len());
        let mut involved: Vec<PointId> = self.pivots.clone();
        involved.push(x_alpha);
        involved.extend(pivots_before.iter().map(|&p| PointId(p)));
        involved.extend_from_slice(&self.centers);
        let wit = self.witness(&involved, Some(w_prev), w_cur);
        self.events.push(PhaseEvent::Add {
            i: arrival,
            case,
            x_alpha: x_alpha.0,
            labels,
            t_before: pivots_before.len(),
            t_after: self.pivots.len(),
            pivots_before,
            pivots_after: self.pivots.iter().map(|p| p.0).collect(),
            wit,
        });
        Ok(())
    }

    fn apply_exchange(
        &mut self,
        arrival: usize,
        x_alpha: PointId,
        x_gamma: PointId,
        j: usize,
        entry_t: usize,
        w_prev: &WeightSnapshot,
        w_cur: &WeightSnapshot,
    ) -> Result<(), EngineError> {
        let t = self.pivots.len();
        let beta2 = self.beta_at(t + 2);
        let pivots_before: Vec<u32> = self.pivots.iter().map(|p| p.0).collect();

        let case: u8 = if j > entry_t {
            1
        } else {
            let c = self.centers[j - 1];
            let wc = self.w_of(w_cur, c);
            if wc < self.w_of(w_cur, self.pivots[j - 1]) {
                2
            } else if is_attached(
                wc,
                self.w_of(w_cur, x_alpha),
                self.store.dist(c, x_alpha),
                beta2,
                self.b_eff,
            ) {
                3
            } else if is_attached(
                wc,
                self.w_of(w_cur, x_gamma),
                self.store.dist(c, x_gamma),
                beta2,
                self.b_eff,
            ) {
                4
            } else {
                5
            }
        };

        match case {
            1..=3 => {
                self.guard_growth(arrival, 1)?;
                self.pivots[j - 1] = x_alpha;
                self.pivots.push(x_gamma);
            }
            4 => {
                self.guard_growth(arrival, 1)?;
                self.pivots[j - 1] = x_gamma;
                self.pivots.push(x_alpha);
            }
            _ => {
                self.guard_growth(arrival, 2)?;
                self.pivots.push(x_alpha);
                self.pivots.push(x_gamma);
                self.pivots[j - 1] = self.centers[j - 1];
            }
        }

        self.exchange_counts[(case - 1) as usize] += 1;
        self.enter_phase(self.pivots.len());
        let mut involved: Vec<PointId> = self.pivots.clone();
        involved.push(x_alpha);
        involved.push(x_gamma);
        involved.extend(pivots_before.iter().map(|&p| PointId(p)));
        involved.extend_from_slice(&self.centers);
        let wit = self.witness(&involved, Some(w_prev), w_cur);
        self.events.push(PhaseEvent::Exchange {
            i: arrival,
            case,
            x_alpha: x_alpha.0,
            x_gamma: x_gamma.0,
            j,
            t_before: pivots_before.len(),
            t_after: self.pivots.len(),
            pivots_before,
            pivots_after: self.pivots.iter().map(|p| p.0).collect(),
            wit,
        });
        Ok(())
    }

    /// Labels assigned so far, 1-based, indexed by point id.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn events(&self) -> &[PhaseEvent] {
        &self.events
    }

    /// Cluster-based objective: per nonempty label, the best in-cluster
    /// medoid cost; plus the secondary cost against estimated centers.
    fn final_costs(&self) -> (Real, Option<Real>) {
        let total = cluster_based_cost(&self.store, &self.labels);
        let est = if self.centers.is_empty() {
            None
        } else {
            let mut acc = 0.0;
            let mut any = false;
            for (j, &c) in self.centers.iter().enumerate() {
                let members: Vec<PointId> = self
                    .labels
                    .iter()
                    .enumerate()
                    .filter(|&(_, &l)| l == j + 1)
                    .map(|(p, _)| PointId(p as u32))
                    .collect();
                if !members.is_empty() {
                    any = true;
                    acc += offline::cost(&self.store, &members, c);
                }
            }
            any.then_some(acc)
        };
        (total, est)
    }

    /// Seal the run: append the summary event and hand everything back.
    pub fn finish(mut self) -> RunResult {
        let (final_cost, est_center_cost) = self.final_costs();
        let labels_used = {
            let mut seen = std::collections::BTreeSet::new();
            for &l in &self.labels {
                seen.insert(l);
            }
            seen.len()
        };
        let intermediate = self.phases.iter().filter(|p| p.labeled == 0).count();
        let summary = RunSummary {
            n: self.labels.len(),
            k: self.cfg.k,
            b_user: self.cfg.budget,
            b_eff: self.b_eff,
            labels_used,
            pivot_count: self.pivots.len(),
            phases: self.phases.len(),
            intermediate_phases: intermediate,
            add_counts: self.add_counts,
            exchange_counts: self.exchange_counts,
            final_cost,
            cost_over_b_eff: if self.b_eff > 0.0 {
                final_cost / self.b_eff
            } else {
                Real::NAN
            },
            est_center_cost,
            violated: self.violated,
        };
        self.events.push(PhaseEvent::Summary {
            n: summary.n,
            labels_used: summary.labels_used,
            pivot_count: summary.pivot_count,
            phases: summary.phases,
            intermediate_phases: summary.intermediate_phases,
            add_counts: summary.add_counts,
            exchange_counts: summary.exchange_counts,
            final_cost: summary.final_cost,
            cost_over_b_eff: summary.cost_over_b_eff,
            est_center_cost: summary.est_center_cost,
            violated: summary.violated,
        });
        RunResult {
            events: self.events,
            labels: self.labels,
            pivots: self.pivots,
            centers: self.centers,
            summary,
            store: self.store,
        }
    }
}

/// Sum over nonempty labels of the best in-cluster medoid cost.
pub fn cluster_based_cost(store: &PointStore<Real>, labels: &[usize]) -> Real {
    let max_label = labels.iter().copied().max().unwrap_or(0);
    let mut total = 0.0;
    for j in 1..=max_label {
        let members: Vec<PointId> = labels
            .iter()
            .enumerate()
            .filter(|&(_, &l)| l == j)
            .map(|(p, _)| PointId(p as u32))
            .collect();
        if members.is_empty() {
            continue;
        }
        // Dedup candidate medoids by location; co-located medoids tie.
        let mut seen = std::collections::BTreeSet::new();
        let mut best = Real::INFINITY;
        for &c in &members {
            if !seen.insert(store.loc_of(c).0) {
                continue;
            }
            let mut acc = 0.0;
            for &p in &members {
                acc += store.dist(p, c);
            }
            if acc < best {
                best = acc;
            }
        }
        total += best;
    }
    total
}

/// Drive a full Euclidean stream through a fresh engine. On a budget
/// violation the partial trace (with its violation event) is still returned.
pub fn run_on_coords(
    cfg: EngineConfig,
    kind: MetricKind,
    dim: usize,
    points: &[Vec<Real>],
) -> Result<RunResult, EngineError> {
    let mut eng = Engine::new(cfg, Geometry::Euclidean { kind, dim })?;
    for coords in points {
        match eng.step_coords(coords) {
            Ok(_) => {}
            Err(EngineError::BudgetViolation { .. }) => return Ok(eng.finish()),
            Err(e) => return Err(e),
        }
    }
    Ok(eng.finish())
}

/// Same for a matrix-backed stream (all points preloaded, replayed in order).
pub fn run_on_matrix(cfg: EngineConfig, matrix: Vec<Vec<Real>>) -> Result<RunResult, EngineError> {
    let mut eng = Engine::new(cfg, Geometry::Matrix(matrix))?;
    let n = eng.store.len();
    for _ in 0..n {
        match eng.step_next() {
            Ok(_) => {}
            Err(EngineError::BudgetViolation { .. }) => return Ok(eng.finish()),
            Err(e) => return Err(e),
        }
    }
    Ok(eng.finish())
}
