//! Instance generators and the adaptive lower-bound adversary.
//!
//! Each generator returns a full [`Instance`]: the point sequence, the
//! budget the run should use, and (when the family certifies one) an upper
//! bound on the exact offline optimum. The adversary is interactive: it
//! observes the labels an online algorithm actually assigns and branches on
//! them, so it is valid against any labeler that honors irrevocability.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::engine::cluster_based_cost;
use crate::metric::{MetricKind, PointId, PointStore};
use crate::offline::{exact_kmedian, exact_subset_count, local_search_kmedian, SolverError};
use crate::scalar::Real;
use crate::separation::beta;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    Fig1,
    BetaHalving,
    LabelConflict,
    PlantedRandom,
    Lowerbound,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Family::Fig1 => "fig1",
            Family::BetaHalving => "beta-halving",
            Family::LabelConflict => "label-conflict",
            Family::PlantedRandom => "planted-random",
            Family::Lowerbound => "lowerbound",
        };
        write!(f, "{s}")
    }
}

/// A generated stream plus the run parameters it was built for.
#[derive(Debug, Clone)]
pub struct Instance {
    pub family: Family,
    pub kind: MetricKind,
    pub dim: usize,
    pub k: usize,
    pub budget: Real,
    /// Certified upper bound on the exact offline optimum of the full
    /// stream, when the generator can vouch for one.
    pub certified_opt: Option<Real>,
    pub points: Vec<Vec<Real>>,
    pub seed: u64,
    pub params: serde_json::Value,
}

impl Instance {
    pub fn n(&self) -> usize {
        self.points.len()
    }

    /// The generator's feasibility claim: certified optimum within budget.
    pub fn feasible(&self) -> bool {
        matches!(self.certified_opt, Some(o) if o <= self.budget)
    }

    pub fn store(&self) -> PointStore<Real> {
        let mut st = PointStore::new_euclidean(self.kind, self.dim);
        for p in &self.points {
            st.push(p).expect("generator emits consistent dims");
        }
        st
    }

    pub fn to_stream_file(&self) -> crate::io::StreamFile {
        let mut meta = crate::io::StreamMeta::new();
        meta.family = Some(self.family.to_string());
        meta.k = Some(self.k);
        meta.b = Some(self.budget);
        meta.opt_bound = self.certified_opt;
        meta.metric = Some(self.kind);
        meta.dim = Some(self.dim);
        meta.seed = Some(self.seed);
        meta.feasible = Some(self.feasible());
        meta.params = self.params.clone();
        crate::io::StreamFile {
            meta: Some(meta),
            points: self
                .points
                .iter()
                .enumerate()
                .map(|(i, c)| crate::io::StreamPoint {
                    id: i as u32,
                    coords: Some(c.clone()),
                })
                .collect(),
        }
    }
}

/// The greedy-trap line instance: one point at -2, then `alpha + 1` points
/// at 1, then `alpha` points at 0, with budget 2 and k = 2. The exact
/// 2-median optimum is 2 (centers at 1 and 0; the point at -2 pays 2).
pub fn gen_fig1(alpha: usize) -> Instance {
    assert!(alpha >= 1);
    let mut points = vec![vec![-2.0]];
    points.extend(std::iter::repeat_n(vec![1.0], alpha + 1));
    points.extend(std::iter::repeat_n(vec![0.0], alpha));
    Instance {
        family: Family::Fig1,
        kind: MetricKind::L2,
        dim: 1,
        k: 2,
        budget: 2.0,
        certified_opt: Some(2.0),
        points,
        seed: 0,
        params: serde_json::json!({ "alpha": alpha }),
    }
}

/// Why the separation parameter must at least halve per phase: two pivots a
/// full `beta_2 * B` apart and two probe locations just inside the midpoint,
/// `2 * epsilon` from each other (`epsilon = B / 100`). With the standard
/// schedule the first probe is already `beta_3`-separated from both pivots
/// and becomes a pivot at once; a schedule decaying slower than 1/2 keeps
/// both probes attached to both (weight-1) pivots forever, so their mass
/// accumulates cost with every duplicate. k = 4 keeps the four locations
/// individually clusterable: the exact optimum is 0.
pub fn gen_beta_halving(duplicates: usize) -> Instance {
    assert!(duplicates >= 1);
    let k = 4;
    let b: Real = 1.0;
    let eps = b / 100.0;
    // Span chosen so that even the 0.9-ratio regression schedule creates the
    // second pivot: max(beta_2, 0.9 * beta_1) * B = 0.9 * beta_1 = 1749.6.
    let span = 1750.0;
    let x = span / 2.0 - 3.0 * eps;
    let y = span / 2.0 - eps;
    let mut points = vec![vec![0.0], vec![span]];
    for _ in 0..duplicates {
        points.push(vec![x]);
    }
    for _ in 0..duplicates {
        points.push(vec![y]);
    }
    debug_assert!(span >= beta::<Real>(2, k).unwrap() * b);
    Instance {
        family: Family::BetaHalving,
        kind: MetricKind::L2,
        dim: 1,
        k,
        budget: b,
        certified_opt: Some(0.0),
        points,
        seed: 0,
        params: serde_json::json!({ "duplicates": duplicates, "epsilon": eps, "span": span }),
    }
}

/// The two-pivots-in-one-shot configuration: a heavy mass next to a light
/// pivot becomes the estimated center for label 1, and two probe groups
/// flanking it fire an Exchange whose center is separated from both probes,
/// minting two labels in a single operation. Six distinct locations with
/// k = 6, so the exact optimum is 0 and the budget premise holds.
pub fn gen_label_conflict() -> Instance {
    let k = 6;
    let b: Real = 1.0;
    let mut points: Vec<Vec<Real>> = Vec::new();
    points.push(vec![0.0, 0.0]); // pivot 1
    points.push(vec![5900.0, 0.0]); // pivot 2 (beta_2 = 5832 gate)
    points.push(vec![-5900.0, 0.0]); // pivot 3 (beta_3 = 1944 gate)
    for _ in 0..50 {
        points.push(vec![-120.0, 0.0]); // heavy mass -> estimated center c_1
    }
    for _ in 0..2 {
        points.push(vec![60.0, 200.0]); // probe alpha
    }
    for _ in 0..2 {
        points.push(vec![60.0, -200.0]); // probe gamma
    }
    Instance {
        family: Family::LabelConflict,
        kind: MetricKind::L2,
        dim: 2,
        k,
        budget: b,
        certified_opt: Some(0.0),
        points,
        seed: 0,
        params: serde_json::json!({ "mass": 50, "probes": 2 }),
    }
}

/// Gaussian-ish blobs (uniform jitter), shuffled arrival order, budget set
/// from the exact optimum when enumerable and from five times the
/// local-search cost otherwise. `spread = 0` plants coincident blobs and a
/// tiny positive budget floor.
pub fn gen_planted(
    clusters: usize,
    spread: Real,
    n: usize,
    dim: usize,
    seed: u64,
) -> Result<Instance, SolverError> {
    assert!(clusters >= 1 && n >= clusters && dim >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 200.0 * (spread.max(1.0)) * clusters as Real;
    let centers: Vec<Vec<Real>> = (0..clusters)
        .map(|_| (0..dim).map(|_| rng.gen_range(0.0..scale)).collect())
        .collect();
    let mut points: Vec<Vec<Real>> = (0..n)
        .map(|i| {
            let c = &centers[i % clusters];
            (0..dim)
                .map(|d| c[d] + rng.gen_range(-spread..=spread))
                .collect()
        })
        .collect();
    points.shuffle(&mut rng);

    let mut st = PointStore::new_euclidean(MetricKind::L2, dim);
    for p in &points {
        st.push(p).expect("dims consistent");
    }
    let ids: Vec<PointId> = (0..n as u32).map(PointId).collect();
    let cap = 1_000_000u64;
    let locs = st.loc_count_in_prefix(n);
    let (budget, certified) = if exact_subset_count(locs, clusters) <= cap as u128 {
        let (_, cl) = exact_kmedian(&st, &ids, clusters, cap)?;
        (cl.cost.max(1e-6), cl.cost)
    } else {
        let (_, cl) = local_search_kmedian(&st, &ids, clusters, 1)?;
        ((5.0 * cl.cost).max(1e-6), cl.cost)
    };
    Ok(Instance {
        family: Family::PlantedRandom,
        kind: MetricKind::L2,
        dim,
        k: clusters,
        budget,
        certified_opt: Some(certified),
        points,
        seed,
        params: serde_json::json!({ "clusters": clusters, "spread": spread, "n": n, "dim": dim }),
    })
}

/// Online labeler the adversary probes. Implementations must honor
/// irrevocability (each call assigns the label of the point fed to it).
pub trait Labeler {
    /// Label the next arrival; labels are 1-based.
    fn label_next(&mut self, coords: &[Real]) -> Result<usize, String>;
}

#[derive(Debug, Clone)]
pub struct AdversaryConfig {
    pub k: usize,
    pub budget: Real,
    /// Punishment distance multiplier; anything comfortably large works.
    pub l_mult: Real,
    /// Points per cluster batch, at least `10 k^2`.
    pub cluster_size: usize,
}

impl AdversaryConfig {
    pub fn new(k: usize, budget: Real) -> Self {
        AdversaryConfig {
            k,
            budget,
            l_mult: 1000.0 * k as Real,
            cluster_size: 10 * k * k,
        }
    }
}

#[derive(Debug, Error)]
pub enum AdversaryError {
    #[error("labeler returned label {label} > k = {k} at point {point}")]
    Protocol {
        label: usize,
        k: usize,
        point: usize,
    },
    #[error("labeler failed: {0}")]
    Labeler(String),
    #[error("solver: {0}")]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum AdversaryBranch {
    /// Every probe joined an existing label; all phases ran.
    Completed,
    /// The probe of this phase was given a fresh label; the far points
    /// punished it.
    Punished { phase: usize },
}

#[derive(Debug, Clone)]
pub struct AdversaryOutcome {
    pub points: Vec<Vec<Real>>,
    pub labels: Vec<usize>,
    pub achieved_cost: Real,
    pub exact_opt: Real,
    pub branch: AdversaryBranch,
}

/// Run the adaptive lower-bound adversary against `alg`.
///
/// Batches of `cluster_size` points at the origin, then per phase `i` a
/// probe at `B * e_i`: if the algorithm spends a brand-new label on the
/// probe, `k - i` punishment points land at `l_mult * B` along fresh axes
/// and the game ends; otherwise the rest of the batch arrives at the probe
/// location and the next phase starts. Either way the emitted stream admits
/// an offline clustering of cost at most `B`, while the algorithm pays at
/// least `(k - 1) / 2 * B`.
pub fn run_lower_bound_adversary(
    alg: &mut dyn Labeler,
    cfg: &AdversaryConfig,
) -> Result<AdversaryOutcome, AdversaryError> {
    assert!(cfg.k >= 2);
    assert!(cfg.cluster_size >= 10 * cfg.k * cfg.k);
    let dim = cfg.k;
    let mut points: Vec<Vec<Real>> = Vec::new();
    let mut labels: Vec<usize> = Vec::new();
    let mut seen_labels = std::collections::BTreeSet::new();

    let mut feed = |points: &mut Vec<Vec<Real>>,
                    labels: &mut Vec<usize>,
                    seen: &mut std::collections::BTreeSet<usize>,
                    coords: Vec<Real>|
     -> Result<usize, AdversaryError> {
        let label = alg.label_next(&coords).map_err(AdversaryError::Labeler)?;
        if label == 0 || label > cfg.k {
            return Err(AdversaryError::Protocol {
                label,
                k: cfg.k,
                point: points.len(),
            });
        }
        points.push(coords);
        labels.push(label);
        let fresh = seen.insert(label);
        Ok(if fresh { 1 } else { 0 })
    };

    let axis = |d: usize, v: Real| -> Vec<Real> {
        let mut c = vec![0.0; dim];
        c[d] = v;
        c
    };

    for _ in 0..cfg.cluster_size {
        feed(&mut points, &mut labels, &mut seen_labels, vec![0.0; dim])?;
    }

    let mut branch = AdversaryBranch::Completed;
    'phases: for i in 1..cfg.k {
        let probe = axis(i - 1, cfg.budget);
        let fresh = feed(&mut points, &mut labels, &mut seen_labels, probe.clone())?;
        if fresh == 1 {
            // Premature label: punish along the unused axes and stop.
            for l in 1..=(cfg.k - i) {
                let far = axis(i - 1 + l, cfg.l_mult * cfg.budget);
                feed(&mut points, &mut labels, &mut seen_labels, far)?;
            }
            branch = AdversaryBranch::Punished { phase: i };
            break 'phases;
        }
        for _ in 0..(cfg.cluster_size - 1) {
            feed(&mut points, &mut labels, &mut seen_labels, probe.clone())?;
        }
    }

    let mut st = PointStore::new_euclidean(MetricKind::L2, dim);
    for p in &points {
        st.push(p).expect("dims consistent");
    }
    let achieved = cluster_based_cost(&st, &labels);
    let ids: Vec<PointId> = (0..points.len() as u32).map(PointId).collect();
    let (_, opt) = exact_kmedian(&st, &ids, cfg.k, 10_000_000)?;
    Ok(AdversaryOutcome {
        points,
        labels,
        achieved_cost: achieved,
        exact_opt: opt.cost,
        branch,
    })
}
