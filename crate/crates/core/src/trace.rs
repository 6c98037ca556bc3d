//! Trace records: one JSON line per structural event, replayable to the
//! exact final state.
//!
//! Every event carries the 1-based arrival index `i` it happened at, full
//! pivot snapshots before and after (structural events), and the natural
//! weights of the points it involves under both `w_{i-1}` and `w_i`, so a
//! reader can re-check the firing condition arithmetic without recomputing
//! anything. The auditor does recompute everything anyway and treats these
//! fields as cross-checks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metric::MetricKind;
use crate::scalar::Real;

pub const TRACE_SCHEMA_VERSION: u32 = 1;

/// Natural weight of `point` before (`w_prev`, i.e. over `X_{i-1}`) and
/// after (`w_cur`, over `X_i`) the arrival the enclosing event belongs to.
/// `w_prev` is absent for points whose first arrival is `i` itself.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WeightWitness {
    pub point: u32,
    pub w_prev: Option<u32>,
    pub w_cur: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "snake_case")]
pub enum PhaseEvent {
    /// Header line: run configuration, written once before any event.
    Meta {
        schema: u32,
        k: usize,
        b_user: Real,
        b_eff: Real,
        solver: String,
        metric: MetricKind,
    },
    /// First arrival becomes pivot 1.
    Init { i: usize, point: u32, label: usize },
    /// Estimated centers recomputed at an outer-loop entry. `y` are the
    /// offline centers for the prefix `X_{i-1}`, `y_pivot[h]` the label of
    /// the pivot with minimum weighted distance to `y[h]`, and `centers[j-1]`
    /// the chosen estimated center for label `j`.
    EstimatedCenters {
        i: usize,
        t: usize,
        y: Vec<u32>,
        y_pivot: Vec<usize>,
        centers: Vec<u32>,
        pivots: Vec<u32>,
        wit: Vec<WeightWitness>,
    },
    /// Add operation, cases 1-4. `labels` are the labels whose pivots were
    /// minted or moved (minted labels last).
    Add {
        i: usize,
        case: u8,
        x_alpha: u32,
        labels: Vec<usize>,
        t_before: usize,
        t_after: usize,
        pivots_before: Vec<u32>,
        pivots_after: Vec<u32>,
        wit: Vec<WeightWitness>,
    },
    /// Exchange operation, cases 1-5, on pivot `j`.
    Exchange {
        i: usize,
        case: u8,
        x_alpha: u32,
        x_gamma: u32,
        j: usize,
        t_before: usize,
        t_after: usize,
        pivots_before: Vec<u32>,
        pivots_after: Vec<u32>,
        wit: Vec<WeightWitness>,
    },
    /// Irrevocable label assignment of the arrival itself.
    Label {
        i: usize,
        point: u32,
        label: usize,
        dist: Real,
    },
    /// The run aborted: the operation loop or the labeling step needed more
    /// labels than the budget premise permits.
    BudgetViolation { i: usize, t: usize, reason: String },
    /// Final record.
    Summary {
        n: usize,
        labels_used: usize,
        pivot_count: usize,
        phases: usize,
        intermediate_phases: usize,
        add_counts: [u64; 4],
        exchange_counts: [u64; 5],
        final_cost: Real,
        cost_over_b_eff: Real,
        est_center_cost: Option<Real>,
        violated: bool,
    },
}

impl PhaseEvent {
    pub fn arrival(&self) -> Option<usize> {
        match self {
            PhaseEvent::Init { i, .. }
            | PhaseEvent::EstimatedCenters { i, .. }
            | PhaseEvent::Add { i, .. }
            | PhaseEvent::Exchange { i, .. }
            | PhaseEvent::Label { i, .. }
            | PhaseEvent::BudgetViolation { i, .. } => Some(*i),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {0}: {1}")]
    Parse(usize, serde_json::Error),
    #[error("trace is empty")]
    Empty,
    #[error("first record must be meta")]
    MissingMeta,
    #[error("replay: {0}")]
    Replay(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn write_trace<W: std::io::Write>(mut w: W, events: &[PhaseEvent]) -> Result<(), TraceError> {
    for ev in events {
        serde_json::to_writer(&mut w, ev).map_err(|e| TraceError::Parse(0, e))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn trace_to_string(events: &[PhaseEvent]) -> String {
    let mut buf = Vec::new();
    write_trace(&mut buf, events).expect("writing to Vec cannot fail");
    String::from_utf8(buf).expect("serde_json emits UTF-8")
}

pub fn parse_trace(text: &str) -> Result<Vec<PhaseEvent>, TraceError> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| TraceError::Parse(lineno + 1, e))?);
    }
    if out.is_empty() {
        return Err(TraceError::Empty);
    }
    Ok(out)
}

/// State rebuilt purely from the event log, without re-running any decision
/// logic. The engine's final state must match this exactly.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayState {
    pub pivots: Vec<u32>,
    pub centers: Vec<u32>,
    pub labels: Vec<(u32, usize)>,
    pub violated: bool,
}

pub fn replay_trace(events: &[PhaseEvent]) -> Result<ReplayState, TraceError> {
    let mut st = ReplayState {
        pivots: Vec::new(),
        centers: Vec::new(),
        labels: Vec::new(),
        violated: false,
    };
    if !matches!(events.first(), Some(PhaseEvent::Meta { .. })) {
        return Err(TraceError::MissingMeta);
    }
    for ev in events {
        match ev {
            PhaseEvent::Meta { .. } | PhaseEvent::Summary { .. } => {}
            PhaseEvent::Init { point, label, .. } => {
                if !st.pivots.is_empty() {
                    return Err(TraceError::Replay("duplicate init".into()));
                }
                st.pivots.push(*point);
                st.labels.push((*point, *label));
            }
            PhaseEvent::EstimatedCenters { centers, t, .. } => {
                if *t != st.pivots.len() {
                    return Err(TraceError::Replay(format!(
                        "estimated centers at t={t} but replay has {} pivots",
                        st.pivots.len()
                    )));
                }
                st.centers = centers.clone();
            }
            PhaseEvent::Add {
                t_before,
                t_after,
                pivots_before,
                pivots_after,
                ..
            }
            | PhaseEvent::Exchange {
                t_before,
                t_after,
                pivots_before,
                pivots_after,
                ..
            } => {
                if *pivots_before != st.pivots {
                    return Err(TraceError::Replay(format!(
                        "pivot chain mismatch: event expects {:?}, replay has {:?}",
                        pivots_before, st.pivots
                    )));
                }
                if pivots_after.len() != *t_after || pivots_before.len() != *t_before {
                    return Err(TraceError::Replay("pivot count mismatch".into()));
                }
                st.pivots = pivots_after.clone();
            }
            PhaseEvent::Label { point, label, .. } => {
                st.labels.push((*point, *label));
            }
            PhaseEvent::BudgetViolation { .. } => {
                st.violated = true;
            }
        }
    }
    Ok(st)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_through_jsonl() {
        let events = vec![
            PhaseEvent::Meta {
                schema: TRACE_SCHEMA_VERSION,
                k: 2,
                b_user: 2.0,
                b_eff: 2.0,
                solver: "exact".into(),
                metric: MetricKind::L2,
            },
            PhaseEvent::Init {
                i: 1,
                point: 0,
                label: 1,
            },
            PhaseEvent::Label {
                i: 2,
                point: 1,
                label: 1,
                dist: 3.0,
            },
        ];
        let text = trace_to_string(&events);
        let parsed = parse_trace(&text).unwrap();
        assert_eq!(events, parsed);
        let st = replay_trace(&parsed).unwrap();
        assert_eq!(st.pivots, vec![0]);
        assert_eq!(st.labels, vec![(0, 1), (1, 1)]);
        assert!(!st.violated);
    }

    #[test]
    fn replay_rejects_broken_chain() {
        let events = vec![
            PhaseEvent::Meta {
                schema: TRACE_SCHEMA_VERSION,
                k: 2,
                b_user: 1.0,
                b_eff: 1.0,
                solver: "exact".into(),
                metric: MetricKind::L2,
            },
            PhaseEvent::Init {
                i: 1,
                point: 0,
                label: 1,
            },
            PhaseEvent::Add {
                i: 2,
                case: 2,
                x_alpha: 1,
                labels: vec![2],
                t_before: 1,
                t_after: 2,
                pivots_before: vec![99],
                pivots_after: vec![99, 1],
                wit: vec![],
            },
        ];
        assert!(replay_trace(&events).is_err());
    }

    #[test]
    fn meta_must_lead() {
        let events = vec![PhaseEvent::Init {
            i: 1,
            point: 0,
            label: 1,
        }];
        assert!(matches!(
            replay_trace(&events),
            Err(TraceError::MissingMeta)
        ));
    }
}
