//! Online k-median clustering with irrevocable labels under a budget
//! prediction.
//!
//! Points arrive one at a time and each must receive a cluster label on
//! arrival that never changes afterwards. The engine is given an a-priori
//! budget `B` upper-bounding the final optimal k-median cost; it maintains a
//! set of well-separated *pivots* (one per label), greedy-assigns arrivals to
//! the nearest pivot, and restructures the pivot set through Add and
//! Exchange operations driven by natural weights.
//!
//! The crate also ships the offline solvers the engine consumes, a baseline
//! greedy labeler that the classic trap instance defeats, an adaptive
//! adversary realizing the `(k-1)/2` lower bound, instance generators, and an
//! auditor that replays traces and independently checks every structural
//! invariant and cost bound.

pub mod audit;
pub mod engine;
pub mod greedy;
pub mod instances;
pub mod io;
pub mod metric;
pub mod offline;
pub mod scalar;
pub mod separation;
pub mod trace;
pub mod weights;

pub use metric::{LocId, MetricKind, PointId, PointStore};
pub use scalar::{Real, Scalar};
pub use weights::{natural_weight, Weight, WeightIndex, WeightSnapshot};

/// Point store at the default scalar.
pub type Store = PointStore<Real>;
