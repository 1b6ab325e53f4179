//! Prediction-distance between model states over the reference set, and the
//! threshold gate that accepts or rejects updates by that distance.

mod distance;
mod state;

pub use distance::{
    dynbc_distance, prediction_distance, prediction_of, DistanceMetric, Predictions,
};
pub use state::{gate_spatial, gate_temporal, GateDecision, GateState, TemporalVerdict, Verdict};

use serde::{Deserialize, Serialize};

/// Who a logged gate decision was about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateSubject {
    Client(usize),
    Temporal,
}

impl std::fmt::Display for GateSubject {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GateSubject::Client(id) => write!(f, "{id}"),
            GateSubject::Temporal => f.write_str("temporal"),
        }
    }
}

/// One row of the per-round gate log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateEvent {
    pub round: usize,
    pub subject: GateSubject,
    pub delta: f64,
    pub delta_max_before: f64,
    /// `accept`/`reject` for clients, `commit`/`rollback` for the temporal check.
    pub verdict: String,
}
