use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gate::distance::DistanceMetric;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalVerdict {
    Commit,
    Rollback,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Accept => "accept",
            Verdict::Reject => "reject",
        }
    }
}

impl TemporalVerdict {
    pub fn as_str(self) -> &'static str {
        match self {
            TemporalVerdict::Commit => "commit",
            TemporalVerdict::Rollback => "rollback",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub verdict: Verdict,
    pub delta: f64,
    pub delta_max_before: f64,
    pub delta_max_after: f64,
}

/// Running-maximum threshold gate.
///
/// After warmup an update with distance `delta` passes iff
/// `delta <= th_delta * delta_max`. Only accepted distances (and every
/// warmup distance) can raise `delta_max`. While `delta_max` is still zero
/// after warmup the bound is the absolute `delta_floor` instead, since a
/// multiplicative bound on zero would never admit anything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateState {
    th_delta: f64,
    delta_max: f64,
    warmup_rounds_remaining: usize,
    metric: DistanceMetric,
    delta_floor: f64,
}

impl GateState {
    pub const DEFAULT_THRESHOLD: f64 = 2.0;
    pub const DEFAULT_FLOOR: f64 = 1e-6;

    pub fn new(th_delta: f64, warmup_rounds: usize, metric: DistanceMetric) -> Result<Self> {
        if !th_delta.is_finite() || th_delta <= 1.0 {
            return Err(Error::invalid(
                "threshold_factor",
                format!("must be a finite value > 1, got {th_delta}"),
            ));
        }
        Ok(Self {
            th_delta,
            delta_max: 0.0,
            warmup_rounds_remaining: warmup_rounds,
            metric,
            delta_floor: Self::DEFAULT_FLOOR,
        })
    }

    /// Starts from a given running maximum (fixtures and replays).
    pub fn with_delta_max(mut self, delta_max: f64) -> Self {
        self.delta_max = delta_max.max(0.0);
        self
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.delta_floor = floor.max(0.0);
        self
    }

    pub fn th_delta(&self) -> f64 {
        self.th_delta
    }

    pub fn delta_max(&self) -> f64 {
        self.delta_max
    }

    pub fn metric(&self) -> DistanceMetric {
        self.metric
    }

    pub fn delta_floor(&self) -> f64 {
        self.delta_floor
    }

    pub fn warmup_rounds_remaining(&self) -> usize {
        self.warmup_rounds_remaining
    }

    pub fn in_warmup(&self) -> bool {
        self.warmup_rounds_remaining > 0
    }

    /// Largest distance that currently passes (ignoring warmup).
    pub fn bound(&self) -> f64 {
        if self.delta_max == 0.0 {
            self.delta_floor
        } else {
            self.th_delta * self.delta_max
        }
    }

    fn check(delta: f64) -> Result<()> {
        if !delta.is_finite() {
            return Err(Error::NonFinite("gate delta"));
        }
        if delta < 0.0 {
            return Err(Error::invalid(
                "delta",
                format!("must be non-negative, got {delta}"),
            ));
        }
        Ok(())
    }

    /// Per-client decision; updates the running maximum on acceptance.
    pub fn spatial(&mut self, delta: f64) -> Result<GateDecision> {
        Self::check(delta)?;
        let before = self.delta_max;
        let verdict = if self.in_warmup() || delta <= self.bound() {
            Verdict::Accept
        } else {
            Verdict::Reject
        };
        if verdict == Verdict::Accept && delta > self.delta_max {
            self.delta_max = delta;
        }
        Ok(GateDecision {
            verdict,
            delta,
            delta_max_before: before,
            delta_max_after: self.delta_max,
        })
    }

    /// Whole-model continuity check; never touches the running maximum.
    pub fn temporal(&self, delta: f64) -> Result<TemporalVerdict> {
        Self::check(delta)?;
        Ok(if self.in_warmup() || delta <= self.bound() {
            TemporalVerdict::Commit
        } else {
            TemporalVerdict::Rollback
        })
    }

    /// Marks the end of a global round (consumes one warmup round).
    pub fn end_round(&mut self) {
        self.warmup_rounds_remaining = self.warmup_rounds_remaining.saturating_sub(1);
    }
}

/// Functional form of [`GateState::spatial`].
pub fn gate_spatial(state: &GateState, delta: f64) -> Result<(GateDecision, GateState)> {
    let mut next = state.clone();
    let decision = next.spatial(delta)?;
    Ok((decision, next))
}

pub fn gate_temporal(state: &GateState, delta: f64) -> Result<TemporalVerdict> {
    state.temporal(delta)
}
