//! Desk-scale federated-continual segmentation simulator.
//!
//! Client updates and continual model updates are accepted or rejected by
//! how far they move the model's predictions on an augmented public
//! reference set. The crate covers the numerical core ([`nn`]), synthetic
//! data and shifts ([`synth`]), the distance gate ([`gate`]), the training
//! process and baselines ([`federation`]) and evaluation/reporting
//! ([`metrics`]).

pub mod config;
pub mod error;
pub mod federation;
pub mod gate;
pub mod metrics;
pub mod nn;
pub mod synth;
pub mod tensor;

pub use config::{Method, PoisonSpec, Scenario, ScenarioConfig, ShiftKind, DESK_LR, PRESETS};
pub use error::{Error, Result};
pub use gate::{
    DistanceMetric, GateDecision, GateEvent, GateState, GateSubject, TemporalVerdict, Verdict,
};
pub use metrics::{HistoryRow, RunHistory, RunMeta, SummaryRow};
pub use nn::{AdamState, Arch, ModelParams};
pub use synth::{Augmentation, Patch, ReferenceSet};
pub use tensor::Tensor;
