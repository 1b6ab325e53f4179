//! Scenario configuration, named desk-scale presets and validation.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gate::DistanceMetric;
use crate::synth::{Augmentation, NOISE_VAR_LIMIT};

macro_rules! string_enum {
    ($name:ident, $field:literal { $($variant:ident => $text:literal),+ $(,)? }) => {
        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(Error::invalid(
                        $field,
                        format!("unknown value `{other}` (expected one of: {})", [$($text),+].join(", ")),
                    )),
                }
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Spatial shift only: a fixed subset of clients trains on shifted data.
    Cd,
    /// Temporal shift only: one model, clean stage then shifted stage.
    Cf,
    /// Clean federated stage, then most clients switch to shifted data.
    Combined,
}
string_enum!(Scenario, "scenario" { Cd => "cd", Cf => "cf", Combined => "combined" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Plain FedAvg, every update committed.
    Baseline,
    /// FedAvg behind the prediction-distance gate.
    Dynbc,
    /// Plain FedAvg with a 10% replay buffer of unshifted data.
    Rehearsal,
    /// Adam on the server pseudo-gradient.
    Fedadam,
}
string_enum!(Method, "method" { Baseline => "baseline", Dynbc => "dynbc", Rehearsal => "rehearsal", Fedadam => "fedadam" });

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShiftKind {
    Blur,
    BrightnessStrong,
    BrightnessMild,
    Noise,
}
string_enum!(ShiftKind, "shift" {
    Blur => "blur",
    BrightnessStrong => "brightness_strong",
    BrightnessMild => "brightness_mild",
    Noise => "noise",
});

impl ShiftKind {
    /// Training-data shift at 32×32 scale (blur kernel 19/σ 8 rescaled by 1/8).
    pub fn augmentation(self) -> Augmentation {
        match self {
            ShiftKind::Blur => Augmentation::GaussianBlur {
                kernel: 3,
                sigma: 1.0,
            },
            ShiftKind::BrightnessStrong => Augmentation::Brightness { factor: 2.0 },
            ShiftKind::BrightnessMild => Augmentation::Brightness { factor: 1.2 },
            ShiftKind::Noise => Augmentation::GaussianNoise {
                var_limit: NOISE_VAR_LIMIT,
            },
        }
    }
}

impl FromStr for DistanceMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diffnorm" => Ok(DistanceMetric::DiffNorm),
            "dot" => Ok(DistanceMetric::DotProduct),
            other => Err(Error::invalid(
                "metric",
                format!("unknown value `{other}` (expected diffnorm or dot)"),
            )),
        }
    }
}

impl fmt::Display for DistanceMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistanceMetric::DiffNorm => "diffnorm",
            DistanceMetric::DotProduct => "dot",
        })
    }
}

/// Clients that return uniformly random parameters instead of training,
/// starting at `from_round` (1-based). Used for robustness fixtures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoisonSpec {
    pub clients: Vec<usize>,
    pub from_round: usize,
    pub scale: f64,
}

/// Everything needed to run one experiment grid (seeds × methods).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: Scenario,
    pub methods: Vec<Method>,
    pub shift: ShiftKind,
    pub metric: DistanceMetric,
    pub threshold_factor: f64,
    pub warmup_rounds: usize,
    pub seeds: Vec<u64>,
    /// Global epochs until the model is considered converged.
    pub epochs: usize,
    /// Extra epochs whose mean clean-test dice is the reported score.
    pub eval_epochs: usize,
    pub clients: usize,
    pub shifted_clients: usize,
    /// First epoch (1-based) of each later stage.
    pub stage_boundaries: Vec<usize>,
    pub refset_size: usize,
    pub refset_augmented: bool,
    pub patch_size: usize,
    pub patients: usize,
    pub patches_per_patient: usize,
    pub split: Vec<f64>,
    pub data_seed: u64,
    pub lr: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
    pub server_lr: f64,
    pub rehearsal_fraction: f64,
    /// Measure each client against the running aggregate instead of the
    /// previous committed model (order-dependent).
    pub incremental_aggregation: bool,
    pub poison: Option<PoisonSpec>,
    pub out_dir: Option<PathBuf>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            scenario: Scenario::Cd,
            methods: vec![Method::Dynbc],
            shift: ShiftKind::BrightnessStrong,
            metric: DistanceMetric::DiffNorm,
            threshold_factor: 2.0,
            warmup_rounds: 1,
            seeds: vec![0, 1, 2],
            epochs: 40,
            eval_epochs: 20,
            clients: 5,
            shifted_clients: 3,
            stage_boundaries: Vec::new(),
            refset_size: 128,
            refset_augmented: true,
            patch_size: 32,
            patients: 40,
            patches_per_patient: 16,
            split: vec![0.6, 0.3, 0.1],
            data_seed: 0,
            lr: 1e-4,
            batch_size: 4,
            local_epochs: 1,
            server_lr: 1e-2,
            rehearsal_fraction: 0.1,
            incremental_aggregation: false,
            poison: None,
            out_dir: None,
        }
    }
}

pub const PRESETS: &[&str] = &[
    "cd-bcss-analog",
    "cd-semicol-analog",
    "cf-analog",
    "combined-analog",
];

/// Learning rate of the shipped presets. The tiny network sees only a few
/// dozen Adam steps per round, so it needs a larger step than
/// [`AdamState::DEFAULT_LR`](crate::nn::AdamState::DEFAULT_LR) to learn
/// within the desk-scale epoch budget.
pub const DESK_LR: f64 = 3e-3;

impl ScenarioConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let base = Self {
            methods: vec![
                Method::Baseline,
                Method::Dynbc,
                Method::Rehearsal,
                Method::Fedadam,
            ],
            lr: DESK_LR,
            ..Self::default()
        };
        let cfg = match name {
            "cd-bcss-analog" => base,
            "cd-semicol-analog" => Self {
                clients: 4,
                shifted_clients: 2,
                shift: ShiftKind::BrightnessMild,
                epochs: 32,
                split: vec![0.7, 0.2, 0.1],
                ..base
            },
            "cf-analog" => Self {
                scenario: Scenario::Cf,
                methods: vec![Method::Baseline, Method::Dynbc, Method::Rehearsal],
                shift: ShiftKind::Blur,
                clients: 1,
                shifted_clients: 1,
                epochs: 60,
                stage_boundaries: vec![31],
                ..base
            },
            "combined-analog" => Self {
                scenario: Scenario::Combined,
                clients: 4,
                shifted_clients: 3,
                epochs: 70,
                stage_boundaries: vec![31],
                ..base
            },
            other => {
                return Err(Error::invalid(
                    "preset",
                    format!(
                        "unknown preset `{other}` (expected one of: {})",
                        PRESETS.join(", ")
                    ),
                ))
            }
        };
        Ok(cfg)
    }

    pub fn total_epochs(&self) -> usize {
        self.epochs + self.eval_epochs
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::invalid("seeds", "at least one seed is required"));
        }
        if self.methods.is_empty() {
            return Err(Error::invalid("methods", "at least one method is required"));
        }
        if !self.threshold_factor.is_finite() || self.threshold_factor <= 1.0 {
            return Err(Error::invalid(
                "threshold_factor",
                format!("must be > 1, got {}", self.threshold_factor),
            ));
        }
        if self.clients == 0 {
            return Err(Error::invalid("clients", "must be at least 1"));
        }
        if self.shifted_clients > self.clients {
            return Err(Error::invalid(
                "shifted_clients",
                format!(
                    "{} shifted of {} clients",
                    self.shifted_clients, self.clients
                ),
            ));
        }
        if self.scenario == Scenario::Cf && self.clients != 1 {
            return Err(Error::invalid(
                "clients",
                "the cf scenario trains a single model (clients = 1)",
            ));
        }
        if self.epochs + self.eval_epochs == 0 {
            return Err(Error::invalid("epochs", "need at least one global epoch"));
        }
        if self.eval_epochs == 0 {
            return Err(Error::invalid(
                "eval_epochs",
                "need at least one evaluation epoch",
            ));
        }
        match self.scenario {
            Scenario::Cd if !self.stage_boundaries.is_empty() => {
                return Err(Error::invalid(
                    "stage_boundaries",
                    "the cd scenario has a single stage",
                ));
            }
            Scenario::Cf | Scenario::Combined if self.stage_boundaries.len() != 1 => {
                return Err(Error::invalid(
                    "stage_boundaries",
                    "staged scenarios need exactly one boundary",
                ));
            }
            _ => {}
        }
        let total = self.total_epochs();
        let mut last = 1;
        for &b in &self.stage_boundaries {
            if b <= last || b > total {
                return Err(Error::invalid(
                    "stage_boundaries",
                    format!("boundary {b} must be increasing within 2..={total}"),
                ));
            }
            last = b;
        }
        if self.refset_size == 0 {
            return Err(Error::invalid("refset_size", "must be positive"));
        }
        if self.patch_size < 8 {
            return Err(Error::invalid("patch_size", "must be at least 8"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be positive"));
        }
        if self.local_epochs == 0 {
            return Err(Error::invalid("local_epochs", "must be at least 1"));
        }
        if [self.lr, self.server_lr]
            .iter()
            .any(|v| v.is_nan() || *v < 0.0)
        {
            return Err(Error::invalid("lr", "learning rates must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.rehearsal_fraction) {
            return Err(Error::invalid("rehearsal_fraction", "must lie in [0, 1)"));
        }
        if let Some(p) = &self.poison {
            if p.clients.iter().any(|&c| c >= self.clients) {
                return Err(Error::invalid("poison", "poisoned client id out of range"));
            }
            if p.scale.is_nan() || p.scale <= 0.0 {
                return Err(Error::invalid("poison", "scale must be positive"));
            }
        }
        let sum: f64 = self.split.iter().sum();
        if self.split.len() < 2 || self.split.len() > 3 || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "split",
                "need 2 or 3 fractions summing to 1 (train, test[, val])",
            ));
        }
        if self.patients < self.split.len() {
            return Err(Error::invalid("patients", "fewer patients than splits"));
        }
        Ok(())
    }

    /// Shifted flag per client during `stage` (0-based). The last
    /// `shifted_clients` ids are the shifted ones.
    pub fn shift_map(&self, stage: usize) -> Vec<bool> {
        let shifted_stage = match self.scenario {
            Scenario::Cd => true,
            Scenario::Cf | Scenario::Combined => stage >= 1,
        };
        (0..self.clients)
            .map(|c| shifted_stage && c >= self.clients - self.shifted_clients)
            .collect()
    }

    /// 0-based stage of a 1-based epoch.
    pub fn stage_of(&self, epoch: usize) -> usize {
        self.stage_boundaries
            .iter()
            .filter(|&&b| epoch >= b)
            .count()
    }
}
