use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use dynfed_core::{PoisonSpec, ScenarioConfig};
use serde_json::Value;

use crate::args::ConfigArgs;

pub const OUT_DIR_ENV: &str = "DYNFED_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "dynfed-out";

/// A configuration problem. Maps to exit status 2.
#[derive(Debug)]
pub struct ConfigError {
    pub field: String,
    pub reason: String,
}

impl ConfigError {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid `{}`: {}", self.field, self.reason)
    }
}

impl std::error::Error for ConfigError {}

impl From<dynfed_core::Error> for ConfigError {
    fn from(e: dynfed_core::Error) -> Self {
        match e {
            dynfed_core::Error::InvalidArgument { field, reason } => Self::new(field, reason),
            other => Self::new("config", other.to_string()),
        }
    }
}

fn parse_list<T: FromStr>(field: &str, raw: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<T>()
                .map_err(|e| ConfigError::new(field, format!("`{s}`: {e}")))
        })
        .collect()
}

fn parse_one<T: FromStr>(field: &str, raw: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    raw.parse::<T>()
        .map_err(|e| ConfigError::new(field, e.to_string()))
}

/// Overlays the keys of a JSON object onto `base`, so a config file only
/// needs the fields it changes.
fn overlay_file(base: &ScenarioConfig, path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new("config", format!("{}: {e}", path.display())))?;
    let file: Value = serde_json::from_str(&text)
        .map_err(|e| ConfigError::new("config", format!("{}: {e}", path.display())))?;
    let Value::Object(fields) = file else {
        return Err(ConfigError::new(
            "config",
            "top level must be a JSON object",
        ));
    };
    let mut merged = serde_json::to_value(base).expect("config serializes");
    let target = merged.as_object_mut().expect("config is an object");
    for (k, v) in fields {
        if !target.contains_key(&k) {
            return Err(ConfigError::new(k, "unknown config field"));
        }
        target.insert(k, v);
    }
    serde_json::from_value(merged)
        .map_err(|e| ConfigError::new("config", format!("{}: {e}", path.display())))
}

impl ConfigArgs {
    /// Builds and validates the configuration, starting from `default_preset`
    /// when no `--preset` is given. `adjust` edits the base (preset plus
    /// file) before flags are applied.
    pub fn resolve(
        &self,
        default_preset: Option<&str>,
        adjust: impl FnOnce(&mut ScenarioConfig),
    ) -> Result<ScenarioConfig, ConfigError> {
        let mut cfg = match self.preset.as_deref().or(default_preset) {
            Some(name) => ScenarioConfig::preset(name)?,
            None => ScenarioConfig::default(),
        };
        if let Some(path) = &self.config {
            cfg = overlay_file(&cfg, path)?;
        }
        adjust(&mut cfg);
        self.apply_flags(&mut cfg)?;
        if cfg.out_dir.is_none() {
            cfg.out_dir = Some(
                std::env::var_os(OUT_DIR_ENV)
                    .map_or_else(|| PathBuf::from(DEFAULT_OUT_DIR), PathBuf::from),
            );
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn apply_flags(&self, cfg: &mut ScenarioConfig) -> Result<(), ConfigError> {
        if let Some(v) = &self.scenario {
            cfg.scenario = parse_one("scenario", v)?;
        }
        if let Some(v) = &self.methods {
            cfg.methods = parse_list("methods", v)?;
            if cfg.methods.is_empty() {
                return Err(ConfigError::new(
                    "methods",
                    "at least one method is required",
                ));
            }
        }
        if let Some(v) = &self.shift {
            cfg.shift = parse_one("shift", v)?;
        }
        if let Some(v) = &self.metric {
            cfg.metric = parse_one("metric", v)?;
        }
        if let Some(v) = self.threshold_factor {
            cfg.threshold_factor = v;
        }
        if let Some(v) = self.warmup_rounds {
            cfg.warmup_rounds = v;
        }
        if let Some(v) = &self.seeds {
            cfg.seeds = parse_list("seeds", v)?;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.eval_epochs {
            cfg.eval_epochs = v;
        }
        if let Some(v) = self.clients {
            cfg.clients = v;
        }
        if let Some(v) = self.shifted_clients {
            cfg.shifted_clients = v;
        }
        if let Some(v) = &self.stage_boundaries {
            cfg.stage_boundaries = parse_list("stage_boundaries", v)?;
        }
        if let Some(v) = self.refset_size {
            cfg.refset_size = v;
        }
        if let Some(v) = self.refset_augmented {
            cfg.refset_augmented = v;
        }
        if let Some(v) = self.patch_size {
            cfg.patch_size = v;
        }
        if let Some(v) = self.patients {
            cfg.patients = v;
        }
        if let Some(v) = self.patches_per_patient {
            cfg.patches_per_patient = v;
        }
        if let Some(v) = &self.split {
            cfg.split = parse_list("split", v)?;
        }
        if let Some(v) = self.data_seed {
            cfg.data_seed = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.local_epochs {
            cfg.local_epochs = v;
        }
        if let Some(v) = self.server_lr {
            cfg.server_lr = v;
        }
        if let Some(v) = self.rehearsal_fraction {
            cfg.rehearsal_fraction = v;
        }
        if let Some(v) = self.incremental_aggregation {
            cfg.incremental_aggregation = v;
        }
        if let Some(v) = &self.poison_clients {
            let clients: Vec<usize> = parse_list("poison_clients", v)?;
            cfg.poison = (!clients.is_empty()).then_some(PoisonSpec {
                clients,
                from_round: self.poison_from_round,
                scale: self.poison_scale,
            });
        }
        if let Some(v) = &self.out_dir {
            cfg.out_dir = Some(v.clone());
        }
        Ok(())
    }
}
