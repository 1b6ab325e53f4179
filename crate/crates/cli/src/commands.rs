use std::path::{Path, PathBuf};

use anyhow::Result;
use dynfed_core::federation::run_grid;
use dynfed_core::metrics::{
    format_table, render_curves, summarize, write_gate_csv, write_history_csv, write_summary_csv,
};
use dynfed_core::{Method, RunHistory, Scenario, ScenarioConfig, SummaryRow};
use serde_json::json;

use crate::output::Staging;
use crate::resolve::ConfigError;

/// Files produced by a command, relative to its output directory.
pub struct Written {
    pub dir: PathBuf,
    pub table: String,
}

fn out_dir(cfg: &ScenarioConfig) -> &Path {
    cfg.out_dir
        .as_deref()
        .expect("out_dir is resolved before running")
}

/// Refuses to start when the final output directory is already taken.
pub fn check_out_dir(cfg: &ScenarioConfig) -> Result<(), ConfigError> {
    let dir = out_dir(cfg);
    if dir.exists() {
        return Err(ConfigError::new(
            "out_dir",
            format!("{} already exists", dir.display()),
        ));
    }
    Ok(())
}

fn gate_file(prefix: &str, h: &RunHistory) -> String {
    format!("gate_{prefix}{}_seed{}.csv", h.meta.method, h.meta.seed)
}

fn write_gates(staging: &Staging, prefix: &str, runs: &[RunHistory]) -> Result<()> {
    for h in runs {
        write_gate_csv(&staging.path(&gate_file(prefix, h)), &h.gate_events)?;
    }
    Ok(())
}

fn manifest(command: &str, configs: &[&ScenarioConfig], runs: &[RunHistory]) -> Result<String> {
    let runs: Vec<_> = runs
        .iter()
        .map(|h| {
            Ok(json!({
                "scenario": h.meta.scenario,
                "method": h.meta.method,
                "seed": h.meta.seed,
                "shift": h.meta.shift,
                "threshold_factor": h.meta.threshold_factor,
                "refset_augmented": h.meta.refset_augmented,
                "final_dice": h.final_score()?,
            }))
        })
        .collect::<Result<_>>()?;
    let doc = json!({
        "command": command,
        "code_version": env!("CARGO_PKG_VERSION"),
        "configs": configs,
        "runs": runs,
    });
    Ok(serde_json::to_string_pretty(&doc)? + "\n")
}

fn write_summary(staging: &Staging, rows: &[SummaryRow], table: &str) -> Result<()> {
    write_summary_csv(&staging.path("summary.csv"), rows)?;
    staging.write("summary.txt", table)
}

pub fn run(cfg: &ScenarioConfig, jobs: usize) -> Result<Written> {
    let runs = run_grid(cfg, jobs)?;
    let staging = Staging::new(out_dir(cfg))?;
    write_history_csv(&staging.path("history.csv"), &runs)?;
    write_gates(&staging, "", &runs)?;
    staging.write("curves.svg", &render_curves(&runs)?)?;
    let rows = summarize(&runs)?;
    let table = format_table(&rows);
    write_summary(&staging, &rows, &table)?;
    staging.write("manifest.json", &manifest("run", &[cfg], &runs)?)?;
    Ok(Written {
        dir: staging.finish()?,
        table,
    })
}

pub fn gate_trace(cfg: &ScenarioConfig, jobs: usize) -> Result<Written> {
    let runs = run_grid(cfg, jobs)?;
    let staging = Staging::new(out_dir(cfg))?;
    write_gates(&staging, "", &runs)?;
    staging.write("manifest.json", &manifest("gate-trace", &[cfg], &runs)?)?;
    let mut table = String::from("method     seed  rounds  events  rejected  rollbacks\n");
    for h in &runs {
        let rejected = h
            .gate_events
            .iter()
            .filter(|e| e.verdict == "reject")
            .count();
        let rollbacks = h
            .gate_events
            .iter()
            .filter(|e| e.verdict == "rollback")
            .count();
        table.push_str(&format!(
            "{:<10} {:<5} {:<7} {:<7} {:<9} {}\n",
            h.meta.method.as_str(),
            h.meta.seed,
            h.rows.len(),
            h.gate_events.len(),
            rejected,
            rollbacks
        ));
    }
    Ok(Written {
        dir: staging.finish()?,
        table,
    })
}

pub fn validate_factors(factors: &[f64]) -> Result<(), ConfigError> {
    if factors.is_empty() {
        return Err(ConfigError::new(
            "factors",
            "at least one threshold factor is required",
        ));
    }
    if let Some(f) = factors.iter().find(|f| !f.is_finite() || **f <= 1.0) {
        return Err(ConfigError::new(
            "factors",
            format!("threshold factor {f} must be a finite value > 1"),
        ));
    }
    Ok(())
}

pub fn ablate_threshold(cfg: &ScenarioConfig, factors: &[f64], jobs: usize) -> Result<Written> {
    let cells: Vec<ScenarioConfig> = factors
        .iter()
        .map(|&f| ScenarioConfig {
            threshold_factor: f,
            ..cfg.clone()
        })
        .collect();
    let mut runs = Vec::new();
    for c in &cells {
        runs.extend(run_grid(c, jobs)?);
    }
    let staging = Staging::new(out_dir(cfg))?;
    write_history_csv(&staging.path("history.csv"), &runs)?;
    for (c, f) in cells.iter().zip(factors) {
        let subset: Vec<RunHistory> = runs
            .iter()
            .filter(|h| h.meta.threshold_factor == c.threshold_factor)
            .cloned()
            .collect();
        write_gates(&staging, &format!("th{f}_"), &subset)?;
    }
    let rows = summarize(&runs)?;
    let mut table = String::from("threshold_factor  method     dice\n");
    for r in &rows {
        table.push_str(&format!(
            "{:<17} {:<10} {:.3} ± {:.3}\n",
            r.threshold_factor,
            r.method.as_str(),
            r.mean_dice,
            r.std_dice
        ));
    }
    write_summary(&staging, &rows, &table)?;
    let refs: Vec<&ScenarioConfig> = cells.iter().collect();
    staging.write(
        "manifest.json",
        &manifest("ablate-threshold", &refs, &runs)?,
    )?;
    Ok(Written {
        dir: staging.finish()?,
        table,
    })
}

/// `cells` holds the client-drift and forgetting configurations; each is
/// run with and without reference-set augmentation.
pub fn ablate_refaug(cells: &[ScenarioConfig], jobs: usize) -> Result<Written> {
    let mut configs = Vec::new();
    let mut runs = Vec::new();
    for base in cells {
        for augmented in [true, false] {
            let c = ScenarioConfig {
                refset_augmented: augmented,
                ..base.clone()
            };
            runs.extend(run_grid(&c, jobs)?);
            configs.push(c);
        }
    }
    let staging = Staging::new(out_dir(&cells[0]))?;
    write_history_csv(&staging.path("history.csv"), &runs)?;
    for scenario in [Scenario::Cd, Scenario::Cf] {
        for augmented in [true, false] {
            let subset: Vec<RunHistory> = runs
                .iter()
                .filter(|h| h.meta.scenario == scenario && h.meta.refset_augmented == augmented)
                .cloned()
                .collect();
            write_gates(&staging, &format!("{scenario}_refaug{augmented}_"), &subset)?;
        }
    }
    let rows = summarize(&runs)?;
    let mut table = String::from("scenario  method     refaug=true      refaug=false\n");
    let cell = |s: Scenario, m: Method, a: bool| {
        rows.iter()
            .find(|r| r.scenario == s && r.method == m && r.refset_augmented == a)
            .map_or_else(
                || "-".to_string(),
                |r| format!("{:.3} ± {:.3}", r.mean_dice, r.std_dice),
            )
    };
    for base in cells {
        for &m in &base.methods {
            table.push_str(&format!(
                "{:<9} {:<10} {:<16} {}\n",
                base.scenario.as_str(),
                m.as_str(),
                cell(base.scenario, m, true),
                cell(base.scenario, m, false)
            ));
        }
    }
    write_summary(&staging, &rows, &table)?;
    let refs: Vec<&ScenarioConfig> = configs.iter().collect();
    staging.write("manifest.json", &manifest("ablate-refaug", &refs, &runs)?)?;
    Ok(Written {
        dir: staging.finish()?,
        table,
    })
}
