use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{Method, Scenario, ShiftKind};
use crate::error::{Error, Result};
use crate::gate::DistanceMetric;
use crate::metrics::history::RunHistory;

/// Mean ± population standard deviation of the per-seed final scores of
/// one experiment cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: Scenario,
    pub shift: ShiftKind,
    pub method: Method,
    pub metric: DistanceMetric,
    pub threshold_factor: f64,
    pub refset_augmented: bool,
    pub seeds: usize,
    pub mean_dice: f64,
    pub std_dice: f64,
}

type CellKey = (Scenario, ShiftKind, Method, DistanceMetric, u64, bool);

fn key(h: &RunHistory) -> CellKey {
    let m = &h.meta;
    (
        m.scenario,
        m.shift,
        m.method,
        m.metric,
        m.threshold_factor.to_bits(),
        m.refset_augmented,
    )
}

/// Groups runs by cell (in first-seen order) and aggregates over seeds.
pub fn summarize(runs: &[RunHistory]) -> Result<Vec<SummaryRow>> {
    if runs.is_empty() {
        return Err(Error::Empty("run list"));
    }
    let mut cells: Vec<(CellKey, Vec<&RunHistory>)> = Vec::new();
    for run in runs {
        let k = key(run);
        match cells.iter_mut().find(|(ck, _)| *ck == k) {
            Some((_, members)) => members.push(run),
            None => cells.push((k, vec![run])),
        }
    }
    let mut out = Vec::with_capacity(cells.len());
    for (_, members) in cells {
        let first = &members[0].meta;
        let mut seeds = Vec::with_capacity(members.len());
        for m in &members {
            if m.meta.total_epochs != first.total_epochs || m.meta.eval_epochs != first.eval_epochs
            {
                return Err(Error::invalid(
                    "runs",
                    "mismatched epoch schedules within one cell",
                ));
            }
            if seeds.contains(&m.meta.seed) {
                return Err(Error::invalid(
                    "runs",
                    format!("seed {} appears twice in one cell", m.meta.seed),
                ));
            }
            seeds.push(m.meta.seed);
        }
        let scores = members
            .iter()
            .map(|m| m.final_score())
            .collect::<Result<Vec<f64>>>()?;
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
        out.push(SummaryRow {
            scenario: first.scenario,
            shift: first.shift,
            method: first.method,
            metric: first.metric,
            threshold_factor: first.threshold_factor,
            refset_augmented: first.refset_augmented,
            seeds: scores.len(),
            mean_dice: mean,
            std_dice: var.sqrt(),
        });
    }
    Ok(out)
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let to_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(to_err)?;
    for row in rows {
        w.serialize(row).map_err(to_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Plain-text table, one line per cell.
pub fn format_table(rows: &[SummaryRow]) -> String {
    let mut out = String::from(
        "scenario  shift              method     metric    th    refaug  seeds  dice\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{:<9} {:<18} {:<10} {:<9} {:<5.2} {:<7} {:<6} {:.3} ± {:.3}\n",
            r.scenario.as_str(),
            r.shift.as_str(),
            r.method.as_str(),
            r.metric.to_string(),
            r.threshold_factor,
            r.refset_augmented,
            r.seeds,
            r.mean_dice,
            r.std_dice
        ));
    }
    out
}
