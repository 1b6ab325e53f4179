use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{Method, Scenario, ShiftKind};
use crate::error::{Error, Result};
use crate::gate::{DistanceMetric, GateEvent, GateSubject};

pub const HISTORY_HEADER: [&str; 9] = [
    "epoch",
    "stage",
    "method",
    "seed",
    "shift",
    "test_dice",
    "train_loss",
    "n_rejected_clients",
    "temporal_rollback",
];

/// One global epoch of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub stage: usize,
    pub method: Method,
    pub seed: u64,
    pub shift: ShiftKind,
    pub test_dice: f64,
    pub train_loss: f64,
    pub n_rejected_clients: usize,
    pub temporal_rollback: bool,
}

/// Identifies the cell of the experiment grid a history belongs to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub scenario: Scenario,
    pub method: Method,
    pub shift: ShiftKind,
    pub seed: u64,
    pub metric: DistanceMetric,
    pub threshold_factor: f64,
    pub refset_augmented: bool,
    pub total_epochs: usize,
    pub eval_epochs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunHistory {
    pub meta: RunMeta,
    pub rows: Vec<HistoryRow>,
    pub gate_events: Vec<GateEvent>,
}

impl RunHistory {
    pub fn new(meta: RunMeta) -> Self {
        Self {
            meta,
            rows: Vec::new(),
            gate_events: Vec::new(),
        }
    }

    pub fn push(&mut self, row: HistoryRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.epoch <= last.epoch {
                return Err(Error::invalid(
                    "epoch",
                    format!("{} does not follow {}", row.epoch, last.epoch),
                ));
            }
        }
        if !(0.0..=1.0).contains(&row.test_dice) {
            return Err(Error::invalid(
                "test_dice",
                format!("{} outside [0, 1]", row.test_dice),
            ));
        }
        self.rows.push(row);
        Ok(())
    }

    /// Mean clean-test dice over the trailing evaluation window.
    pub fn final_score(&self) -> Result<f64> {
        let window = self.meta.eval_epochs.min(self.rows.len());
        if window == 0 {
            return Err(Error::Empty("run history"));
        }
        let tail = &self.rows[self.rows.len() - window..];
        Ok(tail.iter().map(|r| r.test_dice).sum::<f64>() / window as f64)
    }

    pub fn rejected_clients(&self, client: usize) -> usize {
        self.gate_events
            .iter()
            .filter(|e| e.subject == GateSubject::Client(client) && e.verdict == "reject")
            .count()
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes the rows of every history under one fixed header.
pub fn write_history_csv(path: &Path, histories: &[RunHistory]) -> Result<()> {
    if histories.iter().all(|h| h.rows.is_empty()) {
        return Err(Error::Empty("run history"));
    }
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err(path))?;
    w.write_record(HISTORY_HEADER).map_err(csv_err(path))?;
    for h in histories {
        for row in &h.rows {
            w.serialize(row).map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_history_csv(path: &Path) -> Result<Vec<HistoryRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?.clone();
    if header.iter().ne(HISTORY_HEADER) {
        return Err(Error::Format(format!(
            "{}: unexpected header {:?}",
            path.display(),
            header
        )));
    }
    r.deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_err(path))
}

/// `round,client_id,delta,delta_max_before,verdict`; temporal checks carry
/// `temporal` in the client column.
pub fn write_gate_csv(path: &Path, events: &[GateEvent]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["round", "client_id", "delta", "delta_max_before", "verdict"])
        .map_err(csv_err(path))?;
    for e in events {
        w.write_record([
            e.round.to_string(),
            e.subject.to_string(),
            e.delta.to_string(),
            e.delta_max_before.to_string(),
            e.verdict.clone(),
        ])
        .map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_gate_csv(path: &Path) -> Result<Vec<GateEvent>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let bad =
            |what: &str| Error::Format(format!("{}: bad {what} in {:?}", path.display(), rec));
        let subject = match &rec[1] {
            "temporal" => GateSubject::Temporal,
            id => GateSubject::Client(id.parse().map_err(|_| bad("client_id"))?),
        };
        out.push(GateEvent {
            round: rec[0].parse().map_err(|_| bad("round"))?,
            subject,
            delta: rec[2].parse().map_err(|_| bad("delta"))?,
            delta_max_before: rec[3].parse().map_err(|_| bad("delta_max_before"))?,
            verdict: rec[4].to_string(),
        });
    }
    Ok(out)
}
