use rayon::prelude::*;

use crate::config::Method;
use crate::error::{Error, Result};
use crate::federation::aggregate::{aggregate_mean, running_mean};
use crate::federation::client::{client_local_train, ClientBehavior, ClientState};
use crate::gate::{
    prediction_distance, prediction_of, GateEvent, GateState, GateSubject, Predictions,
    TemporalVerdict, Verdict,
};
use crate::nn::{AdamState, ModelParams};
use crate::synth::ReferenceSet;

#[derive(Debug, Clone)]
pub struct ServerState {
    pub global_model: ModelParams,
    /// Last committed global model; rollback target.
    pub previous_model: ModelParams,
    pub gate: GateState,
    pub fedadam: Option<AdamState>,
    pub method: Method,
    /// Measure clients against the running aggregate rather than the
    /// committed model.
    pub incremental: bool,
    /// Number of completed global rounds.
    pub round: usize,
}

impl ServerState {
    pub fn new(model: ModelParams, gate: GateState, method: Method, server_lr: f64) -> Self {
        let fedadam =
            (method == Method::Fedadam).then(|| AdamState::new(model.theta().len(), server_lr));
        Self {
            previous_model: model.clone(),
            global_model: model,
            gate,
            fedadam,
            method,
            incremental: false,
            round: 0,
        }
    }

    pub fn gated(&self) -> bool {
        self.method == Method::Dynbc
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: usize,
    pub train_loss: f64,
    pub n_rejected: usize,
    pub rolled_back: bool,
    pub events: Vec<GateEvent>,
}

/// Adam on the server with the pseudo-gradient `-(mean(clients) - global)`.
pub fn fedadam_server_step(
    server: &mut ServerState,
    client_models: &[&ModelParams],
) -> Result<ModelParams> {
    let mean = aggregate_mean(client_models)?;
    if !mean.is_aggregable_with(&server.global_model) {
        return Err(Error::ArchMismatch);
    }
    let len = server.global_model.theta().len();
    let adam = server
        .fedadam
        .get_or_insert_with(|| AdamState::new(len, 1e-2));
    let grad: Vec<f64> = server
        .global_model
        .theta()
        .iter()
        .zip(mean.theta())
        .map(|(g, m)| g - m)
        .collect();
    let mut next = server.global_model.clone();
    adam.step(next.theta_mut(), &grad)?;
    Ok(next)
}

/// Temporal continuity check of `candidate` against the committed model.
/// Commits or restores the previous model and returns the verdict and
/// distance. `global_preds` are the committed model's reference predictions.
pub fn temporal_step(
    server: &mut ServerState,
    candidate: ModelParams,
    refset: &ReferenceSet,
    global_preds: &Predictions,
) -> Result<(TemporalVerdict, f64)> {
    let cand_preds = prediction_of(&candidate, refset)?;
    let delta = prediction_distance(global_preds, &cand_preds, server.gate.metric())?;
    let verdict = server.gate.temporal(delta)?;
    match verdict {
        TemporalVerdict::Commit => {
            server.previous_model = candidate.clone();
            server.global_model = candidate;
        }
        TemporalVerdict::Rollback => {
            server.global_model = server.previous_model.clone();
        }
    }
    Ok((verdict, delta))
}

/// Server side of one round: gate (if enabled), aggregate, temporal check.
/// `updates` must be in ascending client-id order.
pub fn apply_updates(
    server: &mut ServerState,
    updates: &[(usize, ModelParams)],
    refset: &ReferenceSet,
) -> Result<RoundReport> {
    if updates.is_empty() {
        return Err(Error::Empty("client updates"));
    }
    let round = server.round + 1;
    let mut report = RoundReport {
        round,
        train_loss: 0.0,
        n_rejected: 0,
        rolled_back: false,
        events: Vec::new(),
    };

    if !server.gated() {
        let models: Vec<&ModelParams> = updates.iter().map(|(_, m)| m).collect();
        let next = match server.method {
            Method::Fedadam => fedadam_server_step(server, &models)?,
            _ => aggregate_mean(&models)?,
        };
        server.previous_model = next.clone();
        server.global_model = next;
        server.round = round;
        return Ok(report);
    }

    let metric = server.gate.metric();
    let global_preds = prediction_of(&server.global_model, refset)?;
    let mut accepted: Vec<&ModelParams> = Vec::with_capacity(updates.len());

    let candidate = if server.incremental {
        let mut running = server.global_model.clone();
        let mut running_preds = global_preds.clone();
        for (id, model) in updates {
            let preds = prediction_of(model, refset)?;
            let delta = prediction_distance(&running_preds, &preds, metric)?;
            let decision = server.gate.spatial(delta)?;
            report.events.push(event(
                round,
                GateSubject::Client(*id),
                delta,
                decision.delta_max_before,
                decision.verdict.as_str(),
            ));
            if decision.verdict == Verdict::Accept {
                running = running_mean(&running, accepted.len(), model)?;
                running_preds = prediction_of(&running, refset)?;
                accepted.push(model);
            }
        }
        running
    } else {
        let client_preds = updates
            .par_iter()
            .map(|(_, m)| prediction_of(m, refset))
            .collect::<Result<Vec<_>>>()?;
        for ((id, model), preds) in updates.iter().zip(&client_preds) {
            let delta = prediction_distance(&global_preds, preds, metric)?;
            let decision = server.gate.spatial(delta)?;
            report.events.push(event(
                round,
                GateSubject::Client(*id),
                delta,
                decision.delta_max_before,
                decision.verdict.as_str(),
            ));
            if decision.verdict == Verdict::Accept {
                accepted.push(model);
            }
        }
        if accepted.is_empty() {
            server.global_model.clone()
        } else {
            aggregate_mean(&accepted)?
        }
    };
    report.n_rejected = updates.len() - accepted.len();

    let before = server.gate.delta_max();
    let (verdict, delta) = temporal_step(server, candidate, refset, &global_preds)?;
    report.events.push(event(
        round,
        GateSubject::Temporal,
        delta,
        before,
        verdict.as_str(),
    ));
    report.rolled_back = verdict == TemporalVerdict::Rollback;
    server.gate.end_round();
    server.round = round;
    Ok(report)
}

fn event(
    round: usize,
    subject: GateSubject,
    delta: f64,
    delta_max_before: f64,
    verdict: &str,
) -> GateEvent {
    GateEvent {
        round,
        subject,
        delta,
        delta_max_before,
        verdict: verdict.to_string(),
    }
}

/// One full global round: every client trains from the committed model
/// (concurrently; results are consumed in id order), then the server
/// gates and aggregates.
pub fn run_global_round(
    server: &mut ServerState,
    clients: &mut [ClientState],
    refset: &ReferenceSet,
    local_epochs: usize,
) -> Result<RoundReport> {
    if clients.is_empty() {
        return Err(Error::Empty("client list"));
    }
    let round = server.round + 1;
    let global = &server.global_model;
    let mut results = clients
        .par_iter_mut()
        .map(|c| {
            let poisoned = match c.behavior {
                ClientBehavior::Randomized { from_round, scale } if round >= from_round => {
                    Some(scale)
                }
                _ => None,
            };
            match poisoned {
                Some(scale) => Ok((c.id, c.random_model(global, scale), f64::NAN)),
                None => {
                    client_local_train(c, global, local_epochs).map(|(m, loss)| (c.id, m, loss))
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    results.sort_by_key(|(id, _, _)| *id);

    let losses: Vec<f64> = results
        .iter()
        .map(|r| r.2)
        .filter(|l| l.is_finite())
        .collect();
    let train_loss = if losses.is_empty() {
        0.0
    } else {
        losses.iter().sum::<f64>() / losses.len() as f64
    };
    let updates: Vec<(usize, ModelParams)> =
        results.into_iter().map(|(id, m, _)| (id, m)).collect();
    let mut report = apply_updates(server, &updates, refset)?;
    report.train_loss = train_loss;
    Ok(report)
}
