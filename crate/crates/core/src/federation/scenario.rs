use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{Method, ScenarioConfig, ShiftKind};
use crate::error::{Error, Result};
use crate::federation::client::{ClientBehavior, ClientState};
use crate::federation::server::{run_global_round, ServerState};
use crate::gate::GateState;
use crate::metrics::{evaluate, HistoryRow, RunHistory, RunMeta};
use crate::nn::{Arch, ModelParams};
use crate::synth::{
    build_reference_set, generate_cohort, reference_pool, split_by_patient, Augmentation, Patch,
    ReferenceSet, TextureSpec,
};

/// Contiguous epoch span with a fixed per-client shift map.
#[derive(Debug, Clone, PartialEq)]
pub struct Stage {
    /// First and last global epoch of the stage (1-based, inclusive).
    pub epochs: (usize, usize),
    pub shifted: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageSchedule {
    pub stages: Vec<Stage>,
}

impl StageSchedule {
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let total = cfg.total_epochs();
        let mut starts = vec![1];
        starts.extend(&cfg.stage_boundaries);
        let stages = starts
            .iter()
            .enumerate()
            .map(|(i, &start)| {
                let end = starts.get(i + 1).map_or(total, |next| next - 1);
                Stage {
                    epochs: (start, end),
                    shifted: cfg.shift_map(i),
                }
            })
            .collect();
        Ok(Self { stages })
    }

    pub fn stage_at(&self, epoch: usize) -> usize {
        self.stages
            .iter()
            .position(|s| (s.epochs.0..=s.epochs.1).contains(&epoch))
            .unwrap_or(self.stages.len() - 1)
    }
}

/// Seed-independent data shared by every cell of a grid.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub shards: Vec<Vec<Patch>>,
    pub test: Vec<Patch>,
    pub refset: ReferenceSet,
}

/// Generates the cohort, splits it by patient, shards the training split
/// equally over the clients and builds the reference set.
pub fn prepare_data(cfg: &ScenarioConfig) -> Result<PreparedData> {
    cfg.validate()?;
    let spec = TextureSpec::tissue(cfg.patch_size);
    let cohort = generate_cohort(&spec, cfg.patients, cfg.patches_per_patient, cfg.data_seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.data_seed);
    let splits = split_by_patient(&cohort, &cfg.split, &mut rng)?;
    let mut train = splits.train;
    train.shuffle(&mut rng);
    let per_client = train.len() / cfg.clients;
    if per_client == 0 {
        return Err(Error::invalid(
            "clients",
            format!(
                "{} training patches cannot feed {} clients",
                train.len(),
                cfg.clients
            ),
        ));
    }
    let shards = train
        .chunks_exact(per_client)
        .take(cfg.clients)
        .map(<[Patch]>::to_vec)
        .collect();

    let mut ref_rng = ChaCha8Rng::seed_from_u64(cfg.data_seed);
    ref_rng.set_stream(7);
    let pool = reference_pool(cfg.refset_augmented, cfg.shift == ShiftKind::Blur);
    let refset = build_reference_set(
        cfg.refset_size,
        &mut ref_rng,
        &pool,
        &TextureSpec::reference(cfg.patch_size),
    )?;
    Ok(PreparedData {
        shards,
        test: splits.test,
        refset,
    })
}

fn shift_for(stage: &Stage, client: usize, aug: Augmentation) -> Option<Augmentation> {
    stage.shifted[client].then_some(aug)
}

/// Runs one (method, seed) cell on prepared data.
pub fn run_with_data(
    cfg: &ScenarioConfig,
    data: &PreparedData,
    method: Method,
    seed: u64,
) -> Result<RunHistory> {
    let schedule = StageSchedule::from_config(cfg)?;
    let arch = Arch::segmenter(cfg.patch_size);
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    let model = ModelParams::init(arch.clone(), &mut init_rng);
    let gate = GateState::new(cfg.threshold_factor, cfg.warmup_rounds, cfg.metric)?;
    let mut server = ServerState::new(model, gate, method, cfg.server_lr);
    server.incremental = cfg.incremental_aggregation;

    let aug = cfg.shift.augmentation();
    let mut clients: Vec<ClientState> = data
        .shards
        .iter()
        .enumerate()
        .map(|(id, shard)| {
            let mut c = ClientState::new(
                id,
                shard.clone(),
                arch.param_count(),
                cfg.lr,
                cfg.batch_size,
                seed,
            );
            c.shift = shift_for(&schedule.stages[0], id, aug);
            c.rehearsal_fraction = cfg.rehearsal_fraction;
            if let Some(p) = &cfg.poison {
                if p.clients.contains(&id) {
                    c.behavior = ClientBehavior::Randomized {
                        from_round: p.from_round,
                        scale: p.scale,
                    };
                }
            }
            c
        })
        .collect();

    let mut history = RunHistory::new(RunMeta {
        scenario: cfg.scenario,
        method,
        shift: cfg.shift,
        seed,
        metric: cfg.metric,
        threshold_factor: cfg.threshold_factor,
        refset_augmented: cfg.refset_augmented,
        total_epochs: cfg.total_epochs(),
        eval_epochs: cfg.eval_epochs,
    });

    let mut current_stage = 0;
    if method == Method::Rehearsal && schedule.stages[0].shifted.iter().any(|&s| s) {
        // shifted from the start: replay unshifted local samples
        clients
            .iter_mut()
            .for_each(|c| c.capture_rehearsal(cfg.rehearsal_fraction));
    }
    for epoch in 1..=cfg.total_epochs() {
        let stage = schedule.stage_at(epoch);
        if stage != current_stage {
            if method == Method::Rehearsal {
                // buffer frozen from data seen before the shift
                clients
                    .iter_mut()
                    .for_each(|c| c.capture_rehearsal(cfg.rehearsal_fraction));
            }
            for c in clients.iter_mut() {
                c.shift = shift_for(&schedule.stages[stage], c.id, aug);
            }
            current_stage = stage;
        }
        let report = run_global_round(&mut server, &mut clients, &data.refset, cfg.local_epochs)?;
        let test_dice = evaluate(&server.global_model, &data.test)?;
        history.push(HistoryRow {
            epoch,
            stage: stage + 1,
            method,
            seed,
            shift: cfg.shift,
            test_dice,
            train_loss: report.train_loss,
            n_rejected_clients: report.n_rejected,
            temporal_rollback: report.rolled_back,
        })?;
        history.gate_events.extend(report.events);
    }
    Ok(history)
}

/// Single cell, preparing its own data.
pub fn run_scenario(cfg: &ScenarioConfig, method: Method, seed: u64) -> Result<RunHistory> {
    let data = prepare_data(cfg)?;
    run_with_data(cfg, &data, method, seed)
}

/// Every (method × seed) cell of `cfg`, ordered method-major. `jobs`
/// bounds the worker threads; results do not depend on it.
pub fn run_grid(cfg: &ScenarioConfig, jobs: usize) -> Result<Vec<RunHistory>> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::invalid("jobs", e.to_string()))?;
    pool.install(|| {
        let data = prepare_data(cfg)?;
        let cells: Vec<(Method, u64)> = cfg
            .methods
            .iter()
            .flat_map(|&m| cfg.seeds.iter().map(move |&s| (m, s)))
            .collect();
        cells
            .par_iter()
            .map(|&(m, s)| run_with_data(cfg, &data, m, s))
            .collect()
    })
}
