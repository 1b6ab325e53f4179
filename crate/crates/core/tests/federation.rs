use dynfed_core::federation::{
    apply_updates, client_local_train, prepare_data, run_global_round, run_grid, temporal_step,
    ClientBehavior, ClientState, ServerState,
};
use dynfed_core::gate::prediction_of;
use dynfed_core::synth::{build_reference_set, reference_pool, TextureSpec};
use dynfed_core::{
    Arch, DistanceMetric, GateState, GateSubject, Method, ModelParams, PoisonSpec, ReferenceSet,
    ScenarioConfig, TemporalVerdict, DESK_LR,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny() -> ScenarioConfig {
    ScenarioConfig {
        patch_size: 16,
        patients: 8,
        patches_per_patient: 4,
        refset_size: 8,
        clients: 3,
        shifted_clients: 1,
        epochs: 3,
        eval_epochs: 1,
        seeds: vec![0, 1],
        lr: DESK_LR,
        methods: vec![
            Method::Baseline,
            Method::Dynbc,
            Method::Rehearsal,
            Method::Fedadam,
        ],
        ..ScenarioConfig::default()
    }
}

fn refset(side: usize) -> ReferenceSet {
    build_reference_set(
        8,
        &mut ChaCha8Rng::seed_from_u64(3),
        &reference_pool(true, false),
        &TextureSpec::reference(side),
    )
    .unwrap()
}

fn clients(cfg: &ScenarioConfig, seed: u64) -> Vec<ClientState> {
    let data = prepare_data(cfg).unwrap();
    let arch = Arch::segmenter(cfg.patch_size);
    data.shards
        .iter()
        .enumerate()
        .map(|(id, shard)| {
            ClientState::new(
                id,
                shard.clone(),
                arch.param_count(),
                cfg.lr,
                cfg.batch_size,
                seed,
            )
        })
        .collect()
}

fn bits(m: &ModelParams) -> Vec<u64> {
    m.theta().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn forced_temporal_rejection_restores_previous_model_exactly() {
    let set = refset(16);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let committed = ModelParams::init(Arch::segmenter(16), &mut rng);
    let gate = GateState::new(2.0, 0, DistanceMetric::DiffNorm)
        .unwrap()
        .with_delta_max(1e-3);
    let mut server = ServerState::new(committed.clone(), gate.clone(), Method::Dynbc, 1e-2);
    let wild = ModelParams::uniform(Arch::segmenter(16), 5.0, &mut rng);
    let preds = prediction_of(&committed, &set).unwrap();

    let (verdict, delta) = temporal_step(&mut server, wild, &set, &preds).unwrap();
    assert_eq!(verdict, TemporalVerdict::Rollback);
    assert!(delta > 2.0 * 1e-3);
    assert_eq!(bits(&server.global_model), bits(&committed));
    assert_eq!(bits(&server.previous_model), bits(&committed));
    assert_eq!(server.gate, gate);
}

#[test]
fn small_temporal_change_commits() {
    let set = refset(16);
    let committed = ModelParams::init(Arch::segmenter(16), &mut ChaCha8Rng::seed_from_u64(1));
    let gate = GateState::new(2.0, 0, DistanceMetric::DiffNorm)
        .unwrap()
        .with_delta_max(1.0);
    let mut server = ServerState::new(committed.clone(), gate, Method::Dynbc, 1e-2);
    let mut nudged = committed.clone();
    nudged.theta_mut()[0] += 1e-6;
    let preds = prediction_of(&committed, &set).unwrap();
    let (verdict, _) = temporal_step(&mut server, nudged.clone(), &set, &preds).unwrap();
    assert_eq!(verdict, TemporalVerdict::Commit);
    assert_eq!(bits(&server.global_model), bits(&nudged));
    assert_eq!(bits(&server.previous_model), bits(&nudged));
}

#[test]
fn ungated_rounds_equal_plain_fedavg() {
    let cfg = tiny();
    let set = refset(cfg.patch_size);
    let init = ModelParams::init(
        Arch::segmenter(cfg.patch_size),
        &mut ChaCha8Rng::seed_from_u64(0),
    );
    let gate = GateState::new(2.0, 1, DistanceMetric::DiffNorm).unwrap();
    let mut server = ServerState::new(init.clone(), gate, Method::Baseline, 1e-2);
    let mut fed = clients(&cfg, 0);
    let mut plain = fed.clone();
    let mut global = init;

    for round in 1..=20 {
        let report = run_global_round(&mut server, &mut fed, &set, 1).unwrap();
        assert!(report.events.is_empty());

        let trained: Vec<ModelParams> = plain
            .iter_mut()
            .map(|c| client_local_train(c, &global, 1).unwrap().0)
            .collect();
        let mut sum = trained[0].theta().to_vec();
        for m in &trained[1..] {
            for (s, v) in sum.iter_mut().zip(m.theta()) {
                *s += v;
            }
        }
        let k = trained.len() as f64;
        sum.iter_mut().for_each(|s| *s /= k);
        global = ModelParams::unflatten(global.arch().clone(), sum).unwrap();
        assert_eq!(bits(&server.global_model), bits(&global), "round {round}");
    }
}

#[test]
fn poisoned_update_is_rejected_after_warmup() {
    let cfg = ScenarioConfig {
        shifted_clients: 0,
        ..tiny()
    };
    let set = refset(cfg.patch_size);
    let init = ModelParams::init(
        Arch::segmenter(cfg.patch_size),
        &mut ChaCha8Rng::seed_from_u64(0),
    );
    let gate = GateState::new(2.0, 1, DistanceMetric::DiffNorm).unwrap();
    let mut server = ServerState::new(init, gate, Method::Dynbc, 1e-2);
    let mut fed = clients(&cfg, 0);
    fed[2].behavior = ClientBehavior::Randomized {
        from_round: 2,
        scale: 0.3,
    };
    let mut events = Vec::new();
    for _ in 0..4 {
        events.extend(
            run_global_round(&mut server, &mut fed, &set, 1)
                .unwrap()
                .events,
        );
    }
    let poisoned: Vec<_> = events
        .iter()
        .filter(|e| e.subject == GateSubject::Client(2))
        .collect();
    assert_eq!(poisoned.len(), 4);
    assert_eq!(poisoned[0].verdict, "accept");
    assert!(
        poisoned[1..].iter().all(|e| e.verdict == "reject"),
        "{poisoned:?}"
    );
}

#[test]
fn empty_update_list_is_an_error() {
    let set = refset(8);
    let model = ModelParams::zeros(Arch::segmenter(8));
    let gate = GateState::new(2.0, 1, DistanceMetric::DiffNorm).unwrap();
    let mut server = ServerState::new(model, gate, Method::Dynbc, 1e-2);
    assert!(apply_updates(&mut server, &[], &set).is_err());
}

#[test]
fn rehearsal_buffer_is_frozen_once_captured() {
    let cfg = tiny();
    let mut c = clients(&cfg, 0).remove(0);
    let n = c.data.len();
    c.capture_rehearsal(0.1);
    let buffer = c.rehearsal_buffer.clone().unwrap();
    assert_eq!(buffer.len(), ((n as f64) * 0.1).ceil() as usize);
    assert!(buffer.iter().all(|p| c.data.contains(p)));
    c.capture_rehearsal(0.5);
    assert_eq!(c.rehearsal_buffer.as_ref().unwrap(), &buffer);
}

#[test]
fn grid_results_do_not_depend_on_jobs() {
    let cfg = ScenarioConfig {
        poison: Some(PoisonSpec {
            clients: vec![0],
            from_round: 2,
            scale: 0.3,
        }),
        ..tiny()
    };
    let one = run_grid(&cfg, 1).unwrap();
    let two = run_grid(&cfg, 2).unwrap();
    assert_eq!(one.len(), cfg.methods.len() * cfg.seeds.len());
    for (a, b) in one.iter().zip(&two) {
        assert_eq!(a.meta, b.meta);
        assert_eq!(a.gate_events, b.gate_events);
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert_eq!(ra.test_dice.to_bits(), rb.test_dice.to_bits());
            assert_eq!(ra.train_loss.to_bits(), rb.train_loss.to_bits());
        }
    }
}
