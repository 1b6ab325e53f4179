//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

use std::collections::BTreeSet;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use dynfed_core::federation::{
    client_local_train, prepare_data, run_global_round, run_grid, temporal_step, ClientState,
    ServerState,
};
use dynfed_core::gate::{dynbc_distance, prediction_distance, prediction_of};
use dynfed_core::metrics::dice;
use dynfed_core::nn::loss_and_gradient;
use dynfed_core::synth::{build_reference_set, reference_pool, TextureSpec};
use dynfed_core::{
    Arch, DistanceMetric, GateState, Method, ModelParams, PoisonSpec, ReferenceSet, RunHistory,
    ScenarioConfig, TemporalVerdict, Tensor, Verdict, PRESETS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($msg)+));
        }
    };
}

fn bits(m: &ModelParams) -> Vec<u64> {
    m.theta().iter().map(|v| v.to_bits()).collect()
}

fn refset(side: usize, n: usize) -> ReferenceSet {
    build_reference_set(
        n,
        &mut ChaCha8Rng::seed_from_u64(5),
        &reference_pool(true, false),
        &TextureSpec::reference(side),
    )
    .unwrap()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn scores(runs: &[RunHistory], method: Method) -> Vec<f64> {
    runs.iter()
        .filter(|h| h.meta.method == method)
        .map(|h| h.final_score().unwrap())
        .collect()
}

fn fmt_scores(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:.4}")).collect();
    format!("[{}] mean {:.4}", parts.join(", "), mean(xs))
}

fn gradient_check() -> Outcome {
    const H: f64 = 1e-5;
    let start = Instant::now();
    let mut worst = 0.0f64;
    for instance in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + instance);
        let side = [5, 6, 8][instance as usize % 3];
        let params = ModelParams::uniform(Arch::segmenter(side), 0.5, &mut rng);
        let batch = 1 + instance as usize % 2;
        let n = batch * side * side;
        let images = Tensor::new(
            vec![batch, 1, side, side],
            (0..n).map(|_| rng.random()).collect(),
        )
        .unwrap();
        let targets = Tensor::new(
            vec![batch, 1, side, side],
            (0..n).map(|_| f64::from(rng.random_bool(0.3))).collect(),
        )
        .unwrap();
        let loss = |p: &ModelParams| loss_and_gradient(p, &images, &targets, 1.0).unwrap().0;
        let (_, analytic) = loss_and_gradient(&params, &images, &targets, 1.0).unwrap();
        for (k, &a) in analytic.iter().enumerate() {
            let mut plus = params.clone();
            plus.theta_mut()[k] += H;
            let mut minus = params.clone();
            minus.theta_mut()[k] -= H;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * H);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max(err);
        }
    }
    let elapsed = start.elapsed();
    ensure!(worst < 1e-4, "max relative error {worst:.3e}");
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:.1?}");
    Ok(format!("max relative error {worst:.2e} in {elapsed:.1?}"))
}

/// Running-maximum rule written out directly, for comparison with `GateState`.
struct ReferenceGate {
    th: f64,
    dmax: f64,
    warmup: usize,
}

impl ReferenceGate {
    fn decide(&mut self, d: f64) -> bool {
        if self.warmup > 0 {
            self.dmax = self.dmax.max(d);
            return true;
        }
        if d <= self.dmax {
            return true;
        }
        let limit = if self.dmax == 0.0 {
            GateState::DEFAULT_FLOOR
        } else {
            self.th * self.dmax
        };
        if d <= limit {
            self.dmax = d;
            true
        } else {
            false
        }
    }
}

/// Feeds `rounds` to both gates, checking the invariants at every step.
fn replay_gate(th: f64, warmup: usize, rounds: &[Vec<f64>]) -> Result<(), String> {
    let mut state = GateState::new(th, warmup, DistanceMetric::DiffNorm).unwrap();
    let mut reference = ReferenceGate {
        th,
        dmax: 0.0,
        warmup,
    };
    for round in rounds {
        let warm = state.in_warmup();
        for &d in round {
            let before = state.clone();
            let decision = state.spatial(d).unwrap();
            let accepted = decision.verdict == Verdict::Accept;
            ensure!(
                accepted == reference.decide(d),
                "verdict differs at {d} in {rounds:?}"
            );
            ensure!(
                state.delta_max() == reference.dmax,
                "delta_max differs in {rounds:?}"
            );
            ensure!(
                state.delta_max() >= before.delta_max(),
                "delta_max decreased"
            );
            ensure!(!warm || accepted, "warmup rejected {d}");
            if !warm && accepted {
                ensure!(
                    d <= th * before.delta_max().max(GateState::DEFAULT_FLOOR),
                    "accepted {d} above bound"
                );
            }
            if !accepted {
                ensure!(state == before, "rejection changed the gate");
            }
        }
        state.end_round();
        reference.warmup = reference.warmup.saturating_sub(1);
    }
    Ok(())
}

fn gate_state_machine() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10_000 {
        let th = rng.random_range(1.05..3.0);
        let warmup = rng.random_range(0..3);
        let rounds: Vec<Vec<f64>> = (0..rng.random_range(1..8))
            .map(|_| {
                (0..rng.random_range(1..6))
                    .map(|_| match rng.random_range(0..4) {
                        0 => 0.0,
                        1 => rng.random_range(0.0..1.0),
                        2 => rng.random_range(0.0..20.0),
                        _ => (rng.random_range(0..8) as f64) * 0.5,
                    })
                    .collect()
            })
            .collect();
        replay_gate(th, warmup, &rounds)?;
    }
    let grid = [0.0, 0.5, 1.0, 2.0, 2.5, 4.5, 9.0];
    let mut small = 0;
    for th in [1.5, 2.0, 2.1] {
        for warmup in 0..=2 {
            for len in 1..=4u32 {
                for code in 0..grid.len().pow(len) {
                    let mut c = code;
                    let seq: Vec<f64> = (0..len)
                        .map(|_| {
                            let v = grid[c % grid.len()];
                            c /= grid.len();
                            v
                        })
                        .collect();
                    replay_gate(
                        th,
                        warmup,
                        &seq.iter().map(|&d| vec![d]).collect::<Vec<_>>(),
                    )?;
                    replay_gate(th, warmup, &[seq])?;
                    small += 2;
                }
            }
        }
    }
    Ok(format!(
        "10000 random sequences, {small} exhaustive small cases"
    ))
}

fn metric_oracles() -> Outcome {
    let a = vec![vec![0.5; 4]];
    let b = vec![vec![1.0, 0.0, 1.0, 0.0]];
    let dot = prediction_distance(&a, &b, DistanceMetric::DotProduct).unwrap();
    let diff = prediction_distance(&a, &b, DistanceMetric::DiffNorm).unwrap();
    ensure!((dot - 1.0).abs() < 1e-12, "dot {dot}");
    ensure!((diff - 1.0).abs() < 1e-12, "diffnorm {diff}");
    let set = refset(8, 8);
    let model =
        |s| ModelParams::uniform(Arch::segmenter(8), 0.4, &mut ChaCha8Rng::seed_from_u64(s));
    let mut worst = 0.0f64;
    for pair in 0..100u64 {
        let (m, n) = (model(2 * pair), model(2 * pair + 1));
        let self_dist = dynbc_distance(&m, &m, &set, DistanceMetric::DiffNorm).unwrap();
        ensure!(self_dist == 0.0, "DiffNorm(m, m) = {self_dist}");
        for metric in [DistanceMetric::DiffNorm, DistanceMetric::DotProduct] {
            let ab = dynbc_distance(&m, &n, &set, metric).unwrap();
            let ba = dynbc_distance(&n, &m, &set, metric).unwrap();
            worst = worst.max((ab - ba).abs());
        }
    }
    ensure!(worst <= 1e-12, "asymmetry {worst:.3e}");
    Ok(format!(
        "2x2 examples exact, self-distance 0, max asymmetry {worst:.1e}"
    ))
}

fn dice_oracle() -> Outcome {
    let set_dice = |pred: &[f64], gt: &[f64]| {
        let p: BTreeSet<usize> = (0..pred.len()).filter(|&i| pred[i] > 0.5).collect();
        let g: BTreeSet<usize> = (0..gt.len()).filter(|&i| gt[i] == 1.0).collect();
        if p.is_empty() && g.is_empty() {
            return 1.0;
        }
        2.0 * p.intersection(&g).count() as f64 / (p.len() + g.len()) as f64
    };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for case in 0..100 {
        let density: f64 = rng.random();
        let pred: Vec<f64> = (0..64)
            .map(|_| f64::from(rng.random_bool(density)))
            .collect();
        let gt: Vec<f64> = (0..64)
            .map(|_| f64::from(rng.random_bool(density)))
            .collect();
        let got = dice(&pred, &gt, 0.5).unwrap();
        ensure!(got == set_dice(&pred, &gt), "case {case}: {got}");
    }
    let empty = vec![0.0; 64];
    ensure!(
        dice(&empty, &empty, 0.5).unwrap() == 1.0,
        "both-empty is not 1"
    );
    Ok("100 random 8x8 pairs exact, both-empty = 1".into())
}

fn poisoned_client() -> Outcome {
    let start = Instant::now();
    let poisoned = 4;
    let cfg = ScenarioConfig {
        methods: vec![Method::Baseline, Method::Dynbc],
        shifted_clients: 0,
        epochs: 20,
        eval_epochs: 5,
        poison: Some(PoisonSpec {
            clients: vec![poisoned],
            from_round: 2,
            scale: 0.3,
        }),
        ..ScenarioConfig::preset("cd-bcss-analog").unwrap()
    };
    let runs = run_grid(&cfg, 1).map_err(|e| e.to_string())?;
    let (base, dyn_) = (
        scores(&runs, Method::Baseline),
        scores(&runs, Method::Dynbc),
    );
    let post_warmup = cfg.total_epochs() - cfg.warmup_rounds;
    let rates: Vec<f64> = runs
        .iter()
        .filter(|h| h.meta.method == Method::Dynbc)
        .map(|h| h.rejected_clients(poisoned) as f64 / post_warmup as f64)
        .collect();
    let elapsed = start.elapsed();
    let detail = format!(
        "rejection rates {rates:?}, dynbc {}, baseline {}, {elapsed:.0?}",
        fmt_scores(&dyn_),
        fmt_scores(&base)
    );
    ensure!(rates.iter().all(|&r| r >= 0.9), "{detail}");
    ensure!(dyn_.iter().zip(&base).all(|(d, b)| d > b), "{detail}");
    ensure!(elapsed < Duration::from_secs(600), "{detail}");
    Ok(detail)
}

fn directional(preset: &str, budget: Duration) -> Outcome {
    let start = Instant::now();
    let cfg = ScenarioConfig {
        methods: vec![Method::Baseline, Method::Dynbc, Method::Rehearsal],
        ..ScenarioConfig::preset(preset).unwrap()
    };
    let runs = run_grid(&cfg, 1).map_err(|e| e.to_string())?;
    let base = scores(&runs, Method::Baseline);
    let dyn_ = scores(&runs, Method::Dynbc);
    let reh = scores(&runs, Method::Rehearsal);
    let elapsed = start.elapsed();
    let tie = if mean(&dyn_) == mean(&base) {
        " (holds by equality)"
    } else {
        ""
    };
    let detail = format!(
        "dynbc {}, baseline {}, rehearsal {} (reported){tie}, {elapsed:.0?}",
        fmt_scores(&dyn_),
        fmt_scores(&base),
        fmt_scores(&reh)
    );
    ensure!(mean(&dyn_) >= mean(&base), "{detail}");
    ensure!(elapsed < budget, "{detail}");
    Ok(detail)
}

fn rollback_exactness() -> Outcome {
    let set = refset(16, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let committed = ModelParams::init(Arch::segmenter(16), &mut rng);
    let gate = GateState::new(2.0, 0, DistanceMetric::DiffNorm)
        .unwrap()
        .with_delta_max(1e-3);
    let mut server = ServerState::new(committed.clone(), gate.clone(), Method::Dynbc, 1e-2);
    let huge = ModelParams::uniform(Arch::segmenter(16), 10.0, &mut rng);
    let preds = prediction_of(&committed, &set).unwrap();
    let (verdict, delta) = temporal_step(&mut server, huge, &set, &preds).unwrap();
    ensure!(
        verdict == TemporalVerdict::Rollback,
        "verdict {verdict:?} at {delta}"
    );
    ensure!(
        bits(&server.global_model) == bits(&committed),
        "global model changed"
    );
    ensure!(
        bits(&server.previous_model) == bits(&committed),
        "rollback target changed"
    );
    ensure!(server.gate == gate, "gate state changed");
    Ok(format!(
        "delta {delta:.3} vs bound {:.1e}, restored bit-exactly",
        gate.bound()
    ))
}

fn baseline_equivalence() -> Outcome {
    let cfg = ScenarioConfig {
        patch_size: 16,
        patients: 10,
        patches_per_patient: 4,
        refset_size: 8,
        ..ScenarioConfig::preset("cd-bcss-analog").unwrap()
    };
    let data = prepare_data(&cfg).unwrap();
    let arch = Arch::segmenter(cfg.patch_size);
    let init = ModelParams::init(arch.clone(), &mut ChaCha8Rng::seed_from_u64(0));
    let gate = GateState::new(cfg.threshold_factor, 1, cfg.metric).unwrap();
    let mut server = ServerState::new(init.clone(), gate, Method::Baseline, cfg.server_lr);
    let mut fed: Vec<ClientState> = data
        .shards
        .iter()
        .enumerate()
        .map(|(id, s)| {
            ClientState::new(id, s.clone(), arch.param_count(), cfg.lr, cfg.batch_size, 0)
        })
        .collect();
    let mut plain = fed.clone();
    let mut global = init;
    for round in 1..=20 {
        run_global_round(&mut server, &mut fed, &data.refset, 1).unwrap();
        let trained: Vec<ModelParams> = plain
            .iter_mut()
            .map(|c| client_local_train(c, &global, 1).unwrap().0)
            .collect();
        let mut sum = trained[0].theta().to_vec();
        for m in &trained[1..] {
            sum.iter_mut().zip(m.theta()).for_each(|(s, v)| *s += v);
        }
        sum.iter_mut().for_each(|s| *s /= trained.len() as f64);
        global = ModelParams::unflatten(arch.clone(), sum).unwrap();
        ensure!(
            bits(&server.global_model) == bits(&global),
            "round {round} differs"
        );
    }
    Ok(format!("{} clients, 20 rounds bit-identical", fed.len()))
}

fn dynfed(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_dynfed"))
        .args(args)
        .env_remove("DYNFED_OUT_DIR")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

const SHORT: &[&str] = &["--seeds", "0", "--epochs", "3", "--eval-epochs", "2"];
/// Moves the stage boundary of a staged preset into the shortened run.
const SHORT_STAGE: &[&str] = &["--stage-boundaries", "3"];

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let mut compared = 0;
    for preset in PRESETS {
        let mut outputs = Vec::new();
        for jobs in ["1", "2"] {
            let dir = tmp.path().join(format!("{preset}-{jobs}"));
            let mut args = vec![
                "run",
                "--preset",
                preset,
                "--jobs",
                jobs,
                "--out-dir",
                dir.to_str().unwrap(),
            ];
            args.extend_from_slice(SHORT);
            if !ScenarioConfig::preset(preset)
                .unwrap()
                .stage_boundaries
                .is_empty()
            {
                args.extend_from_slice(SHORT_STAGE);
            }
            dynfed(&args)?;
            outputs.push(csv_files(&dir));
        }
        ensure!(!outputs[0].is_empty(), "{preset}: no CSVs written");
        ensure!(
            outputs[0] == outputs[1],
            "{preset}: CSVs differ between --jobs 1 and 2"
        );
        compared += outputs[0].len();
    }
    Ok(format!(
        "{} presets, {compared} CSV files byte-identical across --jobs 1/2",
        PRESETS.len()
    ))
}

fn ablations() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let th_dir = tmp.path().join("threshold");
    let mut args = vec![
        "ablate-threshold",
        "--factors",
        "1.9,2.0,2.1",
        "--out-dir",
        th_dir.to_str().unwrap(),
    ];
    args.extend_from_slice(SHORT);
    args.extend_from_slice(SHORT_STAGE);
    let table = dynfed(&args)?;
    let rows: Vec<&str> = table
        .lines()
        .skip(1)
        .filter(|l| !l.starts_with("wrote"))
        .collect();
    ensure!(
        table.starts_with("threshold_factor"),
        "threshold table header: {table}"
    );
    ensure!(rows.len() == 3, "threshold table rows: {table}");
    for f in ["1.9", "2", "2.1"] {
        ensure!(
            rows.iter().any(|r| r.starts_with(f)),
            "factor {f} missing: {table}"
        );
        ensure!(
            th_dir.join(format!("gate_th{f}_dynbc_seed0.csv")).exists(),
            "gate log for {f}"
        );
    }
    ensure!(
        fs::read_to_string(th_dir.join("summary.csv"))
            .unwrap()
            .lines()
            .count()
            == 4,
        "threshold summary.csv"
    );

    let ra_dir = tmp.path().join("refaug");
    let mut args = vec!["ablate-refaug", "--out-dir", ra_dir.to_str().unwrap()];
    args.extend_from_slice(SHORT);
    args.extend_from_slice(SHORT_STAGE);
    let table = dynfed(&args)?;
    let rows: Vec<&str> = table
        .lines()
        .skip(1)
        .filter(|l| !l.starts_with("wrote"))
        .collect();
    ensure!(
        table.starts_with("scenario"),
        "refaug table header: {table}"
    );
    ensure!(rows.len() == 2, "refaug table rows: {table}");
    ensure!(
        rows.iter().all(|r| r.matches('±').count() == 2),
        "refaug cells: {table}"
    );
    ensure!(
        fs::read_to_string(ra_dir.join("summary.csv"))
            .unwrap()
            .lines()
            .count()
            == 5,
        "refaug summary.csv"
    );
    Ok("3-row threshold table, 2x2 reference-augmentation table".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("gradient correctness", gradient_check),
        ("gate state machine", gate_state_machine),
        ("distance oracles", metric_oracles),
        ("dice oracle", dice_oracle),
        ("poisoned client", poisoned_client),
        ("client drift", || {
            directional("cd-bcss-analog", Duration::from_secs(900))
        }),
        ("catastrophic forgetting", || {
            directional("cf-analog", Duration::from_secs(900))
        }),
        ("rollback exactness", rollback_exactness),
        ("baseline equivalence", baseline_equivalence),
        ("determinism", determinism),
        ("ablation plumbing", ablations),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
