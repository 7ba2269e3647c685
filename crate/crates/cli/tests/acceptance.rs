//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero if any fails. Criterion numbers given as arguments restrict the
//! run, e.g. `cargo test --test acceptance -- 4 9`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use oryx::data::{record, subsample_uniform, Dataset, DatasetMeta, Episode};
use oryx::envs::{EnvMeta, EnvSpec, PolicySpec, ScriptedPolicy, TMaze, TMazeGeometry};
use oryx::learner::{
    counterfactual_advantage, critic_targets, loss_nodes, loss_weights, policy_loss_value, AdvantageEstimate,
    AdvantageMode, HyperParams, PreparedBatch, TabularGame, Trainer,
};
use oryx::model::{Model, ModelConfig};
use oryx::numerics::{finite_difference_grad_5pt, max_relative_error, GradMap, ParamSet, Tape, Tensor};
use oryx::retention::{
    retention_chunked, retention_parallel, retention_recurrent, RetentionConfig, RetentionState, SequenceLayout,
    WithinStep,
};
use oryx_cli::commands;
use oryx_cli::config::{Ablation, CompareConfig, EvalConfig, GenDataConfig, TrainConfig};
use oryx_cli::eval::EvalReport;
use oryx_cli::stats::{norm_score, welch_t_test};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Tolerances and budgets.
const MODES_TOL: f64 = 1e-10;
const MODES_CASES: usize = 120;
const MODES_BUDGET: Duration = Duration::from_secs(60);
const GRAD_TOL: f64 = 1e-5;
const GRAD_FLOOR: f64 = 1e-4;
const GRAD_STEP: f64 = 5e-5;
const GRAD_BATCHES: u64 = 20;
const GRAD_BUDGET: Duration = Duration::from_secs(300);
const PARTITION_TOL: f64 = 1e-9;
const SMOKE_UPDATES: usize = 1000;
const DECOMPOSITION_TOL: f64 = 1e-12;
const LIMIT_TOL: f64 = 1e-6;
const LIMIT_TEMPERATURE: f64 = 1e9;
const FAST_BUDGET: Duration = Duration::from_secs(1);
const ROUNDTRIP_DATASETS: usize = 50;
const WELCH_T_TOL: f64 = 1e-9;
const WELCH_P_TOL: f64 = 1e-6;

// End-to-end runs.
const SEEDS: [u64; 3] = [1, 2, 3];
const UPDATES: u64 = 20_000;
const EVAL_EPISODES: usize = 320;
const EVAL_SEED: u64 = 1_000;
const DATA_TRANSITIONS: u64 = 100_000;
const MIXED_EPSILON: f64 = 0.3;
const RETURN_BAR: f64 = 0.8;
const SEEDS_REQUIRED: usize = 2;
const MIN_MIXED_SUCCESS: f64 = 0.1;
const SIGNIFICANCE: f64 = 0.05;
const RUN_BUDGET: Duration = Duration::from_secs(2 * 3600);
/// Desk-scale network and batch; everything else is the default setting.
const DESK_EMBED: usize = 32;
const DESK_BATCH: usize = 32;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------------------
// 1. Retention modes

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn token_rows(t: &Tensor, b: usize, first: usize, count: usize, per_seq: usize) -> Tensor {
    let d = t.last_dim();
    let off = (b * per_seq + first) * d;
    Tensor::new(&[count, d], t.data()[off..off + count * d].to_vec()).unwrap()
}

fn retention_modes() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for _ in 0..MODES_CASES {
        let (b, t, n) = (rng.gen_range(1..=4), rng.gen_range(1..=32), rng.gen_range(1..=5));
        let heads = rng.gen_range(1..=4);
        let d = heads * rng.gen_range(1..=4);
        let within = if rng.gen_bool(0.5) {
            WithinStep::AgentCausal
        } else {
            WithinStep::Full
        };
        let cfg = RetentionConfig::new(d, heads, rng.gen_range(0.05..=1.0), rng.gen_range(1..=12), within).unwrap();
        let resets = (0..b * t).map(|_| rng.gen_bool(0.15)).collect();
        let layout = SequenceLayout::new(b, t, n, resets).unwrap();
        let shape = [b, t * n, d];
        let (q, k, v) = (
            random_tensor(&mut rng, &shape),
            random_tensor(&mut rng, &shape),
            random_tensor(&mut rng, &shape),
        );
        let parallel = retention_parallel(&q, &k, &v, &cfg, &layout).unwrap();
        let (chunked, chunk_states) = retention_chunked(&q, &k, &v, &cfg, &layout).unwrap();
        let per_seq = layout.tokens();
        let mut recurrent = vec![0.0; q.numel()];
        for bi in 0..b {
            let mut state = RetentionState::zeros(&cfg);
            for ti in 0..t {
                let rows = |x: &Tensor| token_rows(x, bi, ti * n, n, per_seq);
                let (y, next) =
                    retention_recurrent(&rows(&q), &rows(&k), &rows(&v), &state, &cfg, layout.reset(bi, ti)).unwrap();
                let off = (bi * per_seq + ti * n) * d;
                recurrent[off..off + n * d].copy_from_slice(y.data());
                state = next;
            }
            worst = worst.max(state.max_abs_diff(&chunk_states[bi]));
        }
        let recurrent = Tensor::new(q.shape(), recurrent).unwrap();
        worst = worst
            .max(parallel.max_abs_diff(&recurrent))
            .max(parallel.max_abs_diff(&chunked));
    }
    let elapsed = started.elapsed();
    verdict(
        worst < MODES_TOL && elapsed < MODES_BUDGET,
        format!("{MODES_CASES} configurations, max deviation {worst:.2e} (tol {MODES_TOL:e}), {elapsed:.1?}"),
    )
}

// ---------------------------------------------------------------------------
// 2. Gradient oracle

fn tmaze_data(policy: PolicySpec, transitions: u64, seed: u64) -> Dataset {
    let mut env = TMaze::new(TMazeGeometry::default()).unwrap();
    let mut policy = ScriptedPolicy::new(policy).unwrap();
    record(&mut env, &mut policy, transitions, seed).unwrap()
}

fn small_model(ds: &Dataset, embed: usize) -> Model {
    let env = &ds.meta.env;
    let mut c = ModelConfig::new(env.obs_dim, env.action_dim, env.agents);
    c.embed_dim = embed;
    c.ffn_dim = embed;
    c.blocks = 1;
    c.chunk_size = 3;
    Model::new(c).unwrap()
}

fn gradient_oracle() -> Verdict {
    let started = Instant::now();
    let ds = tmaze_data(PolicySpec::Noisy { epsilon: MIXED_EPSILON }, 500, 17);
    let model = small_model(&ds, 16);
    let hp = HyperParams::default();
    let mut worst: f64 = 0.0;
    for seed in 0..GRAD_BATCHES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = model.init_params(&mut rng).unwrap();
        let target = model.init_params(&mut rng).unwrap();
        let batch = oryx::data::sample_batch(&ds, 3, 5, &mut rng).unwrap();
        let prep = PreparedBatch::sample(&batch, &hp, &mut rng).unwrap();
        let out = model
            .forward(&params, &prep.observations, &prep.batch.actions, &prep.layout)
            .unwrap();
        let weights = loss_weights(&model, &target, &prep, &out.q_values, &out.logits, &hp).unwrap();
        let loss = |p: &ParamSet, which: usize, grad: bool| -> (f64, Option<GradMap>) {
            let mut tape = Tape::new();
            let pv = tape.params(p);
            let fv = model
                .forward_tape(&mut tape, &pv, &prep.observations, &prep.batch.actions, &prep.layout)
                .unwrap();
            let (critic, policy) = loss_nodes(&mut tape, &fv, &prep, &weights).unwrap();
            let l = if which == 0 { critic } else { policy };
            (tape.scalar(l).unwrap(), grad.then(|| tape.backward(l, &pv).unwrap()))
        };
        for which in [0, 1] {
            let analytic = loss(&params, which, true).1.unwrap();
            let numeric = finite_difference_grad_5pt(|p| Ok(loss(p, which, false).0), &params, GRAD_STEP).unwrap();
            worst = worst.max(max_relative_error(&analytic, &numeric, GRAD_FLOOR));
        }
    }
    let elapsed = started.elapsed();
    verdict(
        worst < GRAD_TOL && elapsed < GRAD_BUDGET,
        format!(
            "{GRAD_BATCHES} batches × {{critic, policy}}, embed 16, max relative error {worst:.2e} (tol {GRAD_TOL:e}), {elapsed:.1?}"
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. Partition normalisation

fn partition_normalisation() -> Verdict {
    let ds = tmaze_data(PolicySpec::Noisy { epsilon: MIXED_EPSILON }, 2000, 8);
    let hp = HyperParams {
        batch_size: 8,
        seq_len: 8,
        ..HyperParams::default()
    };
    let mut trainer = Trainer::new(small_model(&ds, 8), hp, 2).unwrap();
    let (mut violations, mut worst) = (0usize, 0.0f64);
    for _ in 0..SMOKE_UPDATES {
        match trainer.step(&ds) {
            Ok(m) => {
                worst = worst.max(m.partition_error);
                violations += (m.partition_error > PARTITION_TOL) as usize;
            }
            Err(_) => violations += 1,
        }
    }
    verdict(
        violations == 0,
        format!("{SMOKE_UPDATES} updates, {violations} violations, max |Σw − 1| {worst:.2e} (tol {PARTITION_TOL:e})"),
    )
}

// ---------------------------------------------------------------------------
// 4. Advantage decomposition

fn advantage_decomposition() -> Verdict {
    let started = Instant::now();
    let game = TabularGame::two_by_two([[1.0, -0.5], [0.25, 2.0]], [0.3, 0.7], [0.6, 0.4]).unwrap();
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for order in [[0, 1], [1, 0]] {
        for joint in [[0, 0], [0, 1], [1, 0], [1, 1]] {
            let (q, probs, actions) = game.decoder_view(&order, &joint).unwrap();
            let adv = counterfactual_advantage(&q, &probs, &actions, AdvantageMode::Cumulative).unwrap();
            worst = worst.max((adv.data()[1] - game.joint_advantage(&joint)).abs());
            cases += 1;
        }
    }
    let elapsed = started.elapsed();
    verdict(
        worst <= DECOMPOSITION_TOL && elapsed < FAST_BUDGET,
        format!("{cases} cases, max |A_cum − (Q − V)| {worst:.2e} (tol {DECOMPOSITION_TOL:e}), {elapsed:.1?}"),
    )
}

// ---------------------------------------------------------------------------
// 5. Temperature limits

fn temperature_limits() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let hp = HyperParams {
        alpha_critic: LIMIT_TEMPERATURE,
        partition_scaling: true,
        ..HyperParams::default()
    };
    let n = 512;
    let q: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
    let r: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let terminal: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.2)).collect();
    let y = critic_targets(&q, &r, &terminal, &vec![0; n], &hp).unwrap();
    let sarsa = (0..n)
        .map(|i| (y[i] - if terminal[i] { r[i] } else { r[i] + hp.gamma * q[i] }).abs())
        .fold(0.0, f64::max);

    let logits = Tensor::new(&[n, 5], (0..n * 5).map(|_| rng.gen_range(-3.0..3.0)).collect()).unwrap();
    let actions: Vec<usize> = (0..n).map(|_| rng.gen_range(0..5)).collect();
    let adv: Vec<f64> = (0..n).map(|_| rng.gen_range(-4.0..4.0)).collect();
    let est = AdvantageEstimate::new(adv, vec![0; n], LIMIT_TEMPERATURE).unwrap();
    let weighted = policy_loss_value(&logits, &actions, &est.weights).unwrap();
    let cloned = policy_loss_value(&logits, &actions, &vec![1.0 / n as f64; n]).unwrap();
    let bc = (weighted - cloned).abs();
    let elapsed = started.elapsed();
    verdict(
        sarsa <= LIMIT_TOL && bc <= LIMIT_TOL && elapsed < FAST_BUDGET,
        format!("critic vs SARSA {sarsa:.2e}, policy vs cloning {bc:.2e} (tol {LIMIT_TOL:e}), {elapsed:.1?}"),
    )
}

// ---------------------------------------------------------------------------
// 6 and 7. End-to-end training

/// Datasets and finished evaluation reports, shared by criteria 6 and 7.
struct Lab {
    dir: PathBuf,
    expert: PathBuf,
    mixed: PathBuf,
}

impl Lab {
    fn new(dir: &Path) -> Self {
        let generate = |name: &str, policy: PolicySpec| {
            let output = dir.join(name);
            commands::gen_data(&GenDataConfig {
                env: EnvSpec::Tmaze(TMazeGeometry::default()),
                policy,
                transitions: DATA_TRANSITIONS,
                seed: 7,
                output: output.clone(),
            })
            .unwrap();
            output
        };
        Lab {
            dir: dir.to_path_buf(),
            expert: generate("expert.oryx", PolicySpec::Expert),
            mixed: generate("mixed.oryx", PolicySpec::Noisy { epsilon: MIXED_EPSILON }),
        }
    }

    /// Trains and evaluates one run, or reuses its report.
    fn run(&self, dataset: &Path, label: &str, ablation: Option<Ablation>, seed: u64) -> (PathBuf, EvalReport, Duration) {
        let out_dir = self.dir.join(format!("{label}-{seed}"));
        let report_path = out_dir.join("eval.json");
        if report_path.exists() {
            let report = oryx_cli::config::read_json(&report_path).unwrap();
            return (report_path, report, Duration::ZERO);
        }
        let started = Instant::now();
        let mut cfg = TrainConfig::new(dataset.to_path_buf(), out_dir, seed).ablate(ablation);
        cfg.updates = UPDATES;
        cfg.model.embed_dim = DESK_EMBED;
        cfg.model.ffn_dim = DESK_EMBED;
        cfg.hyper.batch_size = DESK_BATCH;
        cfg.eval_every = 0;
        let summary = commands::train(&cfg).unwrap();
        let report = commands::eval(&EvalConfig {
            checkpoint: summary.checkpoint,
            env: None,
            episodes: EVAL_EPISODES,
            seed: EVAL_SEED,
            output: report_path.clone(),
        })
        .unwrap();
        let elapsed = started.elapsed();
        eprintln!(
            "  {label} seed {seed}: mean return {:.3} (success {:.3}) in {elapsed:.0?}",
            report.mean, report.success_rate
        );
        (report_path, report, elapsed)
    }
}

fn end_to_end(lab: &Lab) -> Verdict {
    let mixed_success = Dataset::load(&lab.mixed)
        .unwrap()
        .episodes()
        .iter()
        .filter(|e| e.episode_return() > 0.0)
        .count() as f64
        / Dataset::load(&lab.mixed).unwrap().episodes().len() as f64;
    let mut pass = mixed_success >= MIN_MIXED_SUCCESS;
    let mut parts = vec![format!("mixed data success {mixed_success:.2}")];
    for (name, data) in [("expert", &lab.expert), ("mixed", &lab.mixed)] {
        let runs: Vec<_> = SEEDS.iter().map(|&s| lab.run(data, name, None, s)).collect();
        let good = runs.iter().filter(|r| r.1.mean >= RETURN_BAR).count();
        let slow = runs.iter().any(|r| r.2 > RUN_BUDGET);
        pass &= good >= SEEDS_REQUIRED && !slow;
        let means: Vec<String> = runs.iter().map(|r| format!("{:.3}", r.1.mean)).collect();
        parts.push(format!("{name} [{}] ({good}/3 ≥ {RETURN_BAR})", means.join(", ")));
    }
    verdict(pass, parts.join("; "))
}

fn ablations(lab: &Lab) -> Verdict {
    let full: Vec<(PathBuf, EvalReport, Duration)> =
        SEEDS.iter().map(|&s| lab.run(&lab.expert, "expert", None, s)).collect();
    let full_returns = pooled(&full);
    let mut pass = true;
    let mut parts = Vec::new();
    let mut means = Vec::new();
    for (label, ablation) in [
        ("no-autoregressive", Ablation::NoAutoregressive),
        ("no-memory", Ablation::NoMemory),
        ("no-icq", Ablation::NoIcq),
    ] {
        let runs: Vec<_> = SEEDS
            .iter()
            .map(|&s| lab.run(&lab.expert, label, Some(ablation), s))
            .collect();
        let cmp = commands::compare(&CompareConfig {
            a: full.iter().map(|r| r.0.clone()).collect(),
            b: runs.iter().map(|r| r.0.clone()).collect(),
            output: Some(lab.dir.join(format!("compare-{label}.json"))),
        });
        match cmp {
            Ok(c) => {
                let ok = c.b.mean < c.a.mean && c.p < SIGNIFICANCE;
                pass &= ok;
                means.push((label, c.b.mean, c.a.mean));
                parts.push(format!("{label} {:.3} vs {:.3}, p {:.1e}", c.b.mean, c.a.mean, c.p));
            }
            // Both pooled samples constant: the t statistic is undefined, so
            // only complete separation (every ablated episode strictly below
            // every full episode) counts as a lower score.
            Err(oryx_cli::Error::Degenerate(e)) => {
                let ablated = pooled(&runs);
                let ok = ablated.iter().cloned().fold(f64::MIN, f64::max)
                    < full_returns.iter().cloned().fold(f64::MAX, f64::min);
                pass &= ok;
                let (b, a) = (mean(&ablated), mean(&full_returns));
                means.push((label, b, a));
                parts.push(format!("{label} {b:.3} vs {a:.3}, Welch undefined ({e}), complete separation: {ok}"));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("{label}: {e}"));
            }
        }
    }
    // Directional expectation only; reported, not required.
    if let [(_, ar, full), (_, mem, _), (_, icq, _)] = means[..] {
        let intermediate = mem > ar.min(icq) && mem < full;
        parts.push(format!("no-memory intermediate: {intermediate}"));
    }
    verdict(pass, parts.join("; "))
}

fn pooled(runs: &[(PathBuf, EvalReport, Duration)]) -> Vec<f64> {
    runs.iter().flat_map(|r| r.1.returns.iter().copied()).collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

// ---------------------------------------------------------------------------
// 8. Dataset pipeline

fn synthetic_meta(agents: usize) -> DatasetMeta {
    DatasetMeta {
        env: EnvMeta {
            spec: EnvSpec::MatrixGame {
                payoff: [[1.0, 0.0], [0.0, 1.0]],
            },
            agents,
            obs_dim: 2,
            action_dim: 3,
            step_limit: 64,
        },
        agents,
        transitions: 0,
        episodes: 0,
        seed: 0,
        generator: PolicySpec::Random,
        format_version: 1,
        windows_truncate_history: true,
        subsample: None,
    }
}

fn episode(agents: usize, rewards: Vec<f64>, rng: &mut ChaCha8Rng) -> Episode {
    let len = rewards.len();
    let obs = (0..len * agents * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let actions = (0..len * agents).map(|_| rng.gen_range(0..3)).collect();
    Episode::new(agents, 2, obs, actions, rewards).unwrap()
}

fn dataset_pipeline() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mut failures = Vec::new();
    for i in 0..ROUNDTRIP_DATASETS {
        let agents = rng.gen_range(1..4);
        let eps = (0..rng.gen_range(1..30))
            .map(|_| {
                let len = rng.gen_range(1..20);
                let rewards = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
                episode(agents, rewards, &mut rng)
            })
            .collect();
        let ds = Dataset::new(synthetic_meta(agents), eps).unwrap();
        let (a, b) = (dir.path().join("a.oryx"), dir.path().join("b.oryx"));
        ds.save(&a).unwrap();
        let back = Dataset::load(&a).unwrap();
        back.save(&b).unwrap();
        if back != ds || std::fs::read(&a).unwrap() != std::fs::read(&b).unwrap() {
            failures.push(format!("round trip {i}"));
        }
        let target = rng.gen_range(1..=ds.transitions());
        let sub = subsample_uniform(&ds, target, i as u64).unwrap();
        let whole = sub.episodes().iter().all(|e| ds.episodes().contains(e));
        if !whole || sub.transitions() < target {
            failures.push(format!("subsample {i}"));
        }
        let full = subsample_uniform(&ds, ds.transitions(), i as u64).unwrap();
        if full.stats().unwrap() != ds.stats().unwrap() {
            failures.push(format!("full subsample stats {i}"));
        }
    }
    // Returns 1.5, −2 and 0.25 + 0.25 = 0.5.
    let hand = Dataset::new(
        synthetic_meta(1),
        vec![
            episode(1, vec![1.0, 0.5], &mut rng),
            episode(1, vec![-2.0], &mut rng),
            episode(1, vec![0.25, 0.0, 0.25], &mut rng),
        ],
    )
    .unwrap();
    let s = hand.stats().unwrap();
    if (s.mean_return, s.min_return, s.max_return, s.episodes, s.transitions) != (0.0, -2.0, 1.5, 3, 6) {
        failures.push(format!("hand-built stats {s:?}"));
    }
    verdict(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{ROUNDTRIP_DATASETS} byte-identical round trips, subsamples whole and on budget, hand stats exact")
        } else {
            failures.join(", ")
        },
    )
}

// ---------------------------------------------------------------------------
// 9. Normalisation and significance

fn utilities() -> Verdict {
    let fixed = norm_score(0.93, 0.12, 0.93).unwrap() == 1.0 && norm_score(0.12, 0.12, 0.93).unwrap() == 0.0;
    // Hand evaluation: means 3 and 4, variances 2.5 each, so t = −1/√1 = −1,
    // dof = 1² / (2 · 0.5² / 4) = 8 and p = I_{8/9}(4, 1/2) = 758/2187.
    let w = welch_t_test(&[1.0, 2.0, 3.0, 4.0, 5.0], &[2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let (dt, dp) = ((w.t + 1.0).abs(), (w.p - 758.0 / 2187.0).abs());
    let dof_ok = (w.dof - 8.0).abs() < WELCH_T_TOL;
    verdict(
        fixed && dt < WELCH_T_TOL && dp < WELCH_P_TOL && dof_ok,
        format!("norm_score fixed points exact: {fixed}; Welch |Δt| {dt:.1e}, |Δp| {dp:.1e}, dof {:.12}", w.dof),
    )
}

// ---------------------------------------------------------------------------

fn main() {
    let wanted: Vec<usize> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .filter_map(|a| a.parse().ok())
        .collect();
    let selected = |i: usize| wanted.is_empty() || wanted.contains(&i);
    let work = tempfile::tempdir().unwrap();
    let cell = std::cell::OnceCell::new();
    let lab = || cell.get_or_init(|| Lab::new(work.path()));

    let mut failed = 0;
    for i in 1..=9 {
        if !selected(i) {
            continue;
        }
        let (name, outcome) = match i {
            1 => ("retention mode equivalence", catch_unwind(retention_modes)),
            2 => ("gradient oracle", catch_unwind(gradient_oracle)),
            3 => ("partition normalisation", catch_unwind(partition_normalisation)),
            4 => ("advantage decomposition", catch_unwind(advantage_decomposition)),
            5 => ("temperature limits", catch_unwind(temperature_limits)),
            6 => {
                let l = lab();
                ("T-Maze end to end", catch_unwind(AssertUnwindSafe(|| end_to_end(l))))
            }
            7 => {
                let l = lab();
                ("ablation directionality", catch_unwind(AssertUnwindSafe(|| ablations(l))))
            }
            8 => ("dataset pipeline", catch_unwind(dataset_pipeline)),
            _ => ("normalisation and significance", catch_unwind(utilities)),
        };
        let v = outcome.unwrap_or_else(|_| verdict(false, "panicked"));
        failed += !v.pass as usize;
        println!("{} {i}. {name}: {}", if v.pass { "PASS" } else { "FAIL" }, v.detail);
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
