//! One function per subcommand.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;

use oryx::data::{self, Dataset, DatasetStats};
use oryx::envs::{EnvSpec, ScriptedPolicy};
use oryx::learner::{Trainer, UpdateMetrics};
use oryx::model::{ActHead, Checkpoint, Model};

use crate::config::{
    sidecar, write_json, Ablation, CompareConfig, EvalConfig, ExportConfig, GenDataConfig, SubsampleConfig,
    TrainConfig,
};
use crate::eval::{rollouts, EvalReport};
use crate::stats::{mean_std, welch_t_test, WelchResult};
use crate::Error;

pub const METRICS_HEADER: [&str; 6] = [
    "step",
    "critic_loss",
    "policy_loss",
    "mean_abs_advantage",
    "weight_entropy",
    "wall_ms",
];
pub const EVALS_HEADER: [&str; 3] = ["step", "mean_return", "success_rate"];

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const EVALS_FILE: &str = "evals.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.oryx";

pub fn gen_data(cfg: &GenDataConfig) -> Result<DatasetStats, Error> {
    let mut env = cfg.env.build()?;
    let mut policy = ScriptedPolicy::new(cfg.policy.clone())?;
    let ds = data::record(env.as_mut(), &mut policy, cfg.transitions, cfg.seed)?;
    ds.save(&cfg.output)?;
    write_json(&sidecar(&cfg.output), cfg)?;
    Ok(ds.stats()?)
}

pub fn stats(path: &Path) -> Result<DatasetStats, Error> {
    Ok(Dataset::load(path)?.stats()?)
}

pub fn subsample(cfg: &SubsampleConfig) -> Result<DatasetStats, Error> {
    let ds = Dataset::load(&cfg.input)?;
    let out = data::subsample_uniform(&ds, cfg.transitions, cfg.seed)?;
    out.save(&cfg.output)?;
    write_json(&sidecar(&cfg.output), cfg)?;
    Ok(out.stats()?)
}

/// Which head a checkpoint trained under `ablation` should act with.
pub fn acting_head(ablation: Option<Ablation>) -> ActHead {
    match ablation {
        Some(Ablation::NoIcq) => ActHead::QValues,
        _ => ActHead::Policy,
    }
}

fn head_name(head: ActHead) -> &'static str {
    match head {
        ActHead::Policy => "policy",
        ActHead::QValues => "q-values",
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSnapshot {
    pub step: u64,
    pub mean_return: f64,
    pub success_rate: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub updates: u64,
    pub last: Option<UpdateMetrics>,
    pub evals: Vec<EvalSnapshot>,
    pub checkpoint: PathBuf,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, Error> {
    csv::Writer::from_path(path).map_err(|source| Error::Csv {
        path: path.into(),
        source,
    })
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.into(),
        source,
    }
}

/// Trains on a dataset file. Writes the resolved config, the per-update
/// metrics curve, evaluation snapshots and the final checkpoint into
/// `cfg.out_dir`.
pub fn train(cfg: &TrainConfig) -> Result<TrainSummary, Error> {
    let ds = Dataset::load(&cfg.dataset)?;
    let env = &ds.meta.env;
    let model = Model::new(
        cfg.model
            .to_config(env.obs_dim, env.action_dim, env.agents, cfg.autoregressive),
    )?;
    let head = acting_head(cfg.ablation);
    let mut trainer = Trainer::new(model.clone(), cfg.hyper.clone(), cfg.seed)?;

    std::fs::create_dir_all(&cfg.out_dir).map_err(|source| Error::Io {
        path: cfg.out_dir.clone(),
        source,
    })?;
    write_json(&cfg.out_dir.join(CONFIG_FILE), cfg)?;
    let metrics_path = cfg.out_dir.join(METRICS_FILE);
    let evals_path = cfg.out_dir.join(EVALS_FILE);
    let mut metrics = csv_writer(&metrics_path)?;
    metrics.write_record(METRICS_HEADER).map_err(csv_err(&metrics_path))?;
    let mut evals_csv = csv_writer(&evals_path)?;
    evals_csv.write_record(EVALS_HEADER).map_err(csv_err(&evals_path))?;

    let mut last = None;
    let mut evals = Vec::new();
    let started = Instant::now();
    for u in 1..=cfg.updates {
        let m = match trainer.step(&ds) {
            Ok(m) => m,
            Err(e) => {
                // Keep the curve up to the failure.
                metrics.flush().map_err(|source| Error::Io {
                    path: metrics_path.clone(),
                    source,
                })?;
                log::error!("update {u} failed; last metrics: {last:?}");
                return Err(e.into());
            }
        };
        let wall = if cfg.timing { m.wall_ms } else { 0.0 };
        metrics
            .write_record([
                m.step.to_string(),
                m.critic_loss.to_string(),
                m.policy_loss.to_string(),
                m.mean_abs_advantage.to_string(),
                m.weight_entropy.to_string(),
                wall.to_string(),
            ])
            .map_err(csv_err(&metrics_path))?;
        let snapshot_due = cfg.eval_every > 0 && (u % cfg.eval_every == 0 || u == cfg.updates);
        if snapshot_due && cfg.eval_episodes > 0 {
            let runs = rollouts(&model, trainer.params(), &env.spec, cfg.eval_episodes, cfg.seed, head)?;
            let returns: Vec<f64> = runs.iter().map(|r| r.ret).collect();
            let snap = EvalSnapshot {
                step: u,
                mean_return: mean_std(&returns).0,
                success_rate: runs.iter().filter(|r| r.success).count() as f64 / runs.len() as f64,
            };
            log::info!(
                "update {u}: return {:.3}, success {:.3}, critic {:.4}, policy {:.4} ({:.0}s)",
                snap.mean_return,
                snap.success_rate,
                m.critic_loss,
                m.policy_loss,
                started.elapsed().as_secs_f64()
            );
            evals_csv
                .write_record([u.to_string(), snap.mean_return.to_string(), snap.success_rate.to_string()])
                .map_err(csv_err(&evals_path))?;
            evals.push(snap);
        }
        last = Some(m);
    }
    metrics.flush().map_err(|source| Error::Io {
        path: metrics_path.clone(),
        source,
    })?;
    evals_csv.flush().map_err(|source| Error::Io {
        path: evals_path.clone(),
        source,
    })?;

    let checkpoint = cfg.out_dir.join(CHECKPOINT_FILE);
    let meta = json!({
        "env": env.spec,
        "head": head_name(head),
        "ablation": cfg.ablation,
        "updates": cfg.updates,
        "seed": cfg.seed,
    });
    Checkpoint::new(model.config().clone(), trainer.params().clone(), meta)?.save(&checkpoint)?;
    Ok(TrainSummary {
        updates: cfg.updates,
        last,
        evals,
        checkpoint,
    })
}

/// Environment and acting head recorded in a checkpoint's metadata.
pub fn checkpoint_setting(ck: &Checkpoint) -> Result<(EnvSpec, ActHead), Error> {
    let env = ck
        .meta
        .get("env")
        .cloned()
        .ok_or_else(|| Error::Input("checkpoint metadata names no environment".into()))?;
    let env: EnvSpec = serde_json::from_value(env)
        .map_err(|e| Error::Input(format!("checkpoint environment: {e}")))?;
    let head = match ck.meta.get("head").and_then(|h| h.as_str()) {
        None | Some("policy") => ActHead::Policy,
        Some("q-values") => ActHead::QValues,
        Some(other) => return Err(Error::Input(format!("unknown acting head {other:?}"))),
    };
    Ok((env, head))
}

pub fn eval(cfg: &EvalConfig) -> Result<EvalReport, Error> {
    if cfg.episodes == 0 {
        return Err(Error::Input("evaluation needs at least one episode".into()));
    }
    let ck = Checkpoint::load(&cfg.checkpoint)?;
    let (recorded, head) = checkpoint_setting(&ck)?;
    let env = cfg.env.clone().unwrap_or(recorded);
    let runs = rollouts(&ck.model()?, &ck.params, &env, cfg.episodes, cfg.seed, head)?;
    let report = EvalReport::new(env, cfg.seed, head, &runs)?;
    write_json(&cfg.output, &report)?;
    write_json(&sidecar(&cfg.output), cfg)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareSide {
    pub reports: Vec<PathBuf>,
    pub episodes: usize,
    pub mean: f64,
    pub std: f64,
    /// Mean return of each report, in input order.
    pub run_means: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub a: CompareSide,
    pub b: CompareSide,
    pub t: f64,
    pub dof: f64,
    /// Two-sided.
    pub p: f64,
}

fn load_side(paths: &[PathBuf]) -> Result<(Vec<EvalReport>, Vec<f64>), Error> {
    if paths.is_empty() {
        return Err(Error::Input("each side needs at least one evaluation report".into()));
    }
    let reports = paths
        .iter()
        .map(|p| crate::config::read_json::<EvalReport>(p))
        .collect::<Result<Vec<_>, _>>()?;
    let pooled = reports.iter().flat_map(|r| r.returns.iter().copied()).collect();
    Ok((reports, pooled))
}

/// Welch test of `a` against `b`. Several reports on one side have their
/// per-episode returns pooled; all reports must come from the same
/// environment.
pub fn compare(cfg: &CompareConfig) -> Result<CompareReport, Error> {
    let (ra, pa) = load_side(&cfg.a)?;
    let (rb, pb) = load_side(&cfg.b)?;
    let env = &ra[0].env;
    if let Some((r, path)) = ra
        .iter()
        .zip(&cfg.a)
        .chain(rb.iter().zip(&cfg.b))
        .find(|(r, _)| &r.env != env)
    {
        return Err(Error::Mismatch(format!(
            "{} evaluates {:?}, {} evaluates {:?}",
            path.display(),
            r.env,
            cfg.a[0].display(),
            env
        )));
    }
    let WelchResult { t, dof, p, .. } = welch_t_test(&pa, &pb)?;
    let side = |reports: &[EvalReport], pooled: &[f64], paths: &[PathBuf]| {
        let (mean, std) = mean_std(pooled);
        CompareSide {
            reports: paths.to_vec(),
            episodes: pooled.len(),
            mean,
            std,
            run_means: reports.iter().map(|r| r.mean).collect(),
        }
    };
    let report = CompareReport {
        a: side(&ra, &pa, &cfg.a),
        b: side(&rb, &pb, &cfg.b),
        t,
        dof,
        p,
    };
    if let Some(out) = &cfg.output {
        write_json(out, &report)?;
        write_json(&sidecar(out), cfg)?;
    }
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct ExportSummary {
    pub runs: usize,
    pub rows: usize,
    /// Empty cells left out of the output.
    pub skipped: usize,
}

/// Run id for a curve file: its directory name for `metrics.csv`, else the
/// file stem; repeated ids get a `#k` suffix.
fn run_ids(inputs: &[PathBuf]) -> Vec<String> {
    let mut seen = HashSet::new();
    inputs
        .iter()
        .map(|p| {
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            let parent = p
                .parent()
                .and_then(|d| d.file_name())
                .map(|s| s.to_string_lossy().into_owned());
            let base = match parent {
                Some(dir) if p.file_name().is_some_and(|f| f == METRICS_FILE) => dir,
                _ => stem,
            };
            let mut id = base.clone();
            let mut k = 2;
            while !seen.insert(id.clone()) {
                id = format!("{base}#{k}");
                k += 1;
            }
            id
        })
        .collect()
}

/// Reshapes metric CSVs into one long-format table `run,step,metric,value`.
/// Values are copied verbatim.
pub fn export_curves(cfg: &ExportConfig) -> Result<ExportSummary, Error> {
    if cfg.inputs.is_empty() {
        return Err(Error::Input("export needs at least one metrics file".into()));
    }
    let mut out = csv_writer(&cfg.output)?;
    out.write_record(["run", "step", "metric", "value"])
        .map_err(csv_err(&cfg.output))?;
    let mut schema: Option<csv::StringRecord> = None;
    let mut summary = ExportSummary {
        runs: cfg.inputs.len(),
        rows: 0,
        skipped: 0,
    };
    for (path, run) in cfg.inputs.iter().zip(run_ids(&cfg.inputs)) {
        let mut rdr = csv::Reader::from_path(path).map_err(csv_err(path))?;
        let header = rdr.headers().map_err(csv_err(path))?.clone();
        match &schema {
            None => {
                if header.get(0) != Some("step") {
                    return Err(Error::Mismatch(format!(
                        "{}: first column must be `step`",
                        path.display()
                    )));
                }
                schema = Some(header.clone());
            }
            Some(s) if s != &header => {
                return Err(Error::Mismatch(format!(
                    "{} has columns {:?}, expected {:?}",
                    path.display(),
                    header.iter().collect::<Vec<_>>(),
                    s.iter().collect::<Vec<_>>()
                )));
            }
            Some(_) => {}
        }
        for record in rdr.records() {
            let record = record.map_err(csv_err(path))?;
            let step = &record[0];
            for (metric, value) in header.iter().zip(record.iter()).skip(1) {
                if value.trim().is_empty() {
                    summary.skipped += 1;
                    continue;
                }
                out.write_record([run.as_str(), step, metric, value])
                    .map_err(csv_err(&cfg.output))?;
                summary.rows += 1;
            }
        }
    }
    out.flush().map_err(|source| Error::Io {
        path: cfg.output.clone(),
        source,
    })?;
    if summary.skipped > 0 {
        log::warn!("{} empty cells omitted", summary.skipped);
    }
    write_json(&sidecar(&cfg.output), cfg)?;
    Ok(summary)
}
