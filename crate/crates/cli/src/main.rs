use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use oryx::envs::{EnvSpec, PolicySpec, TMazeGeometry};
use oryx_cli::commands;
use oryx_cli::config::{
    read_json, Ablation, CompareConfig, EvalConfig, ExportConfig, GenDataConfig, SubsampleConfig, TrainConfig,
    DEFAULT_EVAL_EPISODES,
};

const PAPER_UPDATES: u64 = 100_000;

#[derive(Parser)]
#[command(name = "oryx", version, about = "Offline multi-agent RL laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Record a dataset with a scripted behaviour policy.
    GenData(GenDataArgs),
    /// Print return statistics of a dataset.
    Stats(StatsArgs),
    /// Keep whole episodes of a dataset up to a transition budget.
    Subsample(SubsampleArgs),
    /// Train on a dataset.
    Train(TrainArgs),
    /// Greedy evaluation of a checkpoint.
    Eval(EvalArgs),
    /// Welch t-test between two groups of evaluation reports.
    Compare(CompareArgs),
    /// Merge metric CSVs into one long-format table.
    ExportCurves(ExportArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum EnvName {
    Tmaze,
    MatrixGame,
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum PolicyName {
    Expert,
    Noisy,
    Random,
    Memoryless,
    Fixed,
}

#[derive(Args)]
struct EnvArgs {
    #[arg(long, value_enum, default_value = "tmaze")]
    env: EnvName,
    #[arg(long, default_value_t = TMazeGeometry::default().stem)]
    stem: usize,
    #[arg(long, default_value_t = TMazeGeometry::default().arm)]
    arm: usize,
    #[arg(long, default_value_t = TMazeGeometry::default().step_limit)]
    step_limit: usize,
    /// Matrix-game payoffs r00,r01,r10,r11.
    #[arg(long, value_delimiter = ',', num_args = 4, default_values_t = [1.0, 0.0, 0.0, 1.0])]
    payoff: Vec<f64>,
}

impl EnvArgs {
    fn spec(&self) -> EnvSpec {
        match self.env {
            EnvName::Tmaze => EnvSpec::Tmaze(TMazeGeometry {
                stem: self.stem,
                arm: self.arm,
                step_limit: self.step_limit,
            }),
            EnvName::MatrixGame => {
                let p = &self.payoff;
                EnvSpec::MatrixGame {
                    payoff: [[p[0], p[1]], [p[2], p[3]]],
                }
            }
        }
    }
}

#[derive(Args)]
struct GenDataArgs {
    /// Re-run from a resolved config; other flags are ignored.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    env: EnvArgs,
    #[arg(long, value_enum, default_value = "expert")]
    policy: PolicyName,
    #[arg(long, default_value_t = 0.3)]
    epsilon: f64,
    /// Joint action for `--policy fixed`.
    #[arg(long, value_delimiter = ',')]
    fixed_actions: Vec<usize>,
    #[arg(long, default_value_t = 100_000)]
    transitions: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, required_unless_present = "config")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    dataset: PathBuf,
    /// Accepted for uniformity; statistics use no randomness.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SubsampleArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    input: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    output: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    transitions: Option<u64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Parses a value the way the config files spell it.
fn serde_value<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|e| e.to_string())
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    dataset: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    out_dir: Option<PathBuf>,
    #[arg(long, conflicts_with = "paper_budget")]
    updates: Option<u64>,
    /// Train for the full 100k-update budget.
    #[arg(long)]
    paper_budget: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum)]
    ablate: Option<Ablation>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    ffn_dim: Option<usize>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    kappa_scaling: Option<f64>,
    #[arg(long)]
    chunk_size: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    seq_len: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    alpha_critic: Option<f64>,
    #[arg(long)]
    alpha_policy: Option<f64>,
    #[arg(long)]
    target_sync: Option<u64>,
    /// `batch` or `per-agent`.
    #[arg(long, value_parser = serde_value::<oryx::learner::Grouping>)]
    grouping: Option<oryx::learner::Grouping>,
    /// `cumulative` or `marginal`.
    #[arg(long, value_parser = serde_value::<oryx::learner::AdvantageMode>)]
    advantage: Option<oryx::learner::AdvantageMode>,
    /// Keep the dataset's agent order in every batch.
    #[arg(long)]
    no_permute: bool,
    #[arg(long)]
    no_partition_scaling: bool,
    /// Updates between evaluation snapshots (0 disables them).
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    /// Write 0 in the wall-clock column.
    #[arg(long)]
    no_timing: bool,
}

impl TrainArgs {
    fn resolve(self) -> Result<TrainConfig> {
        let (Some(dataset), Some(out_dir)) = (self.dataset, self.out_dir) else {
            bail!("--dataset and --out-dir are required");
        };
        let mut c = TrainConfig::new(dataset, out_dir, self.seed);
        if self.paper_budget {
            c.updates = PAPER_UPDATES;
        }
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field { $target = v; })*
            };
        }
        set!(
            updates => c.updates,
            embed_dim => c.model.embed_dim,
            ffn_dim => c.model.ffn_dim,
            blocks => c.model.blocks,
            heads => c.model.heads,
            kappa_scaling => c.model.kappa_scaling,
            chunk_size => c.model.chunk_size,
            batch_size => c.hyper.batch_size,
            seq_len => c.hyper.seq_len,
            lr => c.hyper.lr,
            gamma => c.hyper.gamma,
            alpha_critic => c.hyper.alpha_critic,
            alpha_policy => c.hyper.alpha_policy,
            target_sync => c.hyper.target_sync,
            grouping => c.hyper.grouping,
            advantage => c.hyper.advantage,
            eval_every => c.eval_every,
            eval_episodes => c.eval_episodes,
        );
        c.hyper.permute_agents = !self.no_permute;
        c.hyper.partition_scaling = !self.no_partition_scaling;
        c.timing = !self.no_timing;
        Ok(c.ablate(self.ablate))
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_EVAL_EPISODES)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, required_unless_present = "config")]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Evaluation reports of the first group (repeatable).
    #[arg(long, required_unless_present = "config")]
    a: Vec<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    b: Vec<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Accepted for uniformity; the test uses no randomness.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    inputs: Vec<PathBuf>,
    #[arg(long, required_unless_present = "config")]
    output: Option<PathBuf>,
    /// Accepted for uniformity; the export uses no randomness.
    #[arg(long)]
    seed: Option<u64>,
}

fn from_file<T: DeserializeOwned>(path: &Option<PathBuf>) -> Result<Option<T>> {
    path.as_ref()
        .map(|p| read_json(p).with_context(|| format!("reading config {}", p.display())))
        .transpose()
}

fn print<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(a) => {
            let cfg = match from_file(&a.config)? {
                Some(c) => c,
                None => GenDataConfig {
                    env: a.env.spec(),
                    policy: match a.policy {
                        PolicyName::Expert => PolicySpec::Expert,
                        PolicyName::Noisy => PolicySpec::Noisy { epsilon: a.epsilon },
                        PolicyName::Random => PolicySpec::Random,
                        PolicyName::Memoryless => PolicySpec::Memoryless,
                        PolicyName::Fixed => PolicySpec::Fixed {
                            actions: a.fixed_actions,
                        },
                    },
                    transitions: a.transitions,
                    seed: a.seed,
                    output: a.output.expect("required by clap"),
                },
            };
            print(&commands::gen_data(&cfg)?)
        }
        Command::Stats(a) => print(&commands::stats(&a.dataset)?),
        Command::Subsample(a) => {
            let cfg = match from_file(&a.config)? {
                Some(c) => c,
                None => SubsampleConfig {
                    input: a.input.expect("required by clap"),
                    output: a.output.expect("required by clap"),
                    transitions: a.transitions.expect("required by clap"),
                    seed: a.seed,
                },
            };
            print(&commands::subsample(&cfg)?)
        }
        Command::Train(a) => {
            let cfg = match from_file(&a.config)? {
                Some(c) => c,
                None => a.resolve()?,
            };
            let summary = commands::train(&cfg)?;
            print(&summary)
        }
        Command::Eval(a) => {
            let cfg = match from_file(&a.config)? {
                Some(c) => c,
                None => EvalConfig {
                    checkpoint: a.checkpoint.expect("required by clap"),
                    env: None,
                    episodes: a.episodes,
                    seed: a.seed,
                    output: a.output.expect("required by clap"),
                },
            };
            let r = commands::eval(&cfg)?;
            println!(
                "mean {:.4} ± {:.4} over {} episodes, success {:.3}",
                r.mean, r.std, r.episodes, r.success_rate
            );
            Ok(())
        }
        Command::Compare(a) => {
            let cfg = match from_file(&a.config)? {
                Some(c) => c,
                None => CompareConfig {
                    a: a.a,
                    b: a.b,
                    output: a.output,
                },
            };
            print(&commands::compare(&cfg)?)
        }
        Command::ExportCurves(a) => {
            let cfg = match from_file(&a.config)? {
                Some(c) => c,
                None => ExportConfig {
                    inputs: a.inputs,
                    output: a.output.expect("required by clap"),
                },
            };
            let s = commands::export_curves(&cfg)?;
            if s.skipped > 0 {
                eprintln!("warning: {} empty cells omitted", s.skipped);
            }
            print(&s)
        }
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    run(Cli::parse())
}
