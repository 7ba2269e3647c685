//! Greedy rollouts of a trained model and the report they produce.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use oryx::envs::{EnvSpec, JointPolicy, PolicySpec, ScriptedPolicy};
use oryx::model::{ActHead, ActMode, Model};
use oryx::numerics::ParamSet;

use crate::stats::{mean_std, norm_score};
use crate::Error;

/// Outcome of one episode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rollout {
    pub ret: f64,
    pub success: bool,
    pub steps: usize,
}

/// Episode `i` draws its environment randomness from stream `i` of `seed`,
/// so results do not depend on how rollouts are scheduled.
fn episode_rng(seed: u64, episode: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode as u64);
    rng
}

/// Runs `episodes` greedy episodes of the model.
pub fn rollouts(
    model: &Model,
    params: &ParamSet,
    env: &EnvSpec,
    episodes: usize,
    seed: u64,
    head: ActHead,
) -> Result<Vec<Rollout>, Error> {
    let meta = env.meta()?;
    let c = model.config();
    if c.agents != meta.agents || c.obs_dim != meta.obs_dim || c.action_dim != meta.action_dim {
        return Err(Error::Mismatch(format!(
            "model expects {} agents × {} obs → {} actions, environment has {} × {} → {}",
            c.agents, c.obs_dim, c.action_dim, meta.agents, meta.obs_dim, meta.action_dim
        )));
    }
    let mut env = env.build()?;
    (0..episodes)
        .map(|i| {
            let mut rng = episode_rng(seed, i);
            let mut obs = env.reset(&mut rng);
            let mut state = model.begin_episode();
            let mut out = Rollout {
                ret: 0.0,
                success: false,
                steps: 0,
            };
            loop {
                let step = model.act(params, &mut state, &obs, env.legal_actions(), ActMode::Greedy, head, &mut rng)?;
                let r = env.step(&step.actions)?;
                out.ret += r.reward;
                out.success |= r.info.success;
                out.steps += 1;
                obs = r.observations;
                if r.terminal {
                    return Ok(out);
                }
            }
        })
        .collect()
}

/// Same protocol with a scripted policy in place of the model.
pub fn scripted_rollouts(policy: PolicySpec, env: &EnvSpec, episodes: usize, seed: u64) -> Result<Vec<Rollout>, Error> {
    let mut env = env.build()?;
    let mut policy = ScriptedPolicy::new(policy)?;
    (0..episodes)
        .map(|i| {
            let mut rng = episode_rng(seed, i);
            let mut obs = env.reset(&mut rng);
            policy.begin_episode();
            let mut out = Rollout {
                ret: 0.0,
                success: false,
                steps: 0,
            };
            loop {
                let a = policy.act(&obs, env.legal_actions(), &mut rng)?;
                let r = env.step(&a)?;
                out.ret += r.reward;
                out.success |= r.info.success;
                out.steps += 1;
                obs = r.observations;
                if r.terminal {
                    return Ok(out);
                }
            }
        })
        .collect()
}

/// Reference policy defining a normalised score of 1.
pub fn expert_policy(env: &EnvSpec) -> PolicySpec {
    match env {
        EnvSpec::Tmaze(_) => PolicySpec::Expert,
        EnvSpec::MatrixGame { payoff } => {
            let best = (0..4)
                .max_by(|&a, &b| payoff[a / 2][a % 2].total_cmp(&payoff[b / 2][b % 2]))
                .expect("four joint actions");
            PolicySpec::Fixed {
                actions: vec![best / 2, best % 2],
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub env: EnvSpec,
    pub episodes: usize,
    pub seed: u64,
    /// `"policy"` or `"q-values"`: which head chose the actions.
    pub head: String,
    pub returns: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; zero for a single episode.
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub success_rate: f64,
    /// Mean return of the uniform random policy on the same episode seeds.
    pub random_score: f64,
    /// Mean return of [`expert_policy`] on the same episode seeds.
    pub expert_score: f64,
    /// `None` when the two reference scores coincide.
    pub normalized_score: Option<f64>,
}

impl EvalReport {
    pub fn new(env: EnvSpec, seed: u64, head: ActHead, runs: &[Rollout]) -> Result<Self, Error> {
        if runs.is_empty() {
            return Err(Error::Input("evaluation needs at least one episode".into()));
        }
        let returns: Vec<f64> = runs.iter().map(|r| r.ret).collect();
        let (mean, std) = mean_std(&returns);
        let reference = |p| -> Result<f64, Error> {
            let r = scripted_rollouts(p, &env, runs.len(), seed)?;
            Ok(r.iter().map(|x| x.ret).sum::<f64>() / r.len() as f64)
        };
        let random_score = reference(PolicySpec::Random)?;
        let expert_score = reference(expert_policy(&env))?;
        Ok(EvalReport {
            episodes: runs.len(),
            seed,
            head: match head {
                ActHead::Policy => "policy".into(),
                ActHead::QValues => "q-values".into(),
            },
            min: returns.iter().cloned().fold(f64::INFINITY, f64::min),
            max: returns.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            success_rate: runs.iter().filter(|r| r.success).count() as f64 / runs.len() as f64,
            normalized_score: norm_score(mean, random_score, expert_score).ok(),
            mean,
            std,
            returns,
            random_score,
            expert_score,
            env,
        })
    }
}
