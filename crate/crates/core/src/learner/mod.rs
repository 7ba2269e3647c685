//! The training update: critic regression onto reweighted bootstrap targets
//! plus advantage-weighted behaviour cloning, on one shared network.

mod tabular;
mod targets;

pub use tabular::TabularGame;
pub use targets::{
    counterfactual_advantage, critic_targets, policy_loss_value, softmax_rows, AdvantageEstimate, AdvantageMode,
    Grouping, PARTITION_TOLERANCE,
};

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{sample_batch, Dataset, SequenceBatch};
use crate::error::{ensure, OryxError, Result};
use crate::model::{ForwardVars, Model};
use crate::numerics::{optimizer_step_in_place, AdamConfig, OptimState, ParamSet, Tape, Tensor, Var};
use crate::retention::SequenceLayout;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub gamma: f64,
    pub alpha_critic: f64,
    pub alpha_policy: f64,
    pub batch_size: usize,
    pub seq_len: usize,
    /// Updates between hard copies into the target network.
    pub target_sync: u64,
    pub lr: f64,
    /// Multiply critic softmax weights by the group size.
    pub partition_scaling: bool,
    /// Shuffle the agent order before every update.
    pub permute_agents: bool,
    pub grouping: Grouping,
    pub advantage: AdvantageMode,
    /// `false` trains the Q head alone with max-backup targets and no policy
    /// term; actions are then taken greedily on Q.
    pub icq: bool,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            gamma: 0.99,
            alpha_critic: 1000.0,
            alpha_policy: 0.1,
            batch_size: 64,
            seq_len: 20,
            target_sync: 100,
            lr: 3e-4,
            partition_scaling: true,
            permute_agents: true,
            grouping: Grouping::Batch,
            advantage: AdvantageMode::Cumulative,
            icq: true,
        }
    }
}

impl HyperParams {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.gamma > 0.0 && self.gamma <= 1.0, "discount {} outside (0, 1]", self.gamma);
        ensure!(
            self.alpha_critic > 0.0 && self.alpha_policy > 0.0,
            "temperatures must be positive"
        );
        ensure!(self.batch_size >= 1 && self.seq_len >= 1, "batch size and length must be positive");
        ensure!(self.target_sync >= 1, "target sync period must be positive");
        ensure!(self.lr >= 0.0 && self.lr.is_finite(), "learning rate {}", self.lr);
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateMetrics {
    pub step: u64,
    pub critic_loss: f64,
    pub policy_loss: f64,
    pub mean_abs_advantage: f64,
    pub weight_entropy: f64,
    /// Largest deviation of a group's weight sum from one.
    pub partition_error: f64,
    pub wall_ms: f64,
}

/// A batch in the agent order and length the network will see.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedBatch {
    pub batch: SequenceBatch,
    /// `perm[j]` is the dataset agent placed at position `j`.
    pub perm: Vec<usize>,
    pub observations: Tensor,
    pub layout: SequenceLayout,
}

impl PreparedBatch {
    pub fn new(batch: &SequenceBatch, perm: Vec<usize>) -> Result<Self> {
        batch.validate()?;
        let batch = batch.permute_agents(&perm)?.trim_leading_padding();
        let observations = Tensor::new(
            &[batch.batch, batch.len, batch.agents, batch.obs_dim],
            batch.observations.clone(),
        )?;
        let layout = SequenceLayout::new(batch.batch, batch.len, batch.agents, batch.starts.clone())?;
        Ok(PreparedBatch {
            batch,
            perm,
            observations,
            layout,
        })
    }

    /// Applies a random agent order when `hp.permute_agents` is set.
    pub fn sample(batch: &SequenceBatch, hp: &HyperParams, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut perm: Vec<usize> = (0..batch.agents).collect();
        if hp.permute_agents {
            perm.shuffle(rng);
        }
        Self::new(batch, perm)
    }

    fn tokens(&self) -> usize {
        self.batch.steps() * self.batch.agents
    }
}

/// Everything the losses treat as constant, derived from the current and
/// target networks' outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeights {
    /// Per token; only meaningful where `critic_weights` is non-zero.
    pub critic_targets: Vec<f64>,
    /// `1 / count` on tokens that enter the critic loss, else zero.
    pub critic_weights: Vec<f64>,
    /// Partition weights on real tokens, else zero.
    pub policy_weights: Vec<f64>,
    pub advantage: Option<AdvantageEstimate>,
}

/// Targets and weights from the current network's `q_values` and `logits`
/// (both `(B, L, n, A)`) and the target network.
pub fn loss_weights(
    model: &Model,
    target_params: &ParamSet,
    prep: &PreparedBatch,
    q_values: &Tensor,
    logits: &Tensor,
    hp: &HyperParams,
) -> Result<LossWeights> {
    let b = &prep.batch;
    let (n, len) = (b.agents, b.len);
    let a = model.config().action_dim;
    let tokens = prep.tokens();
    ensure!(
        q_values.numel() == tokens * a && logits.numel() == tokens * a,
        "outputs do not match the batch"
    );
    let q_target = model
        .forward(target_params, &prep.observations, &b.actions, &prep.layout)?
        .q_values;

    // Critic: real tokens that either end their episode or have a next step
    // inside the window.
    let mut crit_idx = Vec::new();
    let (mut q_next, mut rewards, mut terminals, mut groups) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for w in 0..b.batch {
        for p in 0..len {
            let s = w * len + p;
            if !b.mask[s] || !(b.terminals[s] || p + 1 < len) {
                continue;
            }
            for j in 0..n {
                let i = s * n + j;
                let next = if b.terminals[s] {
                    0.0
                } else {
                    let ni = i + n;
                    let row = &q_target.data()[ni * a..(ni + 1) * a];
                    if hp.icq {
                        row[b.actions[ni]]
                    } else {
                        row.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                    }
                };
                crit_idx.push(i);
                q_next.push(next);
                rewards.push(b.rewards[s]);
                terminals.push(b.terminals[s]);
                groups.push(hp.grouping.group_of(j));
            }
        }
    }
    let mut critic_targets = vec![0.0; tokens];
    let mut critic_weights = vec![0.0; tokens];
    if hp.icq {
        let y = targets::critic_targets(&q_next, &rewards, &terminals, &groups, hp)?;
        for (&i, y) in crit_idx.iter().zip(y) {
            critic_targets[i] = y;
        }
    } else {
        for (k, &i) in crit_idx.iter().enumerate() {
            let boot = if terminals[k] { 0.0 } else { hp.gamma * q_next[k] };
            critic_targets[i] = rewards[k] + boot;
        }
    }
    for &i in &crit_idx {
        critic_weights[i] = 1.0 / crit_idx.len() as f64;
    }

    let mut policy_weights = vec![0.0; tokens];
    let advantage = if hp.icq {
        let steps = b.steps();
        let shape = [steps, n, a];
        let q = q_values.clone().reshape(&shape)?;
        let probs = softmax_rows(logits).reshape(&shape)?;
        let adv = counterfactual_advantage(&q, &probs, &b.actions, hp.advantage)?;
        let real: Vec<usize> = (0..tokens).filter(|&i| b.mask[i / n]).collect();
        let est = AdvantageEstimate::new(
            real.iter().map(|&i| adv.data()[i]).collect(),
            real.iter().map(|&i| hp.grouping.group_of(i % n)).collect(),
            hp.alpha_policy,
        )?;
        for (k, &i) in real.iter().enumerate() {
            policy_weights[i] = est.weights[k];
        }
        Some(est)
    } else {
        None
    };
    Ok(LossWeights {
        critic_targets,
        critic_weights,
        policy_weights,
        advantage,
    })
}

/// Critic and policy loss nodes on a tape holding the current network's
/// forward pass.
pub fn loss_nodes(
    tape: &mut Tape,
    fv: &ForwardVars,
    prep: &PreparedBatch,
    weights: &LossWeights,
) -> Result<(Var, Var)> {
    let actions = &prep.batch.actions;
    let q_sel = tape.gather(fv.q_values, actions)?;
    let neg: Vec<f64> = weights.critic_targets.iter().map(|y| -y).collect();
    let diff = tape.add_const(q_sel, &neg)?;
    let sq = tape.square(diff);
    let critic = tape.weighted_sum(sq, &weights.critic_weights)?;
    tape.set_name(critic, "critic_loss");
    let lp = tape.log_softmax(fv.logits);
    let picked = tape.gather(lp, actions)?;
    let neg_w: Vec<f64> = weights.policy_weights.iter().map(|w| -w).collect();
    let policy = tape.weighted_sum(picked, &neg_w)?;
    tape.set_name(policy, "policy_loss");
    Ok((critic, policy))
}

/// One optimiser step on `params`. The caller owns the step counter and
/// target synchronisation.
#[allow(clippy::too_many_arguments)]
pub fn update_step(
    model: &Model,
    batch: &SequenceBatch,
    params: &mut ParamSet,
    target_params: &ParamSet,
    optim: &mut OptimState,
    hp: &HyperParams,
    rng: &mut ChaCha8Rng,
    step: u64,
) -> Result<UpdateMetrics> {
    let started = Instant::now();
    let prep = PreparedBatch::sample(batch, hp, rng)?;
    let mut tape = Tape::new();
    let pv = tape.params(params);
    let fv = model.forward_tape(&mut tape, &pv, &prep.observations, &prep.batch.actions, &prep.layout)?;
    let weights = loss_weights(
        model,
        target_params,
        &prep,
        tape.value(fv.q_values),
        tape.value(fv.logits),
        hp,
    )?;
    let (partition_error, mean_abs_advantage, weight_entropy) = match &weights.advantage {
        Some(est) => (est.check_partition()?, est.mean_abs_advantage(), est.weight_entropy()),
        None => (0.0, 0.0, 0.0),
    };
    let (critic, policy) = loss_nodes(&mut tape, &fv, &prep, &weights)?;
    let total = if hp.icq { tape.add(critic, policy)? } else { critic };
    let mut metrics = UpdateMetrics {
        step,
        critic_loss: tape.scalar(critic)?,
        policy_loss: if hp.icq { tape.scalar(policy)? } else { 0.0 },
        mean_abs_advantage,
        weight_entropy,
        partition_error,
        wall_ms: 0.0,
    };
    if !tape.value(total).is_finite() {
        log::error!("non-finite loss at update {step}: {metrics:?}");
        return Err(OryxError::Numeric {
            node: format!("total_loss (update {step}, metrics {metrics:?})"),
        });
    }
    let grads = tape.backward(total, &pv)?;
    optimizer_step_in_place(params, &grads, optim)?;
    metrics.wall_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok(metrics)
}

/// Owns parameters, target copy, optimiser and sampling stream for a run.
#[derive(Clone, Debug)]
pub struct Trainer {
    model: Model,
    hp: HyperParams,
    params: ParamSet,
    target: ParamSet,
    optim: OptimState,
    rng: ChaCha8Rng,
    updates: u64,
}

impl Trainer {
    /// Initialises parameters from `seed`; the same seed also drives batch
    /// sampling and agent permutations.
    pub fn new(model: Model, hp: HyperParams, seed: u64) -> Result<Self> {
        hp.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = model.init_params(&mut rng)?;
        Self::with_params(model, hp, params, rng)
    }

    pub fn with_params(model: Model, hp: HyperParams, params: ParamSet, rng: ChaCha8Rng) -> Result<Self> {
        hp.validate()?;
        let optim = OptimState::new(&params, hp.adam());
        Ok(Trainer {
            target: params.clone(),
            model,
            hp,
            params,
            optim,
            rng,
            updates: 0,
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn hyper_params(&self) -> &HyperParams {
        &self.hp
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn target_params(&self) -> &ParamSet {
        &self.target
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Samples a batch and applies one update, syncing the target network
    /// every `target_sync` updates.
    pub fn step(&mut self, dataset: &Dataset) -> Result<UpdateMetrics> {
        ensure!(
            dataset.meta.agents == self.model.config().agents
                && dataset.meta.env.obs_dim == self.model.config().obs_dim,
            "dataset shape does not match the model"
        );
        let batch = sample_batch(dataset, self.hp.batch_size, self.hp.seq_len, &mut self.rng)?;
        self.step_on(&batch)
    }

    pub fn step_on(&mut self, batch: &SequenceBatch) -> Result<UpdateMetrics> {
        self.updates += 1;
        let m = update_step(
            &self.model,
            batch,
            &mut self.params,
            &self.target,
            &mut self.optim,
            &self.hp,
            &mut self.rng,
            self.updates,
        )?;
        if self.updates % self.hp.target_sync == 0 {
            self.sync_target();
        }
        Ok(m)
    }

    pub fn sync_target(&mut self) {
        self.target = self.params.clone();
    }
}
