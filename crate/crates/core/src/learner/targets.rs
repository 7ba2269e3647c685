//! Per-token quantities of the update: bootstrapped critic targets,
//! counterfactual advantages and their exponential partition weights.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, OryxError, Result};
use crate::numerics::{log_softmax_in_place, Tensor};

use super::HyperParams;

/// Tolerance of the runtime check that weights sum to one in every group.
pub const PARTITION_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdvantageMode {
    /// Agent `j` is weighted by the sum of the per-agent terms of agents `0..=j`.
    Cumulative,
    /// Agent `j` is weighted by its own term only.
    Marginal,
}

/// How tokens are pooled into normalisation groups.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Grouping {
    /// One group over every token of the batch.
    Batch,
    /// One group per agent index.
    PerAgent,
}

impl Grouping {
    pub fn group_of(self, agent: usize) -> usize {
        match self {
            Grouping::Batch => 0,
            Grouping::PerAgent => agent,
        }
    }

    pub fn groups(self, agents: usize) -> usize {
        match self {
            Grouping::Batch => 1,
            Grouping::PerAgent => agents,
        }
    }
}

/// Critic targets for tokens that enter the critic loss.
///
/// Non-terminal tokens bootstrap from `q_next` (the target network at the
/// next step under the dataset's next action). Within each group their
/// bootstrap values are reweighted by a softmax of `q_next / α_critic`;
/// with scaling on the weights are multiplied by the group size so that a
/// very large temperature gives back `r + γ q_next`. Terminal tokens get `r`.
pub fn critic_targets(
    q_next: &[f64],
    rewards: &[f64],
    terminals: &[bool],
    groups: &[usize],
    hp: &HyperParams,
) -> Result<Vec<f64>> {
    let n = rewards.len();
    ensure!(
        q_next.len() == n && terminals.len() == n && groups.len() == n,
        "critic_targets: lengths {} / {n} / {} / {}",
        q_next.len(),
        terminals.len(),
        groups.len()
    );
    let mut targets = rewards.to_vec();
    let group_count = groups.iter().max().map_or(0, |g| g + 1);
    for g in 0..group_count {
        let members: Vec<usize> = (0..n).filter(|&i| groups[i] == g && !terminals[i]).collect();
        if members.is_empty() {
            continue;
        }
        let mut logits: Vec<f64> = members.iter().map(|&i| q_next[i] / hp.alpha_critic).collect();
        log_softmax_in_place(&mut logits);
        let m = if hp.partition_scaling { members.len() as f64 } else { 1.0 };
        for (&i, lw) in members.iter().zip(&logits) {
            targets[i] += hp.gamma * m * lw.exp() * q_next[i];
        }
    }
    Ok(targets)
}

/// Per-token advantages from decoder Q-values and policy probabilities.
///
/// `q` and `probs` are `(steps, n, A)` where row `(s, m)` is evaluated with
/// agents `0..m` fixed to their taken actions; `actions` is `(steps, n)`.
/// The per-agent term is `q[a_m] − Σ_a π(a) q[a]`.
pub fn counterfactual_advantage(q: &Tensor, probs: &Tensor, actions: &[usize], mode: AdvantageMode) -> Result<Tensor> {
    ensure!(
        q.shape() == probs.shape() && q.shape().len() == 3,
        "advantage: q {:?} and probabilities {:?}",
        q.shape(),
        probs.shape()
    );
    let (steps, n, a) = (q.shape()[0], q.shape()[1], q.shape()[2]);
    ensure!(actions.len() == steps * n, "advantage: {} actions for {steps}×{n}", actions.len());
    let mut out = vec![0.0; steps * n];
    for s in 0..steps {
        let mut running = 0.0;
        for j in 0..n {
            let i = s * n + j;
            let qr = &q.data()[i * a..(i + 1) * a];
            let pr = &probs.data()[i * a..(i + 1) * a];
            let total: f64 = pr.iter().sum();
            ensure!(
                (total - 1.0).abs() <= 1e-6 && pr.iter().all(|&p| p >= 0.0),
                "probability row ({s}, {j}) sums to {total}"
            );
            ensure!(actions[i] < a, "action {} out of range", actions[i]);
            let baseline: f64 = pr.iter().zip(qr).map(|(p, v)| p * v).sum();
            let term = qr[actions[i]] - baseline;
            running += term;
            out[i] = match mode {
                AdvantageMode::Cumulative => running,
                AdvantageMode::Marginal => term,
            };
        }
    }
    Tensor::new(&[steps, n], out)
}

/// Advantages with their normalised exponential weights.
#[derive(Clone, Debug, PartialEq)]
pub struct AdvantageEstimate {
    pub advantages: Vec<f64>,
    /// `exp(A / α) / Z` within each token's group.
    pub weights: Vec<f64>,
    pub groups: Vec<usize>,
    /// `ln Z` per group.
    pub log_partition: Vec<f64>,
}

impl AdvantageEstimate {
    pub fn new(advantages: Vec<f64>, groups: Vec<usize>, alpha: f64) -> Result<Self> {
        ensure!(advantages.len() == groups.len(), "one group id per advantage");
        ensure!(alpha > 0.0, "temperature must be positive");
        let count = groups.iter().max().map_or(0, |g| g + 1);
        let mut log_partition = vec![f64::NEG_INFINITY; count];
        let mut max = vec![f64::NEG_INFINITY; count];
        for (a, &g) in advantages.iter().zip(&groups) {
            max[g] = max[g].max(a / alpha);
        }
        let mut sums = vec![0.0; count];
        for (a, &g) in advantages.iter().zip(&groups) {
            sums[g] += (a / alpha - max[g]).exp();
        }
        for g in 0..count {
            if sums[g] > 0.0 {
                log_partition[g] = max[g] + sums[g].ln();
            }
        }
        let weights = advantages
            .iter()
            .zip(&groups)
            .map(|(a, &g)| (a / alpha - log_partition[g]).exp())
            .collect();
        Ok(AdvantageEstimate {
            advantages,
            weights,
            groups,
            log_partition,
        })
    }

    fn group_sums(&self) -> Vec<(f64, usize)> {
        let mut sums = vec![(0.0, 0usize); self.log_partition.len()];
        for (w, &g) in self.weights.iter().zip(&self.groups) {
            sums[g].0 += w;
            sums[g].1 += 1;
        }
        sums
    }

    /// Largest deviation of a non-empty group's weight sum from one.
    pub fn partition_error(&self) -> f64 {
        self.group_sums()
            .into_iter()
            .filter(|&(_, n)| n > 0)
            .map(|(s, _)| (s - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn check_partition(&self) -> Result<f64> {
        let err = self.partition_error();
        if err > PARTITION_TOLERANCE {
            return Err(OryxError::Invariant(format!(
                "advantage weights miss one by {err:e}"
            )));
        }
        Ok(err)
    }

    /// Mean over non-empty groups of the weight entropy.
    pub fn weight_entropy(&self) -> f64 {
        let mut h = vec![0.0; self.log_partition.len()];
        for (w, &g) in self.weights.iter().zip(&self.groups) {
            if *w > 0.0 {
                h[g] -= w * w.ln();
            }
        }
        let live: Vec<f64> = self
            .group_sums()
            .iter()
            .zip(h)
            .filter(|((_, n), _)| *n > 0)
            .map(|(_, h)| h)
            .collect();
        if live.is_empty() {
            0.0
        } else {
            live.iter().sum::<f64>() / live.len() as f64
        }
    }

    pub fn mean_abs_advantage(&self) -> f64 {
        if self.advantages.is_empty() {
            return 0.0;
        }
        self.advantages.iter().map(|a| a.abs()).sum::<f64>() / self.advantages.len() as f64
    }
}

/// `Σ w · (−log π(a))` for logits rows `(tokens, A)`.
pub fn policy_loss_value(logits: &Tensor, actions: &[usize], weights: &[f64]) -> Result<f64> {
    let a = logits.last_dim();
    ensure!(
        logits.rows() == actions.len() && actions.len() == weights.len(),
        "policy loss: {} rows, {} actions, {} weights",
        logits.rows(),
        actions.len(),
        weights.len()
    );
    let mut total = 0.0;
    for (i, (&act, &w)) in actions.iter().zip(weights).enumerate() {
        ensure!(act < a, "action {act} out of range");
        let mut row = logits.data()[i * a..(i + 1) * a].to_vec();
        log_softmax_in_place(&mut row);
        total -= w * row[act];
    }
    Ok(total)
}

/// Row-wise softmax of `(…, A)` logits.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let a = logits.last_dim();
    let mut data = logits.data().to_vec();
    for row in data.chunks_mut(a) {
        log_softmax_in_place(row);
        row.iter_mut().for_each(|v| *v = v.exp());
    }
    Tensor::new(logits.shape(), data).expect("same shape")
}
