//! Exact single-step games: joint Q-tables and the decoder-shaped inputs
//! they imply, for checking advantage computations by enumeration.

use crate::error::{ensure, Result};
use crate::numerics::Tensor;

/// A one-step cooperative game with a joint action-value table and
/// independent per-agent policies.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularGame {
    agents: usize,
    actions: usize,
    /// Indexed by the joint action in agent-index order, row-major.
    q: Vec<f64>,
    /// `policy[i][a]`.
    policy: Vec<Vec<f64>>,
}

impl TabularGame {
    pub fn new(agents: usize, actions: usize, q: Vec<f64>, policy: Vec<Vec<f64>>) -> Result<Self> {
        ensure!(agents >= 1 && actions >= 1, "empty game");
        ensure!(q.len() == actions.pow(agents as u32), "joint table has {} entries", q.len());
        ensure!(
            policy.len() == agents
                && policy
                    .iter()
                    .all(|p| p.len() == actions && (p.iter().sum::<f64>() - 1.0).abs() < 1e-12),
            "one normalised policy row per agent"
        );
        Ok(TabularGame { agents, actions, q, policy })
    }

    /// Two agents, two actions, payoff `q[a0][a1]`.
    pub fn two_by_two(q: [[f64; 2]; 2], p0: [f64; 2], p1: [f64; 2]) -> Result<Self> {
        Self::new(
            2,
            2,
            vec![q[0][0], q[0][1], q[1][0], q[1][1]],
            vec![p0.to_vec(), p1.to_vec()],
        )
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    pub fn joint_q(&self, joint: &[usize]) -> f64 {
        let idx = joint.iter().fold(0, |acc, &a| acc * self.actions + a);
        self.q[idx]
    }

    /// Expected joint value with agents in `fixed` pinned to their actions
    /// and everyone else drawn from their policy.
    pub fn partial_q(&self, fixed: &[Option<usize>]) -> f64 {
        let mut joint = vec![0; self.agents];
        self.expect(fixed, 0, &mut joint)
    }

    fn expect(&self, fixed: &[Option<usize>], i: usize, joint: &mut [usize]) -> f64 {
        if i == self.agents {
            return self.joint_q(joint);
        }
        match fixed[i] {
            Some(a) => {
                joint[i] = a;
                self.expect(fixed, i + 1, joint)
            }
            None => (0..self.actions)
                .map(|a| {
                    joint[i] = a;
                    self.policy[i][a] * self.expect(fixed, i + 1, joint)
                })
                .sum(),
        }
    }

    pub fn value(&self) -> f64 {
        self.partial_q(&vec![None; self.agents])
    }

    /// `Q(a) − V`.
    pub fn joint_advantage(&self, joint: &[usize]) -> f64 {
        self.joint_q(joint) - self.value()
    }

    /// What an exact decoder would output when agents act in `order`:
    /// `(q, probs, actions)` shaped `(1, n, A)`, `(1, n, A)`, `(n)`, where
    /// row `m` has agents `order[..m]` pinned.
    pub fn decoder_view(&self, order: &[usize], joint: &[usize]) -> Result<(Tensor, Tensor, Vec<usize>)> {
        let (n, a) = (self.agents, self.actions);
        let mut sorted = order.to_vec();
        sorted.sort_unstable();
        ensure!(sorted == (0..n).collect::<Vec<_>>(), "{order:?} is not an agent order");
        ensure!(joint.len() == n && joint.iter().all(|&x| x < a), "bad joint action");
        let mut q = Vec::with_capacity(n * a);
        let mut probs = Vec::with_capacity(n * a);
        let mut fixed = vec![None; n];
        for &agent in order {
            for act in 0..a {
                fixed[agent] = Some(act);
                q.push(self.partial_q(&fixed));
            }
            fixed[agent] = Some(joint[agent]);
            probs.extend(&self.policy[agent]);
        }
        let actions = order.iter().map(|&i| joint[i]).collect();
        Ok((Tensor::new(&[1, n, a], q)?, Tensor::new(&[1, n, a], probs)?, actions))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn value_is_policy_average() {
        let g = TabularGame::two_by_two([[1.0, 0.0], [0.0, 2.0]], [0.5, 0.5], [0.25, 0.75]).unwrap();
        let expected = 0.5 * 0.25 * 1.0 + 0.5 * 0.75 * 2.0;
        assert!((g.value() - expected).abs() < 1e-15);
        assert_eq!(g.joint_q(&[1, 1]), 2.0);
        assert!((g.partial_q(&[Some(1), None]) - 1.5).abs() < 1e-15);
    }
}
