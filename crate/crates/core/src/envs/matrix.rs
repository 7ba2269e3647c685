use rand_chacha::ChaCha8Rng;

use super::{EnvMeta, EnvSpec, Environment, StepInfo, StepResult};
use crate::error::{ensure, Result};
use crate::numerics::Tensor;

/// Single-step, two-agent, two-action cooperative game.
///
/// Both agents see the constant observation `[1.0]`; the shared reward is
/// `payoff[a0][a1]` and every episode ends after one step.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixGame {
    payoff: [[f64; 2]; 2],
}

impl MatrixGame {
    pub fn new(payoff: [[f64; 2]; 2]) -> Self {
        MatrixGame { payoff }
    }

    /// The coordination game `[[1, 0], [0, 1]]`.
    pub fn coordination() -> Self {
        Self::new([[1.0, 0.0], [0.0, 1.0]])
    }

    pub fn payoff(&self) -> [[f64; 2]; 2] {
        self.payoff
    }

    fn observation() -> Tensor {
        Tensor::full(&[2, 1], 1.0)
    }

    pub fn step_joint(&self, joint_action: &[usize]) -> Result<StepResult> {
        ensure!(
            joint_action.len() == 2 && joint_action.iter().all(|&a| a < 2),
            "matrix game takes two actions in {{0, 1}}, got {joint_action:?}"
        );
        let reward = self.payoff[joint_action[0]][joint_action[1]];
        Ok(StepResult {
            observations: Self::observation(),
            reward,
            terminal: true,
            info: StepInfo::default(),
        })
    }
}

impl Environment for MatrixGame {
    fn meta(&self) -> EnvMeta {
        EnvMeta {
            spec: EnvSpec::MatrixGame {
                payoff: self.payoff,
            },
            agents: 2,
            obs_dim: 1,
            action_dim: 2,
            step_limit: 1,
        }
    }

    fn reset(&mut self, _rng: &mut ChaCha8Rng) -> Tensor {
        Self::observation()
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult> {
        self.step_joint(joint_action)
    }

    fn legal_actions(&self) -> usize {
        2
    }
}
