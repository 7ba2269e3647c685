//! Desk-scale environments and the scripted behaviour policies that generate
//! offline datasets for them.

mod matrix;
mod policy;
mod tmaze;

pub use matrix::MatrixGame;
pub use policy::{JointPolicy, PolicySpec, ScriptedPolicy};
pub use tmaze::{
    Cell, Phase, TMaze, TMazeGeometry, TMazeState, ACT_DOWN, ACT_GREEN, ACT_LEFT, ACT_NOOP,
    ACT_ORANGE, ACT_RIGHT, ACT_UP, OBS_DIM as TMAZE_OBS_DIM,
};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numerics::Tensor;

/// Extra per-step diagnostics.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepInfo {
    /// Moves rejected this step because of the other agent.
    pub collisions: u32,
    pub success: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    /// `(agents, obs_dim)` observations after the step.
    pub observations: Tensor,
    /// Shared team reward.
    pub reward: f64,
    pub terminal: bool,
    pub info: StepInfo,
}

/// Which environment, with everything needed to rebuild it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum EnvSpec {
    Tmaze(TMazeGeometry),
    MatrixGame { payoff: [[f64; 2]; 2] },
}

/// Self-describing environment block stored in dataset and checkpoint
/// headers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvMeta {
    pub spec: EnvSpec,
    pub agents: usize,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub step_limit: usize,
}

impl EnvSpec {
    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match self {
            EnvSpec::Tmaze(g) => Box::new(TMaze::new(g.clone())?),
            EnvSpec::MatrixGame { payoff } => Box::new(MatrixGame::new(*payoff)),
        })
    }

    pub fn meta(&self) -> Result<EnvMeta> {
        Ok(self.build()?.meta())
    }
}

/// A resettable multi-agent environment with a shared reward.
pub trait Environment {
    fn meta(&self) -> EnvMeta;

    /// Starts a new episode and returns the first observations.
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Tensor;

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult>;

    /// Actions `0..legal_actions()` are valid at the current step.
    fn legal_actions(&self) -> usize;
}
