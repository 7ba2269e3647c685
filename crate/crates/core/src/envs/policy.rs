use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tmaze::{ACT_GREEN, ACT_LEFT, ACT_NOOP, ACT_ORANGE, ACT_RIGHT, ACT_UP, OBS_DIM};
use crate::error::{ensure, Result};
use crate::numerics::Tensor;

/// Behaviour policy description, stored in dataset headers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PolicySpec {
    /// Hand-coded T-Maze solution.
    Expert,
    /// Expert, but a uniformly random legal action with probability `epsilon`.
    Noisy { epsilon: f64 },
    /// Uniform over legal actions.
    Random,
    /// T-Maze navigator that forgets its colour after the first move.
    Memoryless,
    /// Always the same joint action.
    Fixed { actions: Vec<usize> },
}

/// Decentralised policy over all agents of one environment.
pub trait JointPolicy {
    fn begin_episode(&mut self);

    /// One action per agent from `(agents, obs_dim)` observations; only
    /// actions below `legal` may be returned.
    fn act(&mut self, obs: &Tensor, legal: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>>;

    fn spec(&self) -> PolicySpec;
}

// Observation layout mirrored from the maze.
const VIEW_LEFT: usize = 3;
const VIEW_RIGHT: usize = 5;
const VIEW_DOWN: usize = 7;
const IND: usize = 9;
const PREV: usize = 10;
const PHASE: usize = 17;
const WALL: f64 = 1.0;

/// Scripted behaviour policies for dataset generation.
///
/// The expert uses an index convention for the colour choice (agent 0
/// orange, agent 1 green), remembers its colour from the first navigation
/// observation, climbs the stem and walks to the end of its arm. The rear
/// agent simply retries while the front one blocks the junction.
#[derive(Clone, Debug)]
pub struct ScriptedPolicy {
    spec: PolicySpec,
    /// Remembered colour per agent, `true` for green.
    memory: Vec<Option<bool>>,
}

impl ScriptedPolicy {
    pub fn new(spec: PolicySpec) -> Result<Self> {
        if let PolicySpec::Noisy { epsilon } = spec {
            ensure!(
                (0.0..=1.0).contains(&epsilon),
                "epsilon must lie in [0, 1], got {epsilon}"
            );
        }
        Ok(ScriptedPolicy {
            spec,
            memory: Vec::new(),
        })
    }

    fn maze_action(&mut self, agent: usize, row: &[f64], forgetful: bool, rng: &mut ChaCha8Rng) -> usize {
        if row[PHASE] == 1.0 {
            return if agent % 2 == 0 { ACT_ORANGE } else { ACT_GREEN };
        }
        let seen = if row[PREV + ACT_GREEN] == 1.0 {
            Some(true)
        } else if row[PREV + ACT_ORANGE] == 1.0 {
            Some(false)
        } else {
            None
        };
        let colour = if forgetful {
            seen
        } else {
            if seen.is_some() {
                self.memory[agent] = seen;
            }
            self.memory[agent]
        };
        if row[VIEW_LEFT] == WALL && row[VIEW_RIGHT] == WALL {
            return ACT_UP;
        }
        let green_left = row[IND] > 0.0;
        let go_left = match colour {
            Some(green) => green == green_left,
            None => {
                let in_arm = row[VIEW_DOWN] == WALL;
                let prev_left = row[PREV + 2 + ACT_LEFT] == 1.0;
                let prev_right = row[PREV + 2 + ACT_RIGHT] == 1.0;
                if in_arm && (prev_left || prev_right) {
                    prev_left
                } else {
                    rng.gen_bool(0.5)
                }
            }
        };
        let ahead = if go_left { row[VIEW_LEFT] } else { row[VIEW_RIGHT] };
        if ahead == WALL {
            ACT_NOOP
        } else if go_left {
            ACT_LEFT
        } else {
            ACT_RIGHT
        }
    }
}

impl JointPolicy for ScriptedPolicy {
    fn begin_episode(&mut self) {
        self.memory.iter_mut().for_each(|m| *m = None);
    }

    fn act(&mut self, obs: &Tensor, legal: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        ensure!(legal >= 1, "no legal actions");
        let agents = obs.rows();
        if self.memory.len() != agents {
            self.memory = vec![None; agents];
        }
        let needs_maze = matches!(
            self.spec,
            PolicySpec::Expert | PolicySpec::Noisy { .. } | PolicySpec::Memoryless
        );
        ensure!(
            !needs_maze || obs.last_dim() == OBS_DIM,
            "{:?} policy needs T-Maze observations of width {OBS_DIM}, got {}",
            self.spec,
            obs.last_dim()
        );
        let rows: Vec<&[f64]> = obs.data().chunks(obs.last_dim()).collect();
        let mut joint = Vec::with_capacity(agents);
        for (i, row) in rows.into_iter().enumerate() {
            let a = match self.spec.clone() {
                PolicySpec::Expert => self.maze_action(i, row, false, rng),
                PolicySpec::Memoryless => self.maze_action(i, row, true, rng),
                PolicySpec::Noisy { epsilon } => {
                    // Always run the expert so its colour memory stays current.
                    let expert = self.maze_action(i, row, false, rng);
                    if rng.gen_bool(epsilon) {
                        rng.gen_range(0..legal)
                    } else {
                        expert
                    }
                }
                PolicySpec::Random => rng.gen_range(0..legal),
                PolicySpec::Fixed { ref actions } => {
                    ensure!(
                        actions.len() == agents,
                        "fixed policy has {} actions for {agents} agents",
                        actions.len()
                    );
                    actions[i]
                }
            };
            ensure!(a < legal, "policy produced action {a} with only {legal} legal");
            joint.push(a);
        }
        Ok(joint)
    }

    fn spec(&self) -> PolicySpec {
        self.spec.clone()
    }
}
