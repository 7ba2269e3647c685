//! Two-phase, two-agent T-shaped maze.
//!
//! ```text
//!   G . . J . . G     row 0: arms, junction J, goals G at the arm ends
//!         .           rows 1..=stem: the stem
//!         .
//!         S           the two start cells are the bottom of the stem
//!         S
//! ```
//!
//! Step 0 is the colour choice (actions [`ACT_ORANGE`], [`ACT_GREEN`]) with a
//! blank observation. From step 1 on, agents move with
//! up/down/left/right/noop and observe a 3×3 view, which corridor is green,
//! and their own previous action. Only the step-1 observation reveals the
//! colour an agent chose.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EnvMeta, EnvSpec, Environment, StepInfo, StepResult};
use crate::error::{ensure, Result};
use crate::numerics::Tensor;

pub const ACT_ORANGE: usize = 0;
pub const ACT_GREEN: usize = 1;
pub const ACT_UP: usize = 0;
pub const ACT_DOWN: usize = 1;
pub const ACT_LEFT: usize = 2;
pub const ACT_RIGHT: usize = 3;
pub const ACT_NOOP: usize = 4;

const AGENTS: usize = 2;
const ACTIONS: usize = 5;
const PREV_SLOTS: usize = 7;
/// 9 view cells, green indicator, 7 previous-action slots, phase flag.
pub const OBS_DIM: usize = 9 + 1 + PREV_SLOTS + 1;
const IND: usize = 9;
const PREV: usize = 10;
const PHASE: usize = PREV + PREV_SLOTS;

/// Grid position as `(row, col)`.
pub type Cell = (usize, usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TMazeGeometry {
    /// Stem cells below the junction.
    pub stem: usize,
    /// Cells on each side of the junction; the last one is the goal.
    pub arm: usize,
    pub step_limit: usize,
}

impl Default for TMazeGeometry {
    fn default() -> Self {
        TMazeGeometry {
            stem: 4,
            arm: 3,
            step_limit: 20,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Choice,
    Navigate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TMazeState {
    phase: Phase,
    /// `true` when the green goal is at the end of the left arm.
    green_left: bool,
    /// Which start cell agent 0 takes (agent 1 takes the other).
    spawn_swap: bool,
    /// Chosen colour per agent, `true` for green.
    chose_green: [bool; AGENTS],
    positions: [Cell; AGENTS],
    prev_action: [Option<usize>; AGENTS],
    timestep: usize,
    terminal: bool,
}

impl TMazeState {
    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn green_left(&self) -> bool {
        self.green_left
    }

    /// Agent positions; meaningless before the navigation phase.
    pub fn positions(&self) -> [Cell; AGENTS] {
        self.positions
    }

    pub fn chose_green(&self) -> [bool; AGENTS] {
        self.chose_green
    }

    pub fn timestep(&self) -> usize {
        self.timestep
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }
}

#[derive(Clone, Debug)]
pub struct TMaze {
    geometry: TMazeGeometry,
    state: Option<TMazeState>,
}

impl TMaze {
    pub fn new(geometry: TMazeGeometry) -> Result<Self> {
        ensure!(geometry.stem >= 2, "stem must hold both start cells");
        ensure!(geometry.arm >= 1, "arms need at least one cell");
        ensure!(geometry.step_limit >= 2, "step limit must exceed the choice step");
        Ok(TMaze {
            geometry,
            state: None,
        })
    }

    pub fn geometry(&self) -> &TMazeGeometry {
        &self.geometry
    }

    pub fn width(&self) -> usize {
        2 * self.geometry.arm + 1
    }

    pub fn height(&self) -> usize {
        self.geometry.stem + 1
    }

    pub fn is_free(&self, (r, c): Cell) -> bool {
        (r == 0 && c < self.width()) || (r >= 1 && r < self.height() && c == self.geometry.arm)
    }

    pub fn starts(&self) -> [Cell; AGENTS] {
        let col = self.geometry.arm;
        [(self.geometry.stem - 1, col), (self.geometry.stem, col)]
    }

    pub fn goal(&self, state: &TMazeState, agent: usize) -> Cell {
        let left = state.chose_green[agent] == state.green_left;
        if left {
            (0, 0)
        } else {
            (0, self.width() - 1)
        }
    }

    /// Fresh episode. Goal colours and spawn order are drawn here but stay
    /// hidden until the navigation phase.
    pub fn reset_state(&self, rng: &mut ChaCha8Rng) -> (TMazeState, Tensor) {
        let state = TMazeState {
            phase: Phase::Choice,
            green_left: rng.gen_bool(0.5),
            spawn_swap: rng.gen_bool(0.5),
            chose_green: [false; AGENTS],
            positions: [(0, 0); AGENTS],
            prev_action: [None; AGENTS],
            timestep: 0,
            terminal: false,
        };
        let obs = self.observe(&state);
        (state, obs)
    }

    pub fn step_state(
        &self,
        state: &TMazeState,
        joint_action: &[usize],
    ) -> Result<(TMazeState, StepResult)> {
        ensure!(!state.terminal, "step called on a terminal T-Maze state");
        ensure!(
            joint_action.len() == AGENTS,
            "T-Maze takes {AGENTS} actions, got {}",
            joint_action.len()
        );
        let mut next = state.clone();
        let mut info = StepInfo::default();
        match state.phase {
            Phase::Choice => {
                for (i, &a) in joint_action.iter().enumerate() {
                    ensure!(a < 2, "choice-phase action {a} out of range for agent {i}");
                    next.chose_green[i] = a == ACT_GREEN;
                }
                let starts = self.starts();
                next.positions = if state.spawn_swap {
                    [starts[1], starts[0]]
                } else {
                    starts
                };
                next.phase = Phase::Navigate;
            }
            Phase::Navigate => {
                for (i, &a) in joint_action.iter().enumerate() {
                    ensure!(a < ACTIONS, "move action {a} out of range for agent {i}");
                }
                let mut target = [(0, 0); AGENTS];
                for i in 0..AGENTS {
                    target[i] = self
                        .shift(state.positions[i], joint_action[i])
                        .filter(|&c| self.is_free(c))
                        .unwrap_or(state.positions[i]);
                }
                let same_target = target[0] == target[1];
                for i in 0..AGENTS {
                    let other = state.positions[1 - i];
                    let moved = target[i] != state.positions[i];
                    if moved && (target[i] == other || same_target) {
                        info.collisions += 1;
                    } else {
                        next.positions[i] = target[i];
                    }
                }
                // Same-target races can only arise with both agents moving,
                // in which case both were rejected above.
            }
        }
        for (i, &a) in joint_action.iter().enumerate() {
            next.prev_action[i] = Some(match state.phase {
                Phase::Choice => a,
                Phase::Navigate => 2 + a,
            });
        }
        next.timestep += 1;
        let mut reward = 0.0;
        if next.phase == Phase::Navigate
            && (0..AGENTS).all(|i| next.positions[i] == self.goal(&next, i))
        {
            reward = 1.0;
            info.success = true;
            next.terminal = true;
        } else if next.timestep >= self.geometry.step_limit {
            next.terminal = true;
        }
        let observations = self.observe(&next);
        Ok((
            next.clone(),
            StepResult {
                observations,
                reward,
                terminal: next.terminal,
                info,
            },
        ))
    }

    fn shift(&self, (r, c): Cell, action: usize) -> Option<Cell> {
        match action {
            ACT_UP => r.checked_sub(1).map(|r| (r, c)),
            ACT_DOWN => Some((r + 1, c)),
            ACT_LEFT => c.checked_sub(1).map(|c| (r, c)),
            ACT_RIGHT => Some((r, c + 1)),
            _ => Some((r, c)),
        }
    }

    pub fn observe(&self, state: &TMazeState) -> Tensor {
        let mut obs = vec![0.0; AGENTS * OBS_DIM];
        for (i, row) in obs.chunks_mut(OBS_DIM).enumerate() {
            match state.phase {
                Phase::Choice => row[PHASE] = 1.0,
                Phase::Navigate => {
                    let (r, c) = state.positions[i];
                    for dr in 0..3 {
                        for dc in 0..3 {
                            let cell = (r + dr).checked_sub(1).zip((c + dc).checked_sub(1));
                            row[dr * 3 + dc] = match cell {
                                Some(p) if p == state.positions[1 - i] => -1.0,
                                Some(p) if self.is_free(p) => 0.0,
                                _ => 1.0,
                            };
                        }
                    }
                    row[IND] = if state.green_left { 1.0 } else { -1.0 };
                    if let Some(a) = state.prev_action[i] {
                        row[PREV + a] = 1.0;
                    }
                }
            }
        }
        Tensor::from_parts(vec![AGENTS, OBS_DIM], obs)
    }

    /// ASCII dump: `#` wall, `.` free, `o`/`g` goals, `0`/`1` agents.
    pub fn render(&self, state: &TMazeState) -> String {
        let mut out = String::new();
        for r in 0..self.height() {
            for c in 0..self.width() {
                let p = (r, c);
                let ch = if state.phase == Phase::Navigate && p == state.positions[0] {
                    '0'
                } else if state.phase == Phase::Navigate && p == state.positions[1] {
                    '1'
                } else if !self.is_free(p) {
                    '#'
                } else if r == 0 && (c == 0 || c == self.width() - 1) {
                    if (c == 0) == state.green_left {
                        'g'
                    } else {
                        'o'
                    }
                } else {
                    '.'
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }

    /// Checks the closure invariants: agents on free, distinct cells.
    pub fn state_is_valid(&self, state: &TMazeState) -> bool {
        match state.phase {
            Phase::Choice => state.timestep == 0,
            Phase::Navigate => {
                state.timestep >= 1
                    && state.positions.iter().all(|&p| self.is_free(p))
                    && state.positions[0] != state.positions[1]
            }
        }
    }
}

impl Environment for TMaze {
    fn meta(&self) -> EnvMeta {
        EnvMeta {
            spec: EnvSpec::Tmaze(self.geometry.clone()),
            agents: AGENTS,
            obs_dim: OBS_DIM,
            action_dim: ACTIONS,
            step_limit: self.geometry.step_limit,
        }
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> Tensor {
        let (state, obs) = self.reset_state(rng);
        self.state = Some(state);
        obs
    }

    fn step(&mut self, joint_action: &[usize]) -> Result<StepResult> {
        let state = self
            .state
            .as_ref()
            .ok_or_else(|| crate::OryxError::contract("step before reset"))?;
        let (next, result) = self.step_state(state, joint_action)?;
        self.state = Some(next);
        Ok(result)
    }

    fn legal_actions(&self) -> usize {
        match self.state.as_ref().map(|s| s.phase) {
            Some(Phase::Choice) | None => 2,
            Some(Phase::Navigate) => ACTIONS,
        }
    }
}
