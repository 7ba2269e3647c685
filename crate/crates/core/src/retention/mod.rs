//! Multi-head retention with per-head exponential decay.
//!
//! Tokens are laid out timestep-major: for a sequence of `T` timesteps and
//! `n` agents, agent `j` at timestep `t` is token `t * n + j`. The decay
//! exponent advances once per timestep, so all agents of one timestep share
//! it. Within a timestep, visibility is either full ([`WithinStep::Full`],
//! used by the encoder) or lower-triangular over agents
//! ([`WithinStep::AgentCausal`], used by the decoder).
//!
//! The three evaluation strategies compute the same function:
//!
//! * [`retention_parallel`]: `y_i = Σ_m D[i,m] (q_i · k_m) v_m` over the
//!   whole sequence at once.
//! * [`retention_recurrent`]: one timestep at a time, carrying
//!   `S_t = κ S_{t-1} + Σ_j k_jᵀ v_j`.
//! * [`retention_chunkwise`]: parallel inside a chunk, plus a cross-chunk
//!   term read from the carried state.
//!
//! A `true` reset flag at timestep `t` zeroes everything before `t`.

mod kernels;

pub use kernels::{
    retention_chunked, retention_chunkwise, retention_parallel, retention_recurrent,
};
pub(crate) use kernels::retention_parallel_backward;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};

/// Within-timestep visibility between agent tokens.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WithinStep {
    /// Every agent token sees every other token of its timestep.
    Full,
    /// Agent `j` sees agents `0..=j` of its timestep.
    AgentCausal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetentionConfig {
    pub embed_dim: usize,
    pub heads: usize,
    /// One decay base per head, each in `[0, 1]`.
    pub decays: Vec<f64>,
    /// Maximum number of timesteps per chunk in chunkwise mode.
    pub chunk_size: usize,
    pub within_step: WithinStep,
}

/// Per-head decays from a single scaling parameter.
///
/// Heads are spread geometrically between `1 - 1/32` and `1 - 1/512` and
/// then multiplied by `scaling`, so a single head with `scaling = 0.5` decays
/// by `0.5 * (1 - 1/32) ≈ 0.484` per timestep.
pub fn decay_schedule(heads: usize, scaling: f64) -> Vec<f64> {
    let lo = (1.0f64 / 32.0).ln();
    let hi = (1.0f64 / 512.0).ln();
    (0..heads)
        .map(|h| {
            let frac = if heads > 1 {
                h as f64 / (heads - 1) as f64
            } else {
                0.0
            };
            scaling * (1.0 - (lo + frac * (hi - lo)).exp())
        })
        .collect()
}

impl RetentionConfig {
    pub fn new(
        embed_dim: usize,
        heads: usize,
        kappa_scaling: f64,
        chunk_size: usize,
        within_step: WithinStep,
    ) -> Result<Self> {
        ensure!(
            kappa_scaling > 0.0 && kappa_scaling <= 1.0,
            "kappa scaling must lie in (0, 1], got {kappa_scaling}"
        );
        Self::with_decays(
            embed_dim,
            decay_schedule(heads, kappa_scaling),
            chunk_size,
            within_step,
        )
    }

    /// Explicit per-head decays. `0` is accepted here (history fully
    /// suppressed) alongside the usual `(0, 1]`.
    pub fn with_decays(
        embed_dim: usize,
        decays: Vec<f64>,
        chunk_size: usize,
        within_step: WithinStep,
    ) -> Result<Self> {
        let heads = decays.len();
        ensure!(heads >= 1, "at least one retention head required");
        ensure!(
            embed_dim % heads == 0 && embed_dim > 0,
            "embed dim {embed_dim} not divisible by {heads} heads"
        );
        ensure!(
            decays.iter().all(|k| (0.0..=1.0).contains(k)),
            "decays must lie in [0, 1]: {decays:?}"
        );
        ensure!(chunk_size >= 1, "chunk size must be positive");
        Ok(RetentionConfig {
            embed_dim,
            heads,
            decays,
            chunk_size,
            within_step,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }
}

/// Shape of a batch of token sequences plus per-timestep reset flags.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceLayout {
    pub batch: usize,
    pub timesteps: usize,
    pub agents: usize,
    /// `batch * timesteps` flags; `true` zeroes all history before that step.
    pub resets: Vec<bool>,
}

impl SequenceLayout {
    pub fn new(batch: usize, timesteps: usize, agents: usize, resets: Vec<bool>) -> Result<Self> {
        ensure!(
            batch > 0 && timesteps > 0 && agents > 0,
            "empty layout ({batch}, {timesteps}, {agents})"
        );
        ensure!(
            resets.len() == batch * timesteps,
            "expected {} reset flags, got {}",
            batch * timesteps,
            resets.len()
        );
        Ok(SequenceLayout {
            batch,
            timesteps,
            agents,
            resets,
        })
    }

    /// Layout with no resets.
    pub fn contiguous(batch: usize, timesteps: usize, agents: usize) -> Result<Self> {
        Self::new(batch, timesteps, agents, vec![false; batch * timesteps])
    }

    /// Tokens per sequence, `T·n`.
    pub fn tokens(&self) -> usize {
        self.timesteps * self.agents
    }

    pub fn token(&self, t: usize, agent: usize) -> usize {
        t * self.agents + agent
    }

    pub fn reset(&self, b: usize, t: usize) -> bool {
        self.resets[b * self.timesteps + t]
    }

    /// Sub-layout covering timesteps `start..end` of every sequence.
    pub fn slice(&self, start: usize, end: usize) -> SequenceLayout {
        let resets = (0..self.batch)
            .flat_map(|b| (start..end).map(move |t| (b, t)))
            .map(|(b, t)| self.reset(b, t))
            .collect();
        SequenceLayout {
            batch: self.batch,
            timesteps: end - start,
            agents: self.agents,
            resets,
        }
    }
}

/// Recurrent state of one sequence: an `S` matrix per head.
#[derive(Clone, Debug, PartialEq)]
pub struct RetentionState {
    head_dim: usize,
    /// `heads` matrices of `head_dim × head_dim`, row-major, concatenated.
    s: Vec<f64>,
    /// Timesteps absorbed so far.
    pub timestep: usize,
}

impl RetentionState {
    pub fn zeros(cfg: &RetentionConfig) -> Self {
        let hd = cfg.head_dim();
        RetentionState {
            head_dim: hd,
            s: vec![0.0; cfg.heads * hd * hd],
            timestep: 0,
        }
    }

    pub fn head(&self, h: usize) -> &[f64] {
        let sz = self.head_dim * self.head_dim;
        &self.s[h * sz..(h + 1) * sz]
    }

    pub(crate) fn head_mut(&mut self, h: usize) -> &mut [f64] {
        let sz = self.head_dim * self.head_dim;
        &mut self.s[h * sz..(h + 1) * sz]
    }

    pub fn matrices(&self) -> &[f64] {
        &self.s
    }

    pub fn max_abs_diff(&self, other: &RetentionState) -> f64 {
        self.s
            .iter()
            .zip(&other.s)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    fn check(&self, cfg: &RetentionConfig) -> Result<()> {
        ensure!(
            self.head_dim == cfg.head_dim() && self.s.len() == cfg.heads * self.head_dim.pow(2),
            "retention state does not match config ({} heads × {})",
            cfg.heads,
            cfg.head_dim()
        );
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.s.iter().all(|v| v.is_finite())
    }
}

/// Incremental evaluation of one timestep, one agent token at a time.
///
/// `begin` decays the carried state (or clears it on reset), `absorb` adds a
/// token's `kᵀv`, and `read` applies a query to everything absorbed so far.
/// Absorbing agent `j` before reading agent `j` reproduces
/// [`WithinStep::AgentCausal`]; absorbing every agent first reproduces
/// [`WithinStep::Full`].
#[derive(Clone, Debug)]
pub struct StepAccumulator<'a> {
    cfg: &'a RetentionConfig,
    partial: RetentionState,
}

impl<'a> StepAccumulator<'a> {
    pub fn begin(cfg: &'a RetentionConfig, state: &RetentionState, reset: bool) -> Result<Self> {
        state.check(cfg)?;
        let mut partial = state.clone();
        if reset {
            partial.s.iter_mut().for_each(|s| *s = 0.0);
        } else {
            for h in 0..cfg.heads {
                let kappa = cfg.decays[h];
                partial.head_mut(h).iter_mut().for_each(|s| *s *= kappa);
            }
        }
        Ok(StepAccumulator { cfg, partial })
    }

    pub fn absorb(&mut self, k: &[f64], v: &[f64]) {
        let hd = self.cfg.head_dim();
        for h in 0..self.cfg.heads {
            let kh = &k[h * hd..(h + 1) * hd];
            let vh = &v[h * hd..(h + 1) * hd];
            let s = self.partial.head_mut(h);
            for (a, &ka) in kh.iter().enumerate() {
                let row = &mut s[a * hd..(a + 1) * hd];
                for (r, &vb) in row.iter_mut().zip(vh) {
                    *r += ka * vb;
                }
            }
        }
    }

    pub fn read(&self, q: &[f64], out: &mut [f64]) {
        let hd = self.cfg.head_dim();
        for h in 0..self.cfg.heads {
            let qh = &q[h * hd..(h + 1) * hd];
            let s = self.partial.head(h);
            let oh = &mut out[h * hd..(h + 1) * hd];
            oh.iter_mut().for_each(|o| *o = 0.0);
            for (a, &qa) in qh.iter().enumerate() {
                let row = &s[a * hd..(a + 1) * hd];
                for (o, &sv) in oh.iter_mut().zip(row) {
                    *o += qa * sv;
                }
            }
        }
    }

    pub fn finish(mut self) -> RetentionState {
        self.partial.timestep += 1;
        self.partial
    }
}
