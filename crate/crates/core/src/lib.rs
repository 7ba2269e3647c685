//! Offline multi-agent reinforcement learning with a retention-based
//! sequence model and sequential implicit-constraint Q-learning.
//!
//! The crate is organised bottom-up:
//!
//! * [`numerics`]: tensors, reverse-mode differentiation, Adam.
//! * [`retention`]: decaying linear attention in parallel, recurrent and
//!   chunkwise form.
//! * [`model`]: observation encoder and autoregressive dual-head decoder.
//! * [`learner`]: critic targets, counterfactual advantages, the weighted
//!   policy regression, and the update step.
//! * [`envs`]: the two-phase T-Maze, a 2×2 matrix game, scripted policies.
//! * [`data`]: episodes, datasets, the on-disk format, batch sampling.

pub mod data;
pub mod envs;
pub mod error;
pub mod learner;
pub mod model;
pub mod numerics;
pub mod retention;

pub use error::{OryxError, Result};
