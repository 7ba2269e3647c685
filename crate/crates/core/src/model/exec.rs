//! Recurrent execution: one environment step at a time, carrying a
//! retention state per block, choosing agents' actions in order.

use rand::Rng;

use crate::error::{ensure, Result};
use crate::numerics::{log_softmax_in_place, ParamSet, Tensor};
use crate::retention::{RetentionState, StepAccumulator};

use super::rows::{self, add, linear, norm, silu_in_place, BlockRows};
use super::{names, Model, ShiftedActions};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActMode {
    /// Highest-scoring legal action, lowest index on ties.
    Greedy,
    /// Draw from the softmax over legal actions.
    Sample,
}

/// Which output the actions are chosen from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActHead {
    Policy,
    QValues,
}

/// Carried retention states of every encoder and decoder block.
#[derive(Clone, Debug, PartialEq)]
pub struct ExecState {
    enc: Vec<RetentionState>,
    dec: Vec<RetentionState>,
    timestep: usize,
}

impl ExecState {
    pub fn timestep(&self) -> usize {
        self.timestep
    }

    pub fn encoder_states(&self) -> &[RetentionState] {
        &self.enc
    }

    pub fn decoder_states(&self) -> &[RetentionState] {
        &self.dec
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub actions: Vec<usize>,
    /// `(n, A)`.
    pub logits: Tensor,
    /// `(n, A)`.
    pub q_values: Tensor,
}

impl Model {
    /// State for the first step of an episode.
    pub fn begin_episode(&self) -> ExecState {
        let blocks = self.config.blocks;
        ExecState {
            enc: vec![RetentionState::zeros(&self.enc_ret); blocks],
            dec: vec![RetentionState::zeros(&self.dec_ret); blocks],
            timestep: 0,
        }
    }

    /// Chooses a joint action for one timestep. `obs` is `(n, obs_dim)`;
    /// only actions `0..legal` are eligible.
    #[allow(clippy::too_many_arguments)]
    pub fn act<R: Rng>(
        &self,
        params: &ParamSet,
        state: &mut ExecState,
        obs: &Tensor,
        legal: usize,
        mode: ActMode,
        head: ActHead,
        rng: &mut R,
    ) -> Result<StepOutput> {
        let a = self.config.action_dim;
        ensure!(
            (1..=a).contains(&legal),
            "{legal} legal actions for an action space of {a}"
        );
        self.step(params, state, obs, |_, logits, q| {
            let scores = match head {
                ActHead::Policy => logits,
                ActHead::QValues => q,
            };
            let scores = &scores[..legal];
            Ok(match mode {
                ActMode::Greedy => argmax(scores),
                ActMode::Sample => sample(scores, rng),
            })
        })
    }

    /// Runs one timestep with the given joint action fed to the decoder, as
    /// during training.
    pub fn step_teacher_forced(
        &self,
        params: &ParamSet,
        state: &mut ExecState,
        obs: &Tensor,
        actions: &[usize],
    ) -> Result<StepOutput> {
        ensure!(
            actions.len() == self.config.agents,
            "{} actions for {} agents",
            actions.len(),
            self.config.agents
        );
        ensure!(
            actions.iter().all(|&x| x < self.config.action_dim),
            "action out of range"
        );
        self.step(params, state, obs, |j, _, _| Ok(actions[j]))
    }

    fn step(
        &self,
        params: &ParamSet,
        state: &mut ExecState,
        obs: &Tensor,
        mut choose: impl FnMut(usize, &[f64], &[f64]) -> Result<usize>,
    ) -> Result<StepOutput> {
        let c = &self.config;
        let (n, a) = (c.agents, c.action_dim);
        ensure!(
            obs.shape() == [n, c.obs_dim],
            "observation {:?} for ({n}, {})",
            obs.shape(),
            c.obs_dim
        );
        ensure!(obs.is_finite(), "non-finite observation");
        let reset = state.timestep == 0;
        let hd = self.enc_ret.head_dim();

        // Encoder: every agent's key enters before any agent reads.
        let w_in = rows::tensor(params, names::ENC_IN_W)?;
        let b_in = rows::tensor(params, names::ENC_IN_B)?;
        let mut xs: Vec<Vec<f64>> = (0..n)
            .map(|j| {
                let mut x = linear(&obs.data()[j * c.obs_dim..(j + 1) * c.obs_dim], w_in, Some(b_in));
                silu_in_place(&mut x);
                x
            })
            .collect();
        let mut next_enc = Vec::with_capacity(c.blocks);
        for (b, carried) in state.enc.iter().enumerate() {
            let blk = BlockRows::load(params, "enc", b, hd)?;
            let proj: Vec<_> = xs.iter().map(|x| blk.qkv(x)).collect();
            let mut acc = StepAccumulator::begin(&self.enc_ret, carried, reset)?;
            for p in &proj {
                acc.absorb(&p.k, &p.v);
            }
            let mut r = vec![0.0; c.embed_dim];
            for (x, p) in xs.iter_mut().zip(&proj) {
                acc.read(&p.q, &mut r);
                *x = blk.finish(x, &r);
            }
            next_enc.push(acc.finish());
        }
        let (g, bias) = (rows::tensor(params, names::ENC_LN_G)?, rows::tensor(params, names::ENC_LN_B)?);
        let emb: Vec<Vec<f64>> = xs.iter().map(|x| norm(x, g, Some(bias), c.embed_dim)).collect();

        // Decoder: agent by agent, each block absorbing before it reads.
        let we = rows::tensor(params, names::DEC_IN_WE)?;
        let wa = rows::tensor(params, names::DEC_IN_WA)?;
        let ba = rows::tensor(params, names::DEC_IN_B)?;
        let (dg, db) = (rows::tensor(params, names::DEC_LN_G)?, rows::tensor(params, names::DEC_LN_B)?);
        let (pw, pb) = (rows::tensor(params, names::PI_W)?, rows::tensor(params, names::PI_B)?);
        let (qw, qb) = (rows::tensor(params, names::Q_W)?, rows::tensor(params, names::Q_B)?);
        let blocks = (0..c.blocks)
            .map(|b| BlockRows::load(params, "dec", b, hd))
            .collect::<Result<Vec<_>>>()?;
        let mut accs = state
            .dec
            .iter()
            .map(|s| StepAccumulator::begin(&self.dec_ret, s, reset))
            .collect::<Result<Vec<_>>>()?;
        let mut actions = Vec::with_capacity(n);
        let mut logits = Vec::with_capacity(n * a);
        let mut qs = Vec::with_capacity(n * a);
        let mut r = vec![0.0; c.embed_dim];
        for j in 0..n {
            let prev = j.checked_sub(1).map(|i| actions[i]);
            let shifted = ShiftedActions::input_row(prev, a, c.autoregressive);
            let mut x = add(&linear(&emb[j], we, None), &linear(&shifted, wa, Some(ba)));
            silu_in_place(&mut x);
            for (blk, acc) in blocks.iter().zip(accs.iter_mut()) {
                let p = blk.qkv(&x);
                acc.absorb(&p.k, &p.v);
                acc.read(&p.q, &mut r);
                x = blk.finish(&x, &r);
            }
            let h = norm(&x, dg, Some(db), c.embed_dim);
            let l = linear(&h, pw, Some(pb));
            let q = linear(&h, qw, Some(qb));
            let chosen = choose(j, &l, &q)?;
            ensure!(chosen < a, "chosen action {chosen} out of range");
            actions.push(chosen);
            logits.extend(l);
            qs.extend(q);
        }
        let logits = Tensor::new(&[n, a], logits)?;
        let q_values = Tensor::new(&[n, a], qs)?;
        logits.ensure_finite("policy_logits")?;
        q_values.ensure_finite("q_values")?;
        state.enc = next_enc;
        state.dec = accs.into_iter().map(StepAccumulator::finish).collect();
        state.timestep += 1;
        Ok(StepOutput {
            actions,
            logits,
            q_values,
        })
    }
}

fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

fn sample<R: Rng>(scores: &[f64], rng: &mut R) -> usize {
    let mut lp = scores.to_vec();
    log_softmax_in_place(&mut lp);
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    for (i, l) in lp.iter().enumerate() {
        cum += l.exp();
        if u < cum {
            return i;
        }
    }
    lp.len() - 1
}
