//! The sequence model: a retention encoder over per-agent observations and
//! a retention decoder that conditions each agent on the actions of the
//! agents before it, with a policy head and a Q head on a shared trunk.
//!
//! Tokens are laid out timestep-major (`t * n + j`). The encoder lets every
//! agent of a timestep see the others; the decoder only lets agent `j` see
//! agents `0..=j`, and its input for agent `j` carries the one-hot action of
//! agent `j - 1` (agent 0 gets a start token). That makes the decoder's
//! output for agent `j` depend on same-timestep actions of earlier agents
//! only, which is the autoregressive factorisation of the joint policy.

mod checkpoint;
mod exec;
mod rows;

pub use checkpoint::Checkpoint;
pub use exec::{ActHead, ActMode, ExecState, StepOutput};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numerics::{ParamSet, ParamVars, Tape, Tensor, Var};
use crate::retention::{RetentionConfig, SequenceLayout, WithinStep};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub agents: usize,
    pub embed_dim: usize,
    /// Hidden width of the feed-forward sublayer.
    pub ffn_dim: usize,
    pub blocks: usize,
    pub heads: usize,
    pub kappa_scaling: f64,
    /// Maximum timesteps per retention chunk during training.
    pub chunk_size: usize,
    /// `false` replaces the previous-action input by a constant `-1` vector.
    pub autoregressive: bool,
}

impl ModelConfig {
    pub fn new(obs_dim: usize, action_dim: usize, agents: usize) -> Self {
        ModelConfig {
            obs_dim,
            action_dim,
            agents,
            embed_dim: 64,
            ffn_dim: 64,
            blocks: 1,
            heads: 1,
            kappa_scaling: 0.5,
            chunk_size: 20,
            autoregressive: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.obs_dim > 0 && self.embed_dim > 0 && self.ffn_dim > 0 && self.agents > 0,
            "model dimensions must be positive"
        );
        ensure!(self.action_dim >= 2, "need at least two actions");
        ensure!(self.blocks >= 1, "need at least one retention block");
        ensure!(
            self.embed_dim % self.heads.max(1) == 0 && self.heads >= 1,
            "embed dim {} not divisible by {} heads",
            self.embed_dim,
            self.heads
        );
        Ok(())
    }
}

/// Network outputs for every `(b, t, j)` token.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutput {
    /// `(B, T, n, A)`.
    pub logits: Tensor,
    /// `(B, T, n, A)`.
    pub q_values: Tensor,
    /// `(B, T, n, D)`.
    pub embeddings: Tensor,
}

/// Tape handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    pub embeddings: Var,
    pub logits: Var,
    pub q_values: Var,
}

/// Previous-agent action inputs of the decoder, `(tokens, A + 1)`.
///
/// Slot `A` is the start token given to agent 0 of every timestep; agent
/// `j > 0` gets the one-hot action of agent `j - 1` at the same timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct ShiftedActions {
    data: Tensor,
}

impl ShiftedActions {
    /// `actions` is `(steps, n)` flattened; `steps` may span several
    /// sequences since the shift never crosses a timestep.
    pub fn new(actions: &[usize], agents: usize, action_dim: usize, autoregressive: bool) -> Result<Self> {
        ensure!(
            agents > 0 && actions.len() % agents == 0,
            "{} actions do not split into {agents} agents",
            actions.len()
        );
        ensure!(
            actions.iter().all(|&a| a < action_dim),
            "action outside 0..{action_dim}"
        );
        let w = action_dim + 1;
        let tokens = actions.len();
        let mut data = Vec::with_capacity(tokens * w);
        for i in 0..tokens {
            let prev = (i % agents != 0).then(|| actions[i - 1]);
            data.extend(Self::input_row(prev, action_dim, autoregressive));
        }
        Ok(ShiftedActions {
            data: Tensor::from_parts(vec![tokens, w], data),
        })
    }

    /// Decoder input for an agent whose predecessor took `prev` (`None` for
    /// the first agent).
    pub fn input_row(prev: Option<usize>, action_dim: usize, autoregressive: bool) -> Vec<f64> {
        if !autoregressive {
            return vec![-1.0; action_dim + 1];
        }
        let mut row = vec![0.0; action_dim + 1];
        row[prev.unwrap_or(action_dim)] = 1.0;
        row
    }

    pub fn tensor(&self) -> &Tensor {
        &self.data
    }

    /// The input row of token `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        let w = self.data.last_dim();
        &self.data.data()[i * w..(i + 1) * w]
    }
}

/// Parameter names, shared by the tape forward pass and the executor.
pub(crate) mod names {
    pub fn block(side: &str, b: usize, leaf: &str) -> String {
        format!("{side}.{b}.{leaf}")
    }
    pub const ENC_IN_W: &str = "enc.in.w";
    pub const ENC_IN_B: &str = "enc.in.b";
    pub const ENC_LN_G: &str = "enc.ln.g";
    pub const ENC_LN_B: &str = "enc.ln.b";
    pub const DEC_IN_WE: &str = "dec.in.we";
    pub const DEC_IN_WA: &str = "dec.in.wa";
    pub const DEC_IN_B: &str = "dec.in.b";
    pub const DEC_LN_G: &str = "dec.ln.g";
    pub const DEC_LN_B: &str = "dec.ln.b";
    pub const PI_W: &str = "head.pi.w";
    pub const PI_B: &str = "head.pi.b";
    pub const Q_W: &str = "head.q.w";
    pub const Q_B: &str = "head.q.b";
}

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    enc_ret: RetentionConfig,
    dec_ret: RetentionConfig,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let ret = |within| {
            RetentionConfig::new(
                config.embed_dim,
                config.heads,
                config.kappa_scaling,
                config.chunk_size,
                within,
            )
        };
        Ok(Model {
            enc_ret: ret(WithinStep::Full)?,
            dec_ret: ret(WithinStep::AgentCausal)?,
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn encoder_retention(&self) -> &RetentionConfig {
        &self.enc_ret
    }

    pub fn decoder_retention(&self) -> &RetentionConfig {
        &self.dec_ret
    }

    /// Fresh parameters: weights uniform in `±1/sqrt(fan_in)`, output heads
    /// ten times smaller, norm gains one, biases zero.
    pub fn init_params<R: Rng>(&self, rng: &mut R) -> Result<ParamSet> {
        let c = &self.config;
        let (d, f, a) = (c.embed_dim, c.ffn_dim, c.action_dim);
        let mut p = ParamSet::new();
        let zeros = |n| Tensor::zeros(&[n]);
        let ones = |n| Tensor::full(&[n], 1.0);
        p.insert_uniform(names::ENC_IN_W, c.obs_dim, d, 1.0, rng)?;
        p.insert(names::ENC_IN_B, zeros(d))?;
        for side in ["enc", "dec"] {
            if side == "dec" {
                p.insert_uniform(names::DEC_IN_WE, d, d, 1.0, rng)?;
                p.insert_uniform(names::DEC_IN_WA, a + 1, d, 1.0, rng)?;
                p.insert(names::DEC_IN_B, zeros(d))?;
            }
            for b in 0..c.blocks {
                let n = |leaf: &str| names::block(side, b, leaf);
                p.insert(n("ln1.g"), ones(d))?;
                p.insert(n("ln1.b"), zeros(d))?;
                for w in ["wq", "wk", "wv"] {
                    p.insert_uniform(&n(w), d, d, 1.0, rng)?;
                }
                p.insert(n("gn.g"), ones(d))?;
                p.insert_uniform(&n("wo"), d, d, 1.0, rng)?;
                p.insert(n("ln2.g"), ones(d))?;
                p.insert(n("ln2.b"), zeros(d))?;
                p.insert_uniform(&n("ff1.w"), d, f, 1.0, rng)?;
                p.insert(n("ff1.b"), zeros(f))?;
                p.insert_uniform(&n("ff2.w"), f, d, 1.0, rng)?;
                p.insert(n("ff2.b"), zeros(d))?;
            }
            let (g, bias) = if side == "enc" {
                (names::ENC_LN_G, names::ENC_LN_B)
            } else {
                (names::DEC_LN_G, names::DEC_LN_B)
            };
            p.insert(g, ones(d))?;
            p.insert(bias, zeros(d))?;
        }
        p.insert_uniform(names::PI_W, d, a, 0.1, rng)?;
        p.insert(names::PI_B, zeros(a))?;
        p.insert_uniform(names::Q_W, d, a, 0.1, rng)?;
        p.insert(names::Q_B, zeros(a))?;
        Ok(p)
    }

    fn check_obs(&self, obs: &Tensor, layout: &SequenceLayout) -> Result<()> {
        let c = &self.config;
        ensure!(
            obs.shape() == [layout.batch, layout.timesteps, layout.agents, c.obs_dim],
            "observations {:?} do not match layout ({}, {}, {}) × {}",
            obs.shape(),
            layout.batch,
            layout.timesteps,
            layout.agents,
            c.obs_dim
        );
        Ok(())
    }

    fn block(
        &self,
        tape: &mut Tape,
        pv: &ParamVars,
        side: &str,
        b: usize,
        x: Var,
        cfg: &RetentionConfig,
        layout: &SequenceLayout,
    ) -> Result<Var> {
        let d = self.config.embed_dim;
        let p = |leaf: &str| pv.get(&names::block(side, b, leaf));
        let z = tape.layer_norm(x, p("ln1.g")?, Some(p("ln1.b")?), d)?;
        let q = tape.linear(z, p("wq")?, None)?;
        let q = tape.scale(q, 1.0 / (cfg.head_dim() as f64).sqrt());
        let k = tape.linear(z, p("wk")?, None)?;
        let v = tape.linear(z, p("wv")?, None)?;
        let r = tape.retention(q, k, v, cfg, layout)?;
        let g = tape.layer_norm(r, p("gn.g")?, None, cfg.head_dim())?;
        let o = tape.linear(g, p("wo")?, None)?;
        let h = tape.add(x, o)?;
        let z = tape.layer_norm(h, p("ln2.g")?, Some(p("ln2.b")?), d)?;
        let f = tape.linear(z, p("ff1.w")?, Some(p("ff1.b")?))?;
        let f = tape.silu(f);
        let f = tape.linear(f, p("ff2.w")?, Some(p("ff2.b")?))?;
        tape.add(h, f)
    }

    /// Encoder on the tape; `obs` is `(B, T, n, obs_dim)`. Returns
    /// `(B, T·n, D)` embeddings.
    pub fn encode_tape(&self, tape: &mut Tape, pv: &ParamVars, obs: &Tensor, layout: &SequenceLayout) -> Result<Var> {
        self.check_obs(obs, layout)?;
        let c = &self.config;
        let x = tape.constant(obs.clone().reshape(&[layout.batch, layout.tokens(), c.obs_dim])?);
        let x = tape.linear(x, pv.get(names::ENC_IN_W)?, Some(pv.get(names::ENC_IN_B)?))?;
        let mut x = tape.silu(x);
        for b in 0..c.blocks {
            x = self.block(tape, pv, "enc", b, x, &self.enc_ret, layout)?;
        }
        let e = tape.layer_norm(x, pv.get(names::ENC_LN_G)?, Some(pv.get(names::ENC_LN_B)?), c.embed_dim)?;
        tape.set_name(e, "encoder_out");
        Ok(e)
    }

    /// Decoder on the tape. Returns `(logits, q_values)`, each
    /// `(B, T·n, A)`.
    pub fn decode_tape(
        &self,
        tape: &mut Tape,
        pv: &ParamVars,
        embeddings: Var,
        shifted: &ShiftedActions,
        layout: &SequenceLayout,
    ) -> Result<(Var, Var)> {
        let c = &self.config;
        ensure!(
            shifted.tensor().rows() == layout.batch * layout.tokens()
                && shifted.tensor().last_dim() == c.action_dim + 1,
            "shifted actions {:?} do not match {} tokens",
            shifted.tensor().shape(),
            layout.batch * layout.tokens()
        );
        ensure!(
            tape.value(embeddings).rows() == layout.batch * layout.tokens(),
            "embeddings do not match layout"
        );
        let s = tape.constant(shifted.tensor().clone().reshape(&[layout.batch, layout.tokens(), c.action_dim + 1])?);
        let a = tape.linear(s, pv.get(names::DEC_IN_WA)?, Some(pv.get(names::DEC_IN_B)?))?;
        let e = tape.linear(embeddings, pv.get(names::DEC_IN_WE)?, None)?;
        let x = tape.add(e, a)?;
        let mut x = tape.silu(x);
        for b in 0..c.blocks {
            x = self.block(tape, pv, "dec", b, x, &self.dec_ret, layout)?;
        }
        let h = tape.layer_norm(x, pv.get(names::DEC_LN_G)?, Some(pv.get(names::DEC_LN_B)?), c.embed_dim)?;
        let logits = tape.linear(h, pv.get(names::PI_W)?, Some(pv.get(names::PI_B)?))?;
        let q = tape.linear(h, pv.get(names::Q_W)?, Some(pv.get(names::Q_B)?))?;
        tape.set_name(logits, "policy_logits");
        tape.set_name(q, "q_values");
        Ok((logits, q))
    }

    /// Encoder and decoder on the tape with teacher-forced `actions`
    /// (`B·T·n`, timestep-major per sequence).
    pub fn forward_tape(
        &self,
        tape: &mut Tape,
        pv: &ParamVars,
        obs: &Tensor,
        actions: &[usize],
        layout: &SequenceLayout,
    ) -> Result<ForwardVars> {
        let c = &self.config;
        let shifted = ShiftedActions::new(actions, layout.agents, c.action_dim, c.autoregressive)?;
        let embeddings = self.encode_tape(tape, pv, obs, layout)?;
        let (logits, q_values) = self.decode_tape(tape, pv, embeddings, &shifted, layout)?;
        Ok(ForwardVars {
            embeddings,
            logits,
            q_values,
        })
    }

    /// Embeddings `(B, T, n, D)` without recording gradients.
    pub fn encode(&self, params: &ParamSet, obs: &Tensor, layout: &SequenceLayout) -> Result<Tensor> {
        let mut tape = Tape::new();
        let pv = tape.params(params);
        let e = self.encode_tape(&mut tape, &pv, obs, layout)?;
        tape.check_finite()?;
        tape.value(e).clone().reshape(&self.token_shape(layout, self.config.embed_dim))
    }

    /// Decoder outputs from given embeddings `(B, T, n, D)`.
    pub fn decode(
        &self,
        params: &ParamSet,
        embeddings: &Tensor,
        shifted: &ShiftedActions,
        layout: &SequenceLayout,
    ) -> Result<ModelOutput> {
        let d = self.config.embed_dim;
        ensure!(
            embeddings.shape() == self.token_shape(layout, d).as_slice(),
            "embeddings {:?} do not match layout",
            embeddings.shape()
        );
        let mut tape = Tape::new();
        let pv = tape.params(params);
        let e = tape.constant(embeddings.clone().reshape(&[layout.batch, layout.tokens(), d])?);
        let (l, q) = self.decode_tape(&mut tape, &pv, e, shifted, layout)?;
        tape.check_finite()?;
        let a = self.config.action_dim;
        Ok(ModelOutput {
            logits: tape.value(l).clone().reshape(&self.token_shape(layout, a))?,
            q_values: tape.value(q).clone().reshape(&self.token_shape(layout, a))?,
            embeddings: embeddings.clone(),
        })
    }

    /// Full teacher-forced forward pass without gradients.
    pub fn forward(&self, params: &ParamSet, obs: &Tensor, actions: &[usize], layout: &SequenceLayout) -> Result<ModelOutput> {
        let mut tape = Tape::new();
        let pv = tape.params(params);
        let v = self.forward_tape(&mut tape, &pv, obs, actions, layout)?;
        tape.check_finite()?;
        let (a, d) = (self.config.action_dim, self.config.embed_dim);
        Ok(ModelOutput {
            logits: tape.value(v.logits).clone().reshape(&self.token_shape(layout, a))?,
            q_values: tape.value(v.q_values).clone().reshape(&self.token_shape(layout, a))?,
            embeddings: tape.value(v.embeddings).clone().reshape(&self.token_shape(layout, d))?,
        })
    }

    /// Forward pass on agents reordered by `perm` (new agent `j` is old
    /// agent `perm[j]`), with outputs mapped back to the original order.
    pub fn forward_permuted(
        &self,
        params: &ParamSet,
        obs: &Tensor,
        actions: &[usize],
        layout: &SequenceLayout,
        perm: &[usize],
    ) -> Result<ModelOutput> {
        let n = layout.agents;
        let mut sorted = perm.to_vec();
        sorted.sort_unstable();
        ensure!(sorted == (0..n).collect::<Vec<_>>(), "{perm:?} is not a permutation");
        let od = self.config.obs_dim;
        let steps = layout.batch * layout.timesteps;
        let mut pobs = vec![0.0; obs.numel()];
        let mut pact = vec![0; actions.len()];
        for s in 0..steps {
            for (j, &src) in perm.iter().enumerate() {
                pobs[(s * n + j) * od..(s * n + j + 1) * od]
                    .copy_from_slice(&obs.data()[(s * n + src) * od..(s * n + src + 1) * od]);
                pact[s * n + j] = actions[s * n + src];
            }
        }
        let out = self.forward(params, &Tensor::new(obs.shape(), pobs)?, &pact, layout)?;
        let unpermute = |t: &Tensor| -> Result<Tensor> {
            let w = t.last_dim();
            let mut data = vec![0.0; t.numel()];
            for s in 0..steps {
                for (j, &dst) in perm.iter().enumerate() {
                    data[(s * n + dst) * w..(s * n + dst + 1) * w]
                        .copy_from_slice(&t.data()[(s * n + j) * w..(s * n + j + 1) * w]);
                }
            }
            Tensor::new(t.shape(), data)
        };
        Ok(ModelOutput {
            logits: unpermute(&out.logits)?,
            q_values: unpermute(&out.q_values)?,
            embeddings: unpermute(&out.embeddings)?,
        })
    }

    fn token_shape(&self, layout: &SequenceLayout, width: usize) -> Vec<usize> {
        vec![layout.batch, layout.timesteps, layout.agents, width]
    }
}
