//! Offline datasets: recording, persistence, subsampling, statistics and
//! sequence-batch sampling.

pub mod container;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::envs::{EnvMeta, Environment, JointPolicy, PolicySpec};
use crate::error::{ensure, OryxError, Result};
use container::{put_f64s, Reader};

pub const HISTOGRAM_BINS: usize = 20;

/// One trajectory. Every stored episode ends in a terminal step.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    agents: usize,
    obs_dim: usize,
    /// `(len, agents, obs_dim)` row-major.
    observations: Vec<f64>,
    /// `(len, agents)`.
    actions: Vec<u32>,
    rewards: Vec<f64>,
}

impl Episode {
    pub fn new(
        agents: usize,
        obs_dim: usize,
        observations: Vec<f64>,
        actions: Vec<u32>,
        rewards: Vec<f64>,
    ) -> Result<Self> {
        let len = rewards.len();
        ensure!(len >= 1, "episodes need at least one step");
        ensure!(
            observations.len() == len * agents * obs_dim && actions.len() == len * agents,
            "episode arrays disagree: {len} steps, {} observations, {} actions for {agents} agents × {obs_dim}",
            observations.len(),
            actions.len()
        );
        ensure!(
            rewards.iter().chain(&observations).all(|v| v.is_finite()),
            "episode contains non-finite values"
        );
        Ok(Episode {
            agents,
            obs_dim,
            observations,
            actions,
            rewards,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    /// `(agents, obs_dim)` block of step `t`.
    pub fn observation(&self, t: usize) -> &[f64] {
        let w = self.agents * self.obs_dim;
        &self.observations[t * w..(t + 1) * w]
    }

    pub fn actions(&self, t: usize) -> &[u32] {
        &self.actions[t * self.agents..(t + 1) * self.agents]
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn episode_return(&self) -> f64 {
        self.rewards.iter().sum()
    }
}

/// Where a subsampled dataset came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsampleInfo {
    pub source_transitions: u64,
    pub target_transitions: u64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub env: EnvMeta,
    pub agents: usize,
    pub transitions: u64,
    pub episodes: u64,
    pub seed: u64,
    pub generator: PolicySpec,
    pub format_version: u16,
    /// Training windows may start mid-episode from a zero retention state,
    /// i.e. with truncated history.
    pub windows_truncate_history: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subsample: Option<SubsampleInfo>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub meta: DatasetMeta,
    episodes: Vec<Episode>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub episodes: u64,
    pub transitions: u64,
    pub mean_return: f64,
    pub max_return: f64,
    pub min_return: f64,
    /// Counts over 20 equal bins spanning `[min_return, max_return]`.
    pub histogram: Vec<u64>,
}

impl Dataset {
    pub fn new(mut meta: DatasetMeta, episodes: Vec<Episode>) -> Result<Self> {
        for e in &episodes {
            ensure!(
                e.agents == meta.agents && e.obs_dim == meta.env.obs_dim,
                "episode shape ({}, {}) does not match metadata ({}, {})",
                e.agents,
                e.obs_dim,
                meta.agents,
                meta.env.obs_dim
            );
            ensure!(
                e.actions.iter().all(|&a| (a as usize) < meta.env.action_dim),
                "episode action outside 0..{}",
                meta.env.action_dim
            );
        }
        meta.episodes = episodes.len() as u64;
        meta.transitions = episodes.iter().map(|e| e.len() as u64).sum();
        Ok(Dataset { meta, episodes })
    }

    pub fn episodes(&self) -> &[Episode] {
        &self.episodes
    }

    pub fn transitions(&self) -> u64 {
        self.meta.transitions
    }

    pub fn stats(&self) -> Result<DatasetStats> {
        stats(self)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_value(&self.meta).map_err(|e| OryxError::Header(e.to_string()))?;
        let mut payload = Vec::new();
        for e in &self.episodes {
            payload.extend_from_slice(&(e.len() as u32).to_le_bytes());
            put_f64s(&mut payload, &e.observations);
            for a in &e.actions {
                payload.extend_from_slice(&a.to_le_bytes());
            }
            put_f64s(&mut payload, &e.rewards);
        }
        container::encode("dataset", header, &payload)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let (header, payload) = container::decode(bytes, path, "dataset")?;
        let meta: DatasetMeta = serde_json::from_value(Value::Object(header))
            .map_err(|e| OryxError::Header(e.to_string()))?;
        if meta.format_version != container::FORMAT_VERSION {
            return Err(OryxError::Version {
                found: meta.format_version,
                expected: container::FORMAT_VERSION,
            });
        }
        let (n, d) = (meta.agents, meta.env.obs_dim);
        let mut r = Reader::new(&payload);
        let mut episodes = Vec::with_capacity(meta.episodes as usize);
        for _ in 0..meta.episodes {
            let len = r.u32()? as usize;
            let obs = r.f64s(len * n * d)?;
            let actions = r.u32s(len * n)?;
            let rewards = r.f64s(len)?;
            episodes.push(Episode::new(n, d, obs, actions, rewards)?);
        }
        if !r.finished() {
            return Err(OryxError::Header("payload longer than the header declares".into()));
        }
        let declared = (meta.episodes, meta.transitions);
        let ds = Dataset::new(meta, episodes)?;
        if (ds.meta.episodes, ds.meta.transitions) != declared {
            return Err(OryxError::Header("episode or transition count mismatch".into()));
        }
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        container::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&container::read_file(path)?, path)
    }
}

/// Rolls `policy` in `env` and keeps whole episodes until at least
/// `target_transitions` steps are stored.
pub fn record(
    env: &mut dyn Environment,
    policy: &mut dyn JointPolicy,
    target_transitions: u64,
    seed: u64,
) -> Result<Dataset> {
    ensure!(target_transitions >= 1, "target must be at least one transition");
    let meta_env = env.meta();
    let (n, d) = (meta_env.agents, meta_env.obs_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut episodes = Vec::new();
    let mut total = 0u64;
    while total < target_transitions {
        let mut obs = env.reset(&mut rng);
        policy.begin_episode();
        let (mut o, mut a, mut r) = (Vec::new(), Vec::new(), Vec::new());
        loop {
            ensure!(
                obs.shape() == [n, d],
                "environment produced observations {:?}, metadata says ({n}, {d})",
                obs.shape()
            );
            let joint = policy.act(&obs, env.legal_actions(), &mut rng)?;
            ensure!(joint.len() == n, "policy returned {} actions for {n} agents", joint.len());
            let step = env.step(&joint)?;
            o.extend_from_slice(obs.data());
            a.extend(joint.iter().map(|&x| x as u32));
            r.push(step.reward);
            obs = step.observations;
            if step.terminal {
                break;
            }
        }
        total += r.len() as u64;
        episodes.push(Episode::new(n, d, o, a, r)?);
    }
    Dataset::new(
        DatasetMeta {
            agents: n,
            env: meta_env,
            transitions: 0,
            episodes: 0,
            seed,
            generator: policy.spec(),
            format_version: container::FORMAT_VERSION,
            windows_truncate_history: true,
            subsample: None,
        },
        episodes,
    )
}

/// Shuffles episodes with `seed` and keeps them whole, in shuffled order,
/// until the kept transitions reach `target_transitions` (the crossing
/// episode is included).
pub fn subsample_uniform(dataset: &Dataset, target_transitions: u64, seed: u64) -> Result<Dataset> {
    ensure!(
        target_transitions <= dataset.transitions(),
        "target of {target_transitions} exceeds the {} available transitions",
        dataset.transitions()
    );
    let mut order: Vec<usize> = (0..dataset.episodes.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut kept = Vec::new();
    let mut total = 0u64;
    for i in order {
        if total >= target_transitions && !kept.is_empty() {
            break;
        }
        total += dataset.episodes[i].len() as u64;
        kept.push(dataset.episodes[i].clone());
    }
    let mut meta = dataset.meta.clone();
    meta.subsample = Some(SubsampleInfo {
        source_transitions: dataset.transitions(),
        target_transitions,
        seed,
    });
    Dataset::new(meta, kept)
}

pub fn stats(dataset: &Dataset) -> Result<DatasetStats> {
    ensure!(!dataset.episodes.is_empty(), "statistics of an empty dataset");
    let mut returns: Vec<f64> = dataset.episodes.iter().map(Episode::episode_return).collect();
    // Sorting first makes the sum independent of episode order.
    returns.sort_by(f64::total_cmp);
    let (min, max) = (returns[0], returns[returns.len() - 1]);
    let mean = returns.iter().sum::<f64>() / returns.len() as f64;
    let mut histogram = vec![0u64; HISTOGRAM_BINS];
    let span = max - min;
    for r in &returns {
        let bin = if span > 0.0 {
            (((r - min) / span) * HISTOGRAM_BINS as f64).floor() as usize
        } else {
            0
        };
        histogram[bin.min(HISTOGRAM_BINS - 1)] += 1;
    }
    Ok(DatasetStats {
        episodes: returns.len() as u64,
        transitions: dataset.transitions(),
        // Summation order can push the mean a hair outside [min, max].
        mean_return: mean.clamp(min, max),
        max_return: max,
        min_return: min,
        histogram,
    })
}

/// `B` windows of `L` consecutive timesteps, stored timestep-major per
/// window: index `b * L + p` for per-step fields and `(b * L + p) * n + j`
/// for per-agent fields.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    pub batch: usize,
    pub len: usize,
    pub agents: usize,
    pub obs_dim: usize,
    pub observations: Vec<f64>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    /// Last step of its episode.
    pub terminals: Vec<bool>,
    /// First real step of the window; retention restarts from zero here.
    pub starts: Vec<bool>,
    /// `false` for front padding.
    pub mask: Vec<bool>,
}

impl SequenceBatch {
    pub fn steps(&self) -> usize {
        self.batch * self.len
    }

    /// Checks lengths and the window invariants.
    pub fn validate(&self) -> Result<()> {
        let s = self.steps();
        ensure!(
            self.observations.len() == s * self.agents * self.obs_dim
                && self.actions.len() == s * self.agents
                && self.rewards.len() == s
                && self.terminals.len() == s
                && self.starts.len() == s
                && self.mask.len() == s,
            "sequence batch arrays do not match ({}, {}, {})",
            self.batch,
            self.len,
            self.agents
        );
        for b in 0..self.batch {
            let row = b * self.len..(b + 1) * self.len;
            let first = self.mask[row.clone()].iter().position(|&m| m);
            ensure!(first.is_some(), "window {b} has no real steps");
            let first = first.unwrap();
            ensure!(
                self.mask[row.clone()][first..].iter().all(|&m| m),
                "window {b} has padding after real steps"
            );
            for p in 0..self.len {
                let i = b * self.len + p;
                ensure!(self.starts[i] == (p == first), "window {b}: start flag at {p}");
                ensure!(
                    !self.terminals[i] || p == self.len - 1,
                    "window {b} continues past a terminal at {p}"
                );
            }
        }
        Ok(())
    }

    /// Drops leading timesteps that are padding in every window.
    pub fn trim_leading_padding(&self) -> SequenceBatch {
        let skip = (0..self.len)
            .take_while(|&p| (0..self.batch).all(|b| !self.mask[b * self.len + p]))
            .count();
        if skip == 0 {
            return self.clone();
        }
        let len = self.len - skip;
        let (n, d) = (self.agents, self.obs_dim);
        let mut out = SequenceBatch {
            batch: self.batch,
            len,
            agents: n,
            obs_dim: d,
            observations: Vec::with_capacity(self.batch * len * n * d),
            actions: Vec::with_capacity(self.batch * len * n),
            rewards: Vec::new(),
            terminals: Vec::new(),
            starts: Vec::new(),
            mask: Vec::new(),
        };
        for b in 0..self.batch {
            let lo = b * self.len + skip;
            let hi = (b + 1) * self.len;
            out.observations.extend_from_slice(&self.observations[lo * n * d..hi * n * d]);
            out.actions.extend_from_slice(&self.actions[lo * n..hi * n]);
            out.rewards.extend_from_slice(&self.rewards[lo..hi]);
            out.terminals.extend_from_slice(&self.terminals[lo..hi]);
            out.starts.extend_from_slice(&self.starts[lo..hi]);
            out.mask.extend_from_slice(&self.mask[lo..hi]);
        }
        out
    }

    /// Reorders the agent axis: new agent `j` is old agent `perm[j]`.
    pub fn permute_agents(&self, perm: &[usize]) -> Result<SequenceBatch> {
        let n = self.agents;
        let mut check = perm.to_vec();
        check.sort_unstable();
        ensure!(check == (0..n).collect::<Vec<_>>(), "{perm:?} is not a permutation of {n} agents");
        let d = self.obs_dim;
        let mut out = self.clone();
        for s in 0..self.steps() {
            for (j, &src) in perm.iter().enumerate() {
                out.actions[s * n + j] = self.actions[s * n + src];
                out.observations[(s * n + j) * d..(s * n + j + 1) * d]
                    .copy_from_slice(&self.observations[(s * n + src) * d..(s * n + src + 1) * d]);
            }
        }
        Ok(out)
    }
}

/// Samples `batch` windows of `len` steps.
///
/// Each window ends at a transition drawn uniformly from the whole dataset
/// and reaches back at most `len` steps without leaving its episode; short
/// windows are front-padded. Every transition is therefore equally likely to
/// be the newest step of a window.
pub fn sample_batch(dataset: &Dataset, batch: usize, len: usize, rng: &mut ChaCha8Rng) -> Result<SequenceBatch> {
    ensure!(!dataset.episodes.is_empty(), "cannot sample from an empty dataset");
    ensure!(batch >= 1 && len >= 1, "batch and window length must be positive");
    let n = dataset.meta.agents;
    let d = dataset.meta.env.obs_dim;
    let mut ends = Vec::with_capacity(dataset.episodes.len());
    let mut acc = 0usize;
    for e in &dataset.episodes {
        acc += e.len();
        ends.push(acc);
    }
    let total = acc;
    let steps = batch * len;
    let mut out = SequenceBatch {
        batch,
        len,
        agents: n,
        obs_dim: d,
        observations: vec![0.0; steps * n * d],
        actions: vec![0; steps * n],
        rewards: vec![0.0; steps],
        terminals: vec![false; steps],
        starts: vec![false; steps],
        mask: vec![false; steps],
    };
    for b in 0..batch {
        let g = rng.gen_range(0..total);
        let ep = ends.partition_point(|&end| end <= g);
        let offset = g - (ends[ep] - dataset.episodes[ep].len());
        let episode = &dataset.episodes[ep];
        let real = (offset + 1).min(len);
        let first_t = offset + 1 - real;
        let pad = len - real;
        for k in 0..real {
            let t = first_t + k;
            let i = b * len + pad + k;
            out.observations[i * n * d..(i + 1) * n * d].copy_from_slice(episode.observation(t));
            for (j, &a) in episode.actions(t).iter().enumerate() {
                out.actions[i * n + j] = a as usize;
            }
            out.rewards[i] = episode.rewards[t];
            out.terminals[i] = t + 1 == episode.len();
            out.mask[i] = true;
            out.starts[i] = k == 0;
        }
    }
    Ok(out)
}
