//! Resolved configurations. Each command writes the one it ran with next to
//! its outputs; feeding that file back through `--config` repeats the run.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use oryx::envs::{EnvSpec, PolicySpec};
use oryx::learner::HyperParams;
use oryx::model::ModelConfig;

use crate::Error;

/// Default update budget; the published runs used 100k.
pub const DEFAULT_UPDATES: u64 = 20_000;
pub const DEFAULT_EVAL_EPISODES: usize = 320;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenDataConfig {
    pub env: EnvSpec,
    pub policy: PolicySpec,
    pub transitions: u64,
    pub seed: u64,
    pub output: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsampleConfig {
    pub input: PathBuf,
    pub output: PathBuf,
    pub transitions: u64,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    /// Constant −1 previous-action input to the decoder.
    NoAutoregressive,
    /// Training sequences of length 2.
    NoMemory,
    /// Critic-only Q-learning; act greedily on Q.
    NoIcq,
}

/// Network sizes; dimensions tied to the environment are filled in from
/// the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSettings {
    pub embed_dim: usize,
    pub ffn_dim: usize,
    pub blocks: usize,
    pub heads: usize,
    pub kappa_scaling: f64,
    pub chunk_size: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let c = ModelConfig::new(1, 2, 1);
        ModelSettings {
            embed_dim: c.embed_dim,
            ffn_dim: c.ffn_dim,
            blocks: c.blocks,
            heads: c.heads,
            kappa_scaling: c.kappa_scaling,
            chunk_size: c.chunk_size,
        }
    }
}

impl ModelSettings {
    pub fn to_config(&self, obs_dim: usize, action_dim: usize, agents: usize, autoregressive: bool) -> ModelConfig {
        ModelConfig {
            obs_dim,
            action_dim,
            agents,
            embed_dim: self.embed_dim,
            ffn_dim: self.ffn_dim,
            blocks: self.blocks,
            heads: self.heads,
            kappa_scaling: self.kappa_scaling,
            chunk_size: self.chunk_size,
            autoregressive,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
    pub updates: u64,
    pub seed: u64,
    pub model: ModelSettings,
    /// Effective values, with any ablation already applied.
    pub hyper: HyperParams,
    pub autoregressive: bool,
    pub ablation: Option<Ablation>,
    /// Updates between evaluation snapshots; 0 disables them.
    pub eval_every: u64,
    pub eval_episodes: usize,
    /// `false` writes 0 in the wall-clock column so curves are reproducible
    /// byte for byte.
    pub timing: bool,
}

impl TrainConfig {
    pub fn new(dataset: PathBuf, out_dir: PathBuf, seed: u64) -> Self {
        TrainConfig {
            dataset,
            out_dir,
            updates: DEFAULT_UPDATES,
            seed,
            model: ModelSettings::default(),
            hyper: HyperParams::default(),
            autoregressive: true,
            ablation: None,
            eval_every: 2_000,
            eval_episodes: 32,
            timing: true,
        }
    }

    /// Applies an ablation to the effective settings.
    pub fn ablate(mut self, ablation: Option<Ablation>) -> Self {
        self.ablation = ablation;
        match ablation {
            Some(Ablation::NoAutoregressive) => self.autoregressive = false,
            Some(Ablation::NoMemory) => self.hyper.seq_len = 2,
            Some(Ablation::NoIcq) => self.hyper.icq = false,
            None => {}
        }
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub checkpoint: PathBuf,
    /// Overrides the environment recorded in the checkpoint.
    pub env: Option<EnvSpec>,
    pub episodes: usize,
    pub seed: u64,
    pub output: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    pub a: Vec<PathBuf>,
    pub b: Vec<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExportConfig {
    pub inputs: Vec<PathBuf>,
    pub output: PathBuf,
}

/// `<output>.config.json` beside a file output.
pub fn sidecar(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".config.json");
    output.with_file_name(name)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Error> {
    let v = serde_json::to_value(value).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })?;
    let mut text = serde_json::to_string_pretty(&oryx::data::container::canonical(v)).expect("values serialise");
    text.push('\n');
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.into(),
            source,
        })?;
    }
    std::fs::write(path, text).map_err(|source| Error::Io {
        path: path.into(),
        source,
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Error> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.into(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })
}
