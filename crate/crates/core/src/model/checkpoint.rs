//! Model parameters on disk, in the same checksummed container as datasets.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::data::container::{self, put_f64s, Reader};
use crate::error::{OryxError, Result};
use crate::numerics::{ParamSet, Tensor};

use super::{Model, ModelConfig};

const KIND: &str = "params";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ParamSet,
    /// Free-form metadata (training configuration, update count).
    pub meta: Value,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

impl Checkpoint {
    /// Checks that `params` has exactly the layout `config` implies.
    pub fn new(config: ModelConfig, params: ParamSet, meta: Value) -> Result<Self> {
        let model = Model::new(config.clone())?;
        let reference = model.init_params(&mut ChaCha8Rng::seed_from_u64(0))?;
        if !reference.same_layout(&params) {
            return Err(OryxError::Contract(
                "parameters do not match the model configuration".into(),
            ));
        }
        params
            .iter()
            .try_for_each(|(name, t)| t.ensure_finite(name))?;
        Ok(Checkpoint { config, params, meta })
    }

    pub fn model(&self) -> Result<Model> {
        Model::new(self.config.clone())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let entries: Vec<Entry> = self
            .params
            .iter()
            .map(|(name, t)| Entry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect();
        let mut payload = Vec::with_capacity(self.params.num_scalars() * 8);
        for (_, t) in self.params.iter() {
            put_f64s(&mut payload, t.data());
        }
        let header = json!({
            "config": self.config,
            "tensors": entries,
            "meta": self.meta,
        });
        container::encode(KIND, header, &payload)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let (mut header, payload) = container::decode(bytes, path, KIND)?;
        let mut field = |k: &str| {
            header
                .remove(k)
                .ok_or_else(|| OryxError::Header(format!("missing `{k}`")))
        };
        let bad = |e: serde_json::Error| OryxError::Header(e.to_string());
        let config: ModelConfig = serde_json::from_value(field("config")?).map_err(bad)?;
        let entries: Vec<Entry> = serde_json::from_value(field("tensors")?).map_err(bad)?;
        let meta = field("meta")?;
        let mut reader = Reader::new(&payload);
        let mut params = ParamSet::new();
        for e in entries {
            let n = e.shape.iter().product();
            params.insert(e.name, Tensor::new(&e.shape, reader.f64s(n)?)?)?;
        }
        if !reader.finished() {
            return Err(OryxError::Header("payload longer than the tensor directory".into()));
        }
        Checkpoint::new(config, params, meta)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        container::write_file(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&container::read_file(path)?, path)
    }
}
