use indexmap::IndexMap;
use rand::Rng;

use super::Tensor;
use crate::error::{ensure, Result};

/// Named tensors in insertion order.
///
/// Used both for learnable weights and for the gradients returned by
/// [`Tape::backward`](super::Tape::backward), which mirror the parameter set
/// entry for entry.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    entries: IndexMap<String, Tensor>,
}

pub type GradMap = ParamSet;

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        ensure!(
            !self.entries.contains_key(&name),
            "duplicate parameter name `{name}`"
        );
        self.entries.insert(name, value);
        Ok(())
    }

    /// Inserts a `(fan_in, fan_out)` matrix drawn uniformly from
    /// `±scale / sqrt(fan_in)`.
    pub fn insert_uniform<R: Rng>(
        &mut self,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<()> {
        let bound = scale / (fan_in as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.gen_range(-bound..=bound))
            .collect();
        self.insert(name, Tensor::from_parts(vec![fan_in, fan_out], data))
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.get_index_of(name)
    }

    pub fn by_index(&self, index: usize) -> (&str, &Tensor) {
        let (k, v) = self.entries.get_index(index).expect("parameter index");
        (k.as_str(), v)
    }

    pub fn by_index_mut(&mut self, index: usize) -> &mut Tensor {
        self.entries.get_index_mut(index).expect("parameter index").1
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Same names and shapes, all values zero.
    pub fn zeros_like(&self) -> Self {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect(),
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    /// True when `other` has exactly the same names (in order) and shapes.
    pub fn same_layout(&self, other: &ParamSet) -> bool {
        self.len() == other.len()
            && self
                .entries
                .iter()
                .zip(other.entries.iter())
                .all(|((ka, va), (kb, vb))| ka == kb && va.shape() == vb.shape())
    }

    pub fn max_abs_diff(&self, other: &ParamSet) -> f64 {
        self.entries
            .values()
            .zip(other.entries.values())
            .map(|(a, b)| a.max_abs_diff(b))
            .fold(0.0, f64::max)
    }

    /// L2 norm over every scalar in the set.
    pub fn global_norm(&self) -> f64 {
        self.entries
            .values()
            .flat_map(|t| t.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}
