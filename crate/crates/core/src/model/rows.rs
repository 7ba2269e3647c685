//! Single-token versions of the forward pass, used by the step executor.
//! They follow the tape operations term by term so the two paths agree to
//! rounding.

use crate::error::{OryxError, Result};
use crate::numerics::{normalize_group, silu, ParamSet, Tensor};

use super::names;

pub(crate) fn tensor<'a>(params: &'a ParamSet, name: &str) -> Result<&'a Tensor> {
    params
        .get(name)
        .ok_or_else(|| OryxError::Contract(format!("missing parameter `{name}`")))
}

/// `x · W + b` for one row.
pub(crate) fn linear(x: &[f64], w: &Tensor, b: Option<&Tensor>) -> Vec<f64> {
    let out = w.shape()[1];
    let mut y = match b {
        Some(b) => b.data().to_vec(),
        None => vec![0.0; out],
    };
    for (i, &xi) in x.iter().enumerate() {
        let row = &w.data()[i * out..(i + 1) * out];
        for (y, &wv) in y.iter_mut().zip(row) {
            *y += xi * wv;
        }
    }
    y
}

pub(crate) fn norm(x: &[f64], gain: &Tensor, bias: Option<&Tensor>, group: usize) -> Vec<f64> {
    let mut xhat = vec![0.0; x.len()];
    for (xs, hs) in x.chunks(group).zip(xhat.chunks_mut(group)) {
        normalize_group(xs, hs);
    }
    let g = gain.data();
    xhat.iter()
        .enumerate()
        .map(|(c, h)| h * g[c] + bias.map_or(0.0, |b| b.data()[c]))
        .collect()
}

pub(crate) fn silu_in_place(x: &mut [f64]) {
    x.iter_mut().for_each(|v| *v = silu(*v));
}

pub(crate) fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Parameters of one retention block.
pub(crate) struct BlockRows<'a> {
    ln1: (&'a Tensor, &'a Tensor),
    wq: &'a Tensor,
    wk: &'a Tensor,
    wv: &'a Tensor,
    gn: &'a Tensor,
    wo: &'a Tensor,
    ln2: (&'a Tensor, &'a Tensor),
    ff1: (&'a Tensor, &'a Tensor),
    ff2: (&'a Tensor, &'a Tensor),
    q_scale: f64,
    head_dim: usize,
}

pub(crate) struct Qkv {
    pub q: Vec<f64>,
    pub k: Vec<f64>,
    pub v: Vec<f64>,
}

impl<'a> BlockRows<'a> {
    pub fn load(params: &'a ParamSet, side: &str, b: usize, head_dim: usize) -> Result<Self> {
        let p = |leaf: &str| tensor(params, &names::block(side, b, leaf));
        Ok(BlockRows {
            ln1: (p("ln1.g")?, p("ln1.b")?),
            wq: p("wq")?,
            wk: p("wk")?,
            wv: p("wv")?,
            gn: p("gn.g")?,
            wo: p("wo")?,
            ln2: (p("ln2.g")?, p("ln2.b")?),
            ff1: (p("ff1.w")?, p("ff1.b")?),
            ff2: (p("ff2.w")?, p("ff2.b")?),
            q_scale: 1.0 / (head_dim as f64).sqrt(),
            head_dim,
        })
    }

    pub fn qkv(&self, x: &[f64]) -> Qkv {
        let z = norm(x, self.ln1.0, Some(self.ln1.1), x.len());
        let mut q = linear(&z, self.wq, None);
        q.iter_mut().for_each(|v| *v *= self.q_scale);
        Qkv {
            q,
            k: linear(&z, self.wk, None),
            v: linear(&z, self.wv, None),
        }
    }

    /// Everything after retention: group norm, output projection, residual,
    /// feed-forward, residual.
    pub fn finish(&self, x: &[f64], retained: &[f64]) -> Vec<f64> {
        let g = norm(retained, self.gn, None, self.head_dim);
        let h = add(x, &linear(&g, self.wo, None));
        let z = norm(&h, self.ln2.0, Some(self.ln2.1), h.len());
        let mut f = linear(&z, self.ff1.0, Some(self.ff1.1));
        silu_in_place(&mut f);
        add(&h, &linear(&f, self.ff2.0, Some(self.ff2.1)))
    }
}
