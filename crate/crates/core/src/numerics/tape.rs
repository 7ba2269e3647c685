//! Reverse-mode differentiation over an explicit tape.
//!
//! Every operation appends a node holding its value; [`Tape::backward`]
//! walks the nodes in reverse and accumulates vector-Jacobian products.
//! Tensors are handled as `(rows, last_dim)` matrices: linear layers,
//! normalisation and softmax act on the last axis, and a bias of the last
//! axis' width is the only form of broadcasting.

use std::borrow::Cow;

use super::gemm::gemm;
use super::{GradMap, ParamSet, Tensor};
use crate::error::{ensure, OryxError, Result};
use crate::retention::{retention_chunked, retention_parallel_backward, RetentionConfig, SequenceLayout};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Option<Var> },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Silu(Var),
    Tanh(Var),
    Square(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Option<Var>,
        group: usize,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Retention(Box<RetentionOp>),
    LogSoftmax(Var),
    Gather { x: Var, idx: Vec<usize> },
    AddConst(Var),
    WeightedSum { x: Var, w: Vec<f64> },
    Reshape(Var),
}

struct RetentionOp {
    q: Var,
    k: Var,
    v: Var,
    cfg: RetentionConfig,
    layout: SequenceLayout,
}

struct Node {
    value: Tensor,
    op: Op,
    name: Cow<'static, str>,
    requires_grad: bool,
}

/// Leaf variables bound to every entry of a [`ParamSet`], in set order.
#[derive(Clone, Debug)]
pub struct ParamVars {
    vars: Vec<Var>,
    names: Vec<String>,
}

impl ParamVars {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.vars[i])
            .ok_or_else(|| OryxError::contract(format!("no parameter named `{name}`")))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// One recorded computation. Build a fresh tape per training step.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    first_nonfinite: Option<usize>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, name: impl Into<Cow<'static, str>>) -> Var {
        let requires_grad = match &op {
            Op::Leaf => false,
            _ => op_inputs(&op).iter().any(|v| self.nodes[v.0].requires_grad),
        };
        let id = self.nodes.len();
        if self.first_nonfinite.is_none() && !value.is_finite() {
            self.first_nonfinite = Some(id);
        }
        self.nodes.push(Node {
            value,
            op,
            name: name.into(),
            requires_grad,
        });
        Var(id)
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, "constant")
    }

    /// Binds every parameter as a differentiable leaf.
    pub fn params(&mut self, params: &ParamSet) -> ParamVars {
        let mut vars = Vec::with_capacity(params.len());
        let mut names = Vec::with_capacity(params.len());
        for (name, t) in params.iter() {
            let v = self.push(t.clone(), Op::Leaf, name.to_string());
            self.nodes[v.0].requires_grad = true;
            vars.push(v);
            names.push(name.to_string());
        }
        ParamVars { vars, names }
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn name(&self, v: Var) -> &str {
        &self.nodes[v.0].name
    }

    /// Renames a node; the name is reported if the node turns non-finite.
    pub fn set_name(&mut self, v: Var, name: impl Into<Cow<'static, str>>) {
        self.nodes[v.0].name = name.into();
    }

    /// Fails with the first non-finite node recorded so far.
    pub fn check_finite(&self) -> Result<()> {
        match self.first_nonfinite {
            None => Ok(()),
            Some(id) => Err(OryxError::Numeric {
                node: format!("{}#{id}", self.nodes[id].name),
            }),
        }
    }

    pub fn scalar(&self, v: Var) -> Result<f64> {
        self.check_finite()?;
        self.value(v).item()
    }

    // ---- operations -------------------------------------------------------

    /// `x · W (+ b)` with `x` viewed as `(rows, in)` and `W` as `(in, out)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        ensure!(
            wv.shape().len() == 2 && xv.last_dim() == wv.shape()[0],
            "linear: input width {} vs weight {:?}",
            xv.last_dim(),
            wv.shape()
        );
        let (rows, kin, out) = (xv.rows(), wv.shape()[0], wv.shape()[1]);
        let mut y = vec![0.0; rows * out];
        if let Some(b) = b {
            let bv = self.value(b);
            ensure!(bv.numel() == out, "linear: bias of {} for width {out}", bv.numel());
            for row in y.chunks_mut(out) {
                row.copy_from_slice(bv.data());
            }
        }
        let beta = if b.is_some() { 1.0 } else { 0.0 };
        gemm(rows, kin, out, xv.data(), false, wv.data(), false, &mut y, beta);
        let mut shape = xv.shape().to_vec();
        if shape.is_empty() {
            shape.push(out);
        } else {
            *shape.last_mut().unwrap() = out;
        }
        Ok(self.push(Tensor::from_parts(shape, y), Op::Linear { x, w, b }, "linear"))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        ensure!(
            self.value(a).shape() == self.value(b).shape(),
            "{what}: shapes {:?} and {:?} differ",
            self.value(a).shape(),
            self.value(b).shape()
        );
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (av, bv) = (self.value(a), self.value(b));
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_parts(av.shape().to_vec(), data)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let av = self.value(a);
        Tensor::from_parts(av.shape().to_vec(), av.data().iter().map(|&x| f(x)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let t = self.zip_map(a, b, |x, y| x + y);
        Ok(self.push(t, Op::Add(a, b), "add"))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let t = self.zip_map(a, b, |x, y| x - y);
        Ok(self.push(t, Op::Sub(a, b), "sub"))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let t = self.zip_map(a, b, |x, y| x * y);
        Ok(self.push(t, Op::Mul(a, b), "mul"))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = self.map(a, |x| c * x);
        self.push(t, Op::Scale(a, c), "scale")
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let t = self.map(a, silu);
        self.push(t, Op::Silu(a), "silu")
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.map(a, f64::tanh);
        self.push(t, Op::Tanh(a), "tanh")
    }

    pub fn square(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| x * x);
        self.push(t, Op::Square(a), "square")
    }

    /// Adds a constant tensor of the same shape (no gradient to `c`).
    pub fn add_const(&mut self, a: Var, c: &[f64]) -> Result<Var> {
        let av = self.value(a);
        ensure!(av.numel() == c.len(), "add_const: {} vs {}", av.numel(), c.len());
        let data = av.data().iter().zip(c).map(|(x, y)| x + y).collect();
        let t = Tensor::from_parts(av.shape().to_vec(), data);
        Ok(self.push(t, Op::AddConst(a), "add_const"))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape)?;
        Ok(self.push(t, Op::Reshape(a), "reshape"))
    }

    /// Normalises each contiguous group of `group` values along the last
    /// axis, then applies a per-column gain (and bias).
    ///
    /// `group == last_dim` is layer norm; `group == head_dim` is the
    /// per-head group norm used after retention.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Option<Var>, group: usize) -> Result<Var> {
        let xv = self.value(x);
        let width = xv.last_dim();
        ensure!(
            group > 0 && width % group == 0,
            "layer_norm: group {group} does not divide width {width}"
        );
        ensure!(self.value(gain).numel() == width, "layer_norm: gain width");
        if let Some(b) = bias {
            ensure!(self.value(b).numel() == width, "layer_norm: bias width");
        }
        let g = self.value(gain).data();
        let bd = bias.map(|b| self.value(b).data());
        let groups = xv.numel() / group;
        let mut xhat = vec![0.0; xv.numel()];
        let mut rstd = vec![0.0; groups];
        let mut y = vec![0.0; xv.numel()];
        for gi in 0..groups {
            let r = gi * group..(gi + 1) * group;
            rstd[gi] = normalize_group(&xv.data()[r.clone()], &mut xhat[r.clone()]);
            let col0 = (gi * group) % width;
            for (off, i) in r.enumerate() {
                let c = col0 + off;
                y[i] = xhat[i] * g[c] + bd.map_or(0.0, |b| b[c]);
            }
        }
        let t = Tensor::from_parts(xv.shape().to_vec(), y);
        Ok(self.push(
            t,
            Op::LayerNorm {
                x,
                gain,
                bias,
                group,
                xhat,
                rstd,
            },
            "layer_norm",
        ))
    }

    /// Multi-head retention over `(batch · T · n, dim)` rows, evaluated
    /// chunkwise from the zero state.
    pub fn retention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        cfg: &RetentionConfig,
        layout: &SequenceLayout,
    ) -> Result<Var> {
        let (y, _) = retention_chunked(self.value(q), self.value(k), self.value(v), cfg, layout)?;
        Ok(self.push(
            y,
            Op::Retention(Box::new(RetentionOp {
                q,
                k,
                v,
                cfg: cfg.clone(),
                layout: layout.clone(),
            })),
            "retention",
        ))
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let w = xv.last_dim();
        let mut y = xv.data().to_vec();
        for row in y.chunks_mut(w) {
            log_softmax_in_place(row);
        }
        let t = Tensor::from_parts(xv.shape().to_vec(), y);
        self.push(t, Op::LogSoftmax(x), "log_softmax")
    }

    /// Picks `x[r, idx[r]]` from each row; the last axis is dropped.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        let w = xv.last_dim();
        ensure!(
            idx.len() == xv.rows(),
            "gather: {} indices for {} rows",
            idx.len(),
            xv.rows()
        );
        ensure!(idx.iter().all(|&i| i < w), "gather: index out of range {w}");
        let data = idx.iter().enumerate().map(|(r, &i)| xv.data()[r * w + i]).collect();
        let mut shape = xv.shape().to_vec();
        shape.pop();
        let t = Tensor::from_parts(shape, data);
        Ok(self.push(t, Op::Gather { x, idx: idx.to_vec() }, "gather"))
    }

    /// Scalar `Σ w_i x_i` with constant weights.
    pub fn weighted_sum(&mut self, x: Var, w: &[f64]) -> Result<Var> {
        let xv = self.value(x);
        ensure!(
            xv.numel() == w.len(),
            "weighted_sum: {} weights for {} values",
            w.len(),
            xv.numel()
        );
        let s = xv.data().iter().zip(w).map(|(a, b)| a * b).sum();
        Ok(self.push(Tensor::scalar(s), Op::WeightedSum { x, w: w.to_vec() }, "weighted_sum"))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        self.weighted_sum(x, &vec![1.0; n]).expect("matching length")
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = self.value(x).numel();
        self.weighted_sum(x, &vec![1.0 / n as f64; n]).expect("matching length")
    }

    // ---- backward ---------------------------------------------------------

    /// Gradients of a scalar `loss` with respect to every bound parameter.
    ///
    /// Parameters that do not influence `loss` get all-zero gradients.
    pub fn backward(&self, loss: Var, params: &ParamVars) -> Result<GradMap> {
        let lv = self.value(loss);
        ensure!(lv.is_scalar(), "backward needs a scalar loss, got {:?}", lv.shape());
        self.check_finite()?;

        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            self.propagate(id, &g, &mut grads)?;
        }

        let mut out = ParamSet::new();
        for (name, v) in params.names.iter().zip(&params.vars) {
            let shape = self.value(*v).shape().to_vec();
            let g = match grads.get(v.0).and_then(|g| g.as_ref()) {
                Some(g) => Tensor::from_parts(shape, g.clone()),
                None => Tensor::zeros(&shape),
            };
            if !g.is_finite() {
                return Err(OryxError::Numeric {
                    node: format!("grad({name})"),
                });
            }
            out.insert(name.clone(), g)?;
        }
        Ok(out)
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (rows, kin, out) = (xv.rows(), wv.shape()[0], wv.shape()[1]);
                if self.wants(*x) {
                    let mut dx = vec![0.0; rows * kin];
                    gemm(rows, out, kin, g, false, wv.data(), true, &mut dx, 0.0);
                    accumulate(grads, *x, dx);
                }
                if self.wants(*w) {
                    let mut dw = vec![0.0; kin * out];
                    gemm(kin, rows, out, xv.data(), true, g, false, &mut dw, 0.0);
                    accumulate(grads, *w, dw);
                }
                if let Some(b) = b {
                    if self.wants(*b) {
                        let mut db = vec![0.0; out];
                        for row in g.chunks(out) {
                            for (d, r) in db.iter_mut().zip(row) {
                                *d += r;
                            }
                        }
                        accumulate(grads, *b, db);
                    }
                }
            }
            Op::Add(a, b) => {
                self.send(grads, *a, || g.to_vec());
                self.send(grads, *b, || g.to_vec());
            }
            Op::Sub(a, b) => {
                self.send(grads, *a, || g.to_vec());
                self.send(grads, *b, || g.iter().map(|x| -x).collect());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.send(grads, *a, || g.iter().zip(bv).map(|(x, y)| x * y).collect());
                self.send(grads, *b, || g.iter().zip(av).map(|(x, y)| x * y).collect());
            }
            Op::Scale(a, c) => self.send(grads, *a, || g.iter().map(|x| c * x).collect()),
            Op::Silu(a) => {
                let av = self.value(*a).data();
                self.send(grads, *a, || {
                    g.iter().zip(av).map(|(d, &x)| d * silu_grad(x)).collect()
                });
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                self.send(grads, *a, || g.iter().zip(y).map(|(d, y)| d * (1.0 - y * y)).collect());
            }
            Op::Square(a) => {
                let av = self.value(*a).data();
                self.send(grads, *a, || g.iter().zip(av).map(|(d, x)| 2.0 * d * x).collect());
            }
            Op::AddConst(a) | Op::Reshape(a) => self.send(grads, *a, || g.to_vec()),
            Op::LayerNorm {
                x,
                gain,
                bias,
                group,
                xhat,
                rstd,
            } => {
                let width = node.value.last_dim();
                let gv = self.value(*gain).data();
                if self.wants(*gain) {
                    let mut dg = vec![0.0; width];
                    for (i, (d, xh)) in g.iter().zip(xhat).enumerate() {
                        dg[i % width] += d * xh;
                    }
                    accumulate(grads, *gain, dg);
                }
                if let Some(b) = bias {
                    if self.wants(*b) {
                        let mut db = vec![0.0; width];
                        for (i, d) in g.iter().enumerate() {
                            db[i % width] += d;
                        }
                        accumulate(grads, *b, db);
                    }
                }
                if self.wants(*x) {
                    let mut dx = vec![0.0; g.len()];
                    let n = *group as f64;
                    for (gi, rs) in rstd.iter().enumerate() {
                        let r = gi * group..(gi + 1) * group;
                        let col0 = (gi * group) % width;
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for (off, i) in r.clone().enumerate() {
                            let dxh = g[i] * gv[col0 + off];
                            mean_d += dxh;
                            mean_dx += dxh * xhat[i];
                        }
                        mean_d /= n;
                        mean_dx /= n;
                        for (off, i) in r.enumerate() {
                            let dxh = g[i] * gv[col0 + off];
                            dx[i] = rs * (dxh - mean_d - xhat[i] * mean_dx);
                        }
                    }
                    accumulate(grads, *x, dx);
                }
            }
            Op::Retention(op) => {
                let (dq, dk, dv) = retention_parallel_backward(
                    self.value(op.q),
                    self.value(op.k),
                    self.value(op.v),
                    g,
                    &op.cfg,
                    &op.layout,
                );
                if self.wants(op.q) {
                    accumulate(grads, op.q, dq);
                }
                if self.wants(op.k) {
                    accumulate(grads, op.k, dk);
                }
                if self.wants(op.v) {
                    accumulate(grads, op.v, dv);
                }
            }
            Op::LogSoftmax(x) => {
                let y = node.value.data();
                let w = node.value.last_dim();
                self.send(grads, *x, || {
                    let mut dx = vec![0.0; g.len()];
                    for ((dxr, gr), yr) in dx.chunks_mut(w).zip(g.chunks(w)).zip(y.chunks(w)) {
                        let s: f64 = gr.iter().sum();
                        for ((d, gi), yi) in dxr.iter_mut().zip(gr).zip(yr) {
                            *d = gi - yi.exp() * s;
                        }
                    }
                    dx
                });
            }
            Op::Gather { x, idx } => {
                let w = self.value(*x).last_dim();
                let n = self.value(*x).numel();
                self.send(grads, *x, || {
                    let mut dx = vec![0.0; n];
                    for (r, (&i, d)) in idx.iter().zip(g).enumerate() {
                        dx[r * w + i] = *d;
                    }
                    dx
                });
            }
            Op::WeightedSum { x, w } => {
                let s = g[0];
                self.send(grads, *x, || w.iter().map(|wi| wi * s).collect());
            }
        }
        Ok(())
    }

    fn send(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce() -> Vec<f64>) {
        if self.wants(v) {
            accumulate(grads, v, f());
        }
    }
}

fn op_inputs(op: &Op) -> Vec<Var> {
    match op {
        Op::Leaf => vec![],
        Op::Linear { x, w, b } => {
            let mut v = vec![*x, *w];
            v.extend(b);
            v
        }
        Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
        Op::Scale(a, _)
        | Op::Silu(a)
        | Op::Tanh(a)
        | Op::Square(a)
        | Op::LogSoftmax(a)
        | Op::AddConst(a)
        | Op::Reshape(a) => vec![*a],
        Op::LayerNorm { x, gain, bias, .. } => {
            let mut v = vec![*x, *gain];
            v.extend(bias);
            v
        }
        Op::Retention(op) => vec![op.q, op.k, op.v],
        Op::Gather { x, .. } | Op::WeightedSum { x, .. } => vec![*x],
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, g: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, x) in existing.iter_mut().zip(&g) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

#[inline]
pub(crate) fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

#[inline]
fn silu_grad(x: f64) -> f64 {
    let s = 1.0 / (1.0 + (-x).exp());
    s * (1.0 + x * (1.0 - s))
}

/// Writes the normalised group into `xhat`; returns `1/std`.
pub(crate) fn normalize_group(x: &[f64], xhat: &mut [f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let rstd = 1.0 / (var + LN_EPS).sqrt();
    for (h, v) in xhat.iter_mut().zip(x) {
        *h = (v - mean) * rstd;
    }
    rstd
}

pub(crate) fn log_softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter_mut().for_each(|v| *v -= lse);
}
