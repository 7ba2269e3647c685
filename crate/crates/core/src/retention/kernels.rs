use super::{RetentionConfig, RetentionState, SequenceLayout, StepAccumulator, WithinStep};
use crate::error::{ensure, Result};
use crate::numerics::Tensor;

fn check_qkv(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    cfg: &RetentionConfig,
    layout: &SequenceLayout,
) -> Result<()> {
    let rows = layout.batch * layout.tokens();
    for (name, t) in [("q", q), ("k", k), ("v", v)] {
        ensure!(
            t.last_dim() == cfg.embed_dim && t.rows() == rows,
            "{name} has shape {:?}, expected {rows} rows of width {}",
            t.shape(),
            cfg.embed_dim
        );
    }
    Ok(())
}

fn powers(cfg: &RetentionConfig, len: usize) -> Vec<Vec<f64>> {
    cfg.decays
        .iter()
        .map(|&kappa| {
            let mut p = Vec::with_capacity(len + 1);
            let mut acc = 1.0;
            for _ in 0..=len {
                p.push(acc);
                acc *= kappa;
            }
            p
        })
        .collect()
}

/// Timestep at which the segment containing `t` begins, for sequence `b`.
fn segment_starts(layout: &SequenceLayout, b: usize) -> Vec<usize> {
    let mut start = 0;
    (0..layout.timesteps)
        .map(|t| {
            if layout.reset(b, t) {
                start = t;
            }
            start
        })
        .collect()
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Calls `f(i, m, decay_index)` for every visible `(query token, key token)`
/// pair of sequence `b`, where `decay_index = t(i) - t(m)`.
fn for_each_pair(
    layout: &SequenceLayout,
    within: WithinStep,
    b: usize,
    mut f: impl FnMut(usize, usize, usize),
) {
    let n = layout.agents;
    let seg = segment_starts(layout, b);
    for ti in 0..layout.timesteps {
        for ji in 0..n {
            let i = layout.token(ti, ji);
            for tm in seg[ti]..=ti {
                let last = if tm == ti && within == WithinStep::AgentCausal {
                    ji + 1
                } else {
                    n
                };
                for jm in 0..last {
                    f(i, layout.token(tm, jm), ti - tm);
                }
            }
        }
    }
}

/// Parallel (attention-like) retention over whole sequences.
pub fn retention_parallel(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    cfg: &RetentionConfig,
    layout: &SequenceLayout,
) -> Result<Tensor> {
    check_qkv(q, k, v, cfg, layout)?;
    let d = cfg.embed_dim;
    let hd = cfg.head_dim();
    let pw = powers(cfg, layout.timesteps);
    let per_seq = layout.tokens() * d;
    let mut y = vec![0.0; q.numel()];
    for b in 0..layout.batch {
        let (qs, ks, vs) = (
            &q.data()[b * per_seq..(b + 1) * per_seq],
            &k.data()[b * per_seq..(b + 1) * per_seq],
            &v.data()[b * per_seq..(b + 1) * per_seq],
        );
        let ys = &mut y[b * per_seq..(b + 1) * per_seq];
        for_each_pair(layout, cfg.within_step, b, |i, m, dt| {
            for h in 0..cfg.heads {
                let c = pw[h][dt];
                if c == 0.0 {
                    continue;
                }
                let o = h * hd;
                let s = c * dot(&qs[i * d + o..i * d + o + hd], &ks[m * d + o..m * d + o + hd]);
                axpy(s, &vs[m * d + o..m * d + o + hd], &mut ys[i * d + o..i * d + o + hd]);
            }
        });
    }
    Ok(Tensor::from_parts(q.shape().to_vec(), y))
}

/// Vector-Jacobian product of [`retention_parallel`].
pub(crate) fn retention_parallel_backward(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    dy: &[f64],
    cfg: &RetentionConfig,
    layout: &SequenceLayout,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let d = cfg.embed_dim;
    let hd = cfg.head_dim();
    let pw = powers(cfg, layout.timesteps);
    let per_seq = layout.tokens() * d;
    let mut dq = vec![0.0; q.numel()];
    let mut dk = vec![0.0; k.numel()];
    let mut dv = vec![0.0; v.numel()];
    for b in 0..layout.batch {
        let r = b * per_seq..(b + 1) * per_seq;
        let (qs, ks, vs, dys) = (
            &q.data()[r.clone()],
            &k.data()[r.clone()],
            &v.data()[r.clone()],
            &dy[r.clone()],
        );
        let (dqs, dks, dvs) = (
            &mut dq[r.clone()],
            &mut dk[r.clone()],
            &mut dv[r.clone()],
        );
        for_each_pair(layout, cfg.within_step, b, |i, m, dt| {
            for h in 0..cfg.heads {
                let c = pw[h][dt];
                if c == 0.0 {
                    continue;
                }
                let (ih, mh) = (i * d + h * hd, m * d + h * hd);
                let qi = &qs[ih..ih + hd];
                let km = &ks[mh..mh + hd];
                let vm = &vs[mh..mh + hd];
                let dyi = &dys[ih..ih + hd];
                let s = c * dot(qi, km);
                axpy(s, dyi, &mut dvs[mh..mh + hd]);
                let g = c * dot(dyi, vm);
                axpy(g, km, &mut dqs[ih..ih + hd]);
                axpy(g, qi, &mut dks[mh..mh + hd]);
            }
        });
    }
    (dq, dk, dv)
}

/// One timestep of a single sequence: `q_t`, `k_t`, `v_t` are `(n, dim)`.
///
/// On `reset` the incoming state is discarded before use.
pub fn retention_recurrent(
    q_t: &Tensor,
    k_t: &Tensor,
    v_t: &Tensor,
    state: &RetentionState,
    cfg: &RetentionConfig,
    reset: bool,
) -> Result<(Tensor, RetentionState)> {
    let d = cfg.embed_dim;
    let n = q_t.rows();
    for (name, t) in [("q", q_t), ("k", k_t), ("v", v_t)] {
        ensure!(
            t.last_dim() == d && t.rows() == n,
            "{name}_t has shape {:?}, expected ({n}, {d})",
            t.shape()
        );
    }
    let mut acc = StepAccumulator::begin(cfg, state, reset)?;
    let mut y = vec![0.0; n * d];
    let row = |t: &Tensor, j: usize| t.data()[j * d..(j + 1) * d].to_vec();
    match cfg.within_step {
        WithinStep::Full => {
            for j in 0..n {
                acc.absorb(&row(k_t, j), &row(v_t, j));
            }
            for j in 0..n {
                acc.read(&row(q_t, j), &mut y[j * d..(j + 1) * d]);
            }
        }
        WithinStep::AgentCausal => {
            for j in 0..n {
                acc.absorb(&row(k_t, j), &row(v_t, j));
                acc.read(&row(q_t, j), &mut y[j * d..(j + 1) * d]);
            }
        }
    }
    Ok((Tensor::from_parts(q_t.shape().to_vec(), y), acc.finish()))
}

/// One chunk of `C` timesteps for every sequence in the batch.
///
/// `states_in[b]` is the recurrent state after the previous chunk (zero for
/// the first). Returns the chunk outputs and the state after its last
/// timestep.
pub fn retention_chunkwise(
    q_c: &Tensor,
    k_c: &Tensor,
    v_c: &Tensor,
    states_in: &[RetentionState],
    cfg: &RetentionConfig,
    layout: &SequenceLayout,
) -> Result<(Tensor, Vec<RetentionState>)> {
    ensure!(
        layout.timesteps <= cfg.chunk_size,
        "chunk of {} timesteps exceeds configured maximum {}",
        layout.timesteps,
        cfg.chunk_size
    );
    ensure!(
        states_in.len() == layout.batch,
        "{} states for batch of {}",
        states_in.len(),
        layout.batch
    );
    for s in states_in {
        s.check(cfg)?;
    }
    let mut y = retention_parallel(q_c, k_c, v_c, cfg, layout)?;
    let d = cfg.embed_dim;
    let hd = cfg.head_dim();
    let c_len = layout.timesteps;
    let n = layout.agents;
    let pw = powers(cfg, c_len);
    let per_seq = layout.tokens() * d;
    let mut states_out = Vec::with_capacity(layout.batch);
    let mut tmp = vec![0.0; hd];
    for (b, s_in) in states_in.iter().enumerate() {
        let base = b * per_seq;
        let first_reset = (0..c_len).find(|&t| layout.reset(b, t));
        let last_reset = (0..c_len).rev().find(|&t| layout.reset(b, t));

        // Cross-chunk contribution for timesteps before any reset.
        let carry_until = first_reset.unwrap_or(c_len);
        for t in 0..carry_until {
            for j in 0..n {
                let i = base + layout.token(t, j) * d;
                for h in 0..cfg.heads {
                    let c = pw[h][t + 1];
                    if c == 0.0 {
                        continue;
                    }
                    let s = s_in.head(h);
                    let qh = &q_c.data()[i + h * hd..i + (h + 1) * hd];
                    tmp.iter_mut().for_each(|x| *x = 0.0);
                    for (a, &qa) in qh.iter().enumerate() {
                        axpy(qa, &s[a * hd..(a + 1) * hd], &mut tmp);
                    }
                    axpy(c, &tmp, &mut y.data_mut()[i + h * hd..i + (h + 1) * hd]);
                }
            }
        }

        let mut out = RetentionState::zeros(cfg);
        out.timestep = s_in.timestep + c_len;
        let from = match last_reset {
            Some(t) => t,
            None => {
                for h in 0..cfg.heads {
                    let c = pw[h][c_len];
                    for (o, &si) in out.head_mut(h).iter_mut().zip(s_in.head(h)) {
                        *o = c * si;
                    }
                }
                0
            }
        };
        for t in from..c_len {
            for j in 0..n {
                let m = base + layout.token(t, j) * d;
                for h in 0..cfg.heads {
                    let c = pw[h][c_len - 1 - t];
                    if c == 0.0 {
                        continue;
                    }
                    let kh = &k_c.data()[m + h * hd..m + (h + 1) * hd];
                    let vh = &v_c.data()[m + h * hd..m + (h + 1) * hd];
                    let s = out.head_mut(h);
                    for (a, &ka) in kh.iter().enumerate() {
                        axpy(c * ka, vh, &mut s[a * hd..(a + 1) * hd]);
                    }
                }
            }
        }
        states_out.push(out);
    }
    Ok((y, states_out))
}

/// Chunkwise evaluation of whole sequences from the zero state, splitting
/// the timestep axis into chunks of `cfg.chunk_size`.
pub fn retention_chunked(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    cfg: &RetentionConfig,
    layout: &SequenceLayout,
) -> Result<(Tensor, Vec<RetentionState>)> {
    check_qkv(q, k, v, cfg, layout)?;
    let zero = vec![RetentionState::zeros(cfg); layout.batch];
    if layout.timesteps <= cfg.chunk_size {
        return retention_chunkwise(q, k, v, &zero, cfg, layout);
    }
    let d = cfg.embed_dim;
    let n = layout.agents;
    let per_seq = layout.tokens() * d;
    let mut y = vec![0.0; q.numel()];
    let mut states = zero;
    let mut start = 0;
    while start < layout.timesteps {
        let end = (start + cfg.chunk_size).min(layout.timesteps);
        let sub = layout.slice(start, end);
        let width = (end - start) * n * d;
        let take = |t: &Tensor| {
            let mut buf = Vec::with_capacity(layout.batch * width);
            for b in 0..layout.batch {
                let off = b * per_seq + start * n * d;
                buf.extend_from_slice(&t.data()[off..off + width]);
            }
            Tensor::from_parts(vec![layout.batch, (end - start) * n, d], buf)
        };
        let (yc, next) = retention_chunkwise(&take(q), &take(k), &take(v), &states, cfg, &sub)?;
        for b in 0..layout.batch {
            let off = b * per_seq + start * n * d;
            y[off..off + width].copy_from_slice(&yc.data()[b * width..(b + 1) * width]);
        }
        states = next;
        start = end;
    }
    Ok((Tensor::from_parts(q.shape().to_vec(), y), states))
}
