use oryx::numerics::Tensor;
use oryx::retention::{
    retention_chunked, retention_chunkwise, retention_parallel, retention_recurrent,
    RetentionConfig, RetentionState, SequenceLayout, WithinStep,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn qkv(rng: &mut ChaCha8Rng, b: usize, t: usize, n: usize, d: usize) -> (Tensor, Tensor, Tensor) {
    let shape = [b, t * n, d];
    (
        random_tensor(rng, &shape),
        random_tensor(rng, &shape),
        random_tensor(rng, &shape),
    )
}

fn rows(t: &Tensor, b: usize, start_tok: usize, count: usize, per_seq: usize) -> Tensor {
    let d = t.last_dim();
    let off = (b * per_seq + start_tok) * d;
    Tensor::new(&[count, d], t.data()[off..off + count * d].to_vec()).unwrap()
}

/// Runs the recurrent form timestep by timestep; returns outputs and final
/// per-sequence states.
fn run_recurrent(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    cfg: &RetentionConfig,
    layout: &SequenceLayout,
) -> (Tensor, Vec<RetentionState>) {
    let n = layout.agents;
    let per_seq = layout.tokens();
    let d = cfg.embed_dim;
    let mut y = vec![0.0; q.numel()];
    let mut finals = Vec::new();
    for b in 0..layout.batch {
        let mut state = RetentionState::zeros(cfg);
        for t in 0..layout.timesteps {
            let (qt, kt, vt) = (
                rows(q, b, t * n, n, per_seq),
                rows(k, b, t * n, n, per_seq),
                rows(v, b, t * n, n, per_seq),
            );
            let (yt, next) =
                retention_recurrent(&qt, &kt, &vt, &state, cfg, layout.reset(b, t)).unwrap();
            let off = (b * per_seq + t * n) * d;
            y[off..off + n * d].copy_from_slice(yt.data());
            state = next;
        }
        finals.push(state);
    }
    (Tensor::new(q.shape(), y).unwrap(), finals)
}

fn random_resets(rng: &mut ChaCha8Rng, b: usize, t: usize, p: f64) -> Vec<bool> {
    (0..b * t).map(|_| rng.gen_bool(p)).collect()
}

#[test]
fn zero_decay_sees_only_its_own_timestep() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (b, t, n, d) = (1, 4, 2, 4);
    let cfg = RetentionConfig::with_decays(d, vec![0.0, 0.0], 8, WithinStep::Full).unwrap();
    let layout = SequenceLayout::contiguous(b, t, n).unwrap();
    let (q, k, v) = qkv(&mut rng, b, t, n, d);
    let y = retention_parallel(&q, &k, &v, &cfg, &layout).unwrap();
    // Perturb every earlier timestep; timestep 3 must not move.
    let mut k2 = k.clone();
    let mut v2 = v.clone();
    for i in 0..3 * n * d {
        k2.data_mut()[i] += 1.0;
        v2.data_mut()[i] -= 0.5;
    }
    let y2 = retention_parallel(&q, &k2, &v2, &cfg, &layout).unwrap();
    let tail = 3 * n * d;
    for i in tail..y.numel() {
        assert_eq!(y.data()[i], y2.data()[i]);
    }
}

#[test]
fn undecayed_single_channel_is_a_cumulative_sum() {
    let q = Tensor::new(&[1, 4, 1], vec![1.0, 2.0, -1.0, 0.5]).unwrap();
    let k = Tensor::new(&[1, 4, 1], vec![1.0, 1.0, 2.0, -1.0]).unwrap();
    let v = Tensor::new(&[1, 4, 1], vec![3.0, 1.0, 1.0, 4.0]).unwrap();
    let cfg = RetentionConfig::with_decays(1, vec![1.0], 4, WithinStep::Full).unwrap();
    let layout = SequenceLayout::contiguous(1, 4, 1).unwrap();
    let y = retention_parallel(&q, &k, &v, &cfg, &layout).unwrap();
    // cumulative Σ k v = 3, 4, 6, 2
    assert_eq!(y.data(), &[3.0, 8.0, -6.0, 1.0]);
}

#[test]
fn parallel_matches_recurrent_on_random_batch() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (b, t, n, d) = (2, 6, 3, 8);
    for within in [WithinStep::Full, WithinStep::AgentCausal] {
        let cfg = RetentionConfig::new(d, 2, 0.8, 6, within).unwrap();
        let layout = SequenceLayout::contiguous(b, t, n).unwrap();
        let (q, k, v) = qkv(&mut rng, b, t, n, d);
        let yp = retention_parallel(&q, &k, &v, &cfg, &layout).unwrap();
        let (yr, _) = run_recurrent(&q, &k, &v, &cfg, &layout);
        assert!(yp.max_abs_diff(&yr) < 1e-10);
    }
}

#[test]
fn recurrent_reset_equals_fresh_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = RetentionConfig::new(4, 1, 0.9, 4, WithinStep::Full).unwrap();
    let (q, k, v) = qkv(&mut rng, 1, 1, 2, 4);
    let q = q.reshape(&[2, 4]).unwrap();
    let k = k.reshape(&[2, 4]).unwrap();
    let v = v.reshape(&[2, 4]).unwrap();
    let zero = RetentionState::zeros(&cfg);
    let (_, dirty) = retention_recurrent(&q, &k, &v, &zero, &cfg, false).unwrap();
    let (y_reset, s_reset) = retention_recurrent(&q, &k, &v, &dirty, &cfg, true).unwrap();
    let (y_fresh, s_fresh) = retention_recurrent(&q, &k, &v, &zero, &cfg, false).unwrap();
    assert_eq!(y_reset, y_fresh);
    assert_eq!(s_reset.matrices(), s_fresh.matrices());
}

#[test]
fn one_recurrent_step_equals_length_one_parallel() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = RetentionConfig::new(6, 3, 0.3, 4, WithinStep::AgentCausal).unwrap();
    let (q, k, v) = qkv(&mut rng, 1, 1, 3, 6);
    let layout = SequenceLayout::contiguous(1, 1, 3).unwrap();
    let yp = retention_parallel(&q, &k, &v, &cfg, &layout).unwrap();
    let flat = |t: &Tensor| t.clone().reshape(&[3, 6]).unwrap();
    let (yr, _) = retention_recurrent(
        &flat(&q),
        &flat(&k),
        &flat(&v),
        &RetentionState::zeros(&cfg),
        &cfg,
        false,
    )
    .unwrap();
    assert!(yp.data().iter().zip(yr.data()).all(|(a, b)| (a - b).abs() < 1e-15));
}

#[test]
fn ten_recurrent_steps_match_parallel() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let cfg = RetentionConfig::new(4, 2, 0.95, 10, WithinStep::Full).unwrap();
    let layout = SequenceLayout::contiguous(1, 10, 2).unwrap();
    let (q, k, v) = qkv(&mut rng, 1, 10, 2, 4);
    let yp = retention_parallel(&q, &k, &v, &cfg, &layout).unwrap();
    let (yr, _) = run_recurrent(&q, &k, &v, &cfg, &layout);
    assert!(yp.max_abs_diff(&yr) < 1e-10);
}

#[test]
fn single_chunk_is_exactly_parallel() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = RetentionConfig::new(8, 2, 0.5, 5, WithinStep::AgentCausal).unwrap();
    let layout = SequenceLayout::new(2, 5, 3, random_resets(&mut rng, 2, 5, 0.3)).unwrap();
    let (q, k, v) = qkv(&mut rng, 2, 5, 3, 8);
    let zero = vec![RetentionState::zeros(&cfg); 2];
    let (yc, _) = retention_chunkwise(&q, &k, &v, &zero, &cfg, &layout).unwrap();
    let yp = retention_parallel(&q, &k, &v, &cfg, &layout).unwrap();
    assert_eq!(yc, yp);
}

#[test]
fn unit_chunks_match_recurrent_and_other_chunk_sizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let (b, t, n, d) = (2, 11, 2, 6);
    let resets = random_resets(&mut rng, b, t, 0.2);
    let layout = SequenceLayout::new(b, t, n, resets).unwrap();
    let (q, k, v) = qkv(&mut rng, b, t, n, d);
    let base = RetentionConfig::new(d, 3, 0.9, 1, WithinStep::Full).unwrap();
    let (yr, sr) = run_recurrent(&q, &k, &v, &base, &layout);
    for chunk in [1, 2, 3, 5] {
        let cfg = RetentionConfig {
            chunk_size: chunk,
            ..base.clone()
        };
        let (yc, sc) = retention_chunked(&q, &k, &v, &cfg, &layout).unwrap();
        assert!(yc.max_abs_diff(&yr) < 1e-10, "chunk {chunk}");
        for (a, bstate) in sc.iter().zip(&sr) {
            assert!(a.max_abs_diff(bstate) < 1e-10, "chunk {chunk} state");
        }
    }
}

#[test]
fn oversized_chunk_is_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let cfg = RetentionConfig::new(4, 1, 0.5, 2, WithinStep::Full).unwrap();
    let layout = SequenceLayout::contiguous(1, 3, 1).unwrap();
    let (q, k, v) = qkv(&mut rng, 1, 3, 1, 4);
    let zero = vec![RetentionState::zeros(&cfg)];
    assert!(retention_chunkwise(&q, &k, &v, &zero, &cfg, &layout).is_err());
}

#[test]
fn future_tokens_do_not_leak_backwards() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (b, t, n, d) = (1, 6, 3, 4);
    for within in [WithinStep::Full, WithinStep::AgentCausal] {
        let cfg = RetentionConfig::new(d, 2, 0.7, 6, within).unwrap();
        let layout = SequenceLayout::contiguous(b, t, n).unwrap();
        let (q, k, v) = qkv(&mut rng, b, t, n, d);
        let y = retention_parallel(&q, &k, &v, &cfg, &layout).unwrap();
        let cut = 3;
        let mut q2 = q.clone();
        let mut k2 = k.clone();
        let mut v2 = v.clone();
        for i in (cut + 1) * n * d..q.numel() {
            q2.data_mut()[i] += 0.3;
            k2.data_mut()[i] -= 0.7;
            v2.data_mut()[i] *= 2.0;
        }
        let y2 = retention_parallel(&q2, &k2, &v2, &cfg, &layout).unwrap();
        for i in 0..(cut + 1) * n * d {
            assert_eq!(y.data()[i], y2.data()[i]);
        }
    }
}

#[test]
fn agent_causal_mask_hides_later_agents_of_same_step() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let (n, d) = (3, 4);
    let cfg = RetentionConfig::new(d, 1, 0.7, 4, WithinStep::AgentCausal).unwrap();
    let layout = SequenceLayout::contiguous(1, 2, n).unwrap();
    let (q, k, v) = qkv(&mut rng, 1, 2, n, d);
    let y = retention_parallel(&q, &k, &v, &cfg, &layout).unwrap();
    // Change agent 2's key/value at timestep 1; agents 0 and 1 of that step keep their output.
    let tok = n + 2;
    let mut k2 = k.clone();
    let mut v2 = v.clone();
    for c in 0..d {
        k2.data_mut()[tok * d + c] += 1.0;
        v2.data_mut()[tok * d + c] += 1.0;
    }
    let y2 = retention_parallel(&q, &k2, &v2, &cfg, &layout).unwrap();
    for i in 0..(n + 2) * d {
        assert_eq!(y.data()[i], y2.data()[i]);
    }
    assert_ne!(y.data()[tok * d], y2.data()[tok * d]);
}

#[test]
fn reset_isolates_later_tokens() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let (t, n, d) = (7, 2, 4);
    let mut resets = vec![false; t];
    resets[4] = true;
    let cfg = RetentionConfig::new(d, 2, 0.99, 3, WithinStep::Full).unwrap();
    let layout = SequenceLayout::new(1, t, n, resets).unwrap();
    let (q, k, v) = qkv(&mut rng, 1, t, n, d);
    let (y, _) = retention_chunked(&q, &k, &v, &cfg, &layout).unwrap();
    let mut k2 = k.clone();
    let mut v2 = v.clone();
    for i in 0..4 * n * d {
        k2.data_mut()[i] = rng.gen_range(-5.0..5.0);
        v2.data_mut()[i] = rng.gen_range(-5.0..5.0);
    }
    let (y2, _) = retention_chunked(&q, &k2, &v2, &cfg, &layout).unwrap();
    for i in 4 * n * d..y.numel() {
        assert_eq!(y.data()[i], y2.data()[i]);
    }
}

#[test]
fn contribution_weight_is_non_increasing_with_distance() {
    // Unit q·k and a one-hot value at timestep 0 expose D[i, 0] directly.
    let t = 8;
    let cfg = RetentionConfig::with_decays(1, vec![0.6], t, WithinStep::Full).unwrap();
    let layout = SequenceLayout::contiguous(1, t, 1).unwrap();
    let q = Tensor::new(&[1, t, 1], vec![1.0; t]).unwrap();
    let k = Tensor::new(&[1, t, 1], vec![1.0; t]).unwrap();
    let mut vdata = vec![0.0; t];
    vdata[0] = 1.0;
    let v = Tensor::new(&[1, t, 1], vdata).unwrap();
    let y = retention_parallel(&q, &k, &v, &cfg, &layout).unwrap();
    assert!(y.data().windows(2).all(|w| w[1] <= w[0]));
    assert!((y.data()[3] - 0.6f64.powi(3)).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(120))]

    #[test]
    fn three_modes_agree(
        seed in any::<u64>(),
        b in 1usize..=4,
        t in 1usize..=32,
        n in 1usize..=5,
        heads in 1usize..=4,
        head_dim in 1usize..=4,
        chunk in 1usize..=12,
        scaling in 0.05f64..=1.0,
        causal in any::<bool>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = heads * head_dim;
        let within = if causal { WithinStep::AgentCausal } else { WithinStep::Full };
        let cfg = RetentionConfig::new(d, heads, scaling, chunk, within).unwrap();
        let layout = SequenceLayout::new(b, t, n, random_resets(&mut rng, b, t, 0.15)).unwrap();
        let (q, k, v) = qkv(&mut rng, b, t, n, d);
        let yp = retention_parallel(&q, &k, &v, &cfg, &layout).unwrap();
        let (yr, sr) = run_recurrent(&q, &k, &v, &cfg, &layout);
        let (yc, sc) = retention_chunked(&q, &k, &v, &cfg, &layout).unwrap();
        prop_assert!(yp.max_abs_diff(&yr) < 1e-10);
        prop_assert!(yp.max_abs_diff(&yc) < 1e-10);
        for (x, y) in sr.iter().zip(&sc) {
            prop_assert!(x.max_abs_diff(y) < 1e-10);
        }
    }
}
