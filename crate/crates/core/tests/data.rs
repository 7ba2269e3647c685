use oryx::data::{
    record, sample_batch, subsample_uniform, Dataset, DatasetMeta, Episode,
};
use oryx::envs::{EnvMeta, EnvSpec, PolicySpec, ScriptedPolicy, TMaze, TMazeGeometry};
use oryx::OryxError;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn synthetic_meta(agents: usize, obs_dim: usize) -> DatasetMeta {
    DatasetMeta {
        env: EnvMeta {
            spec: EnvSpec::MatrixGame {
                payoff: [[1.0, 0.0], [0.0, 1.0]],
            },
            agents,
            obs_dim,
            action_dim: 3,
            step_limit: 64,
        },
        agents,
        transitions: 0,
        episodes: 0,
        seed: 0,
        generator: PolicySpec::Random,
        format_version: 1,
        windows_truncate_history: true,
        subsample: None,
    }
}

/// Episode `id` whose observations encode `(id, t)` so windows can be traced.
fn traced_episode(id: usize, len: usize, agents: usize, rng: &mut ChaCha8Rng) -> Episode {
    let mut obs = Vec::new();
    for t in 0..len {
        for _ in 0..agents {
            obs.push(id as f64);
            obs.push(t as f64);
        }
    }
    let actions = (0..len * agents).map(|_| rng.gen_range(0..3)).collect();
    let rewards = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Episode::new(agents, 2, obs, actions, rewards).unwrap()
}

fn random_dataset(rng: &mut ChaCha8Rng, episodes: usize, max_len: usize) -> Dataset {
    let agents = rng.gen_range(1..4);
    let eps = (0..episodes)
        .map(|id| {
            let len = rng.gen_range(1..=max_len);
            traced_episode(id, len, agents, rng)
        })
        .collect();
    let mut meta = synthetic_meta(agents, 2);
    meta.seed = rng.gen();
    Dataset::new(meta, eps).unwrap()
}

fn expert_dataset(transitions: u64, seed: u64) -> Dataset {
    let mut env = TMaze::new(TMazeGeometry::default()).unwrap();
    let mut policy = ScriptedPolicy::new(PolicySpec::Expert).unwrap();
    record(&mut env, &mut policy, transitions, seed).unwrap()
}

#[test]
fn expert_recording_has_perfect_returns() {
    let ds = expert_dataset(10_000, 1);
    let s = ds.stats().unwrap();
    assert!(ds.transitions() >= 10_000);
    assert_eq!((s.mean_return, s.min_return, s.max_return), (1.0, 1.0, 1.0));
}

#[test]
fn target_of_one_records_one_whole_episode() {
    let ds = expert_dataset(1, 2);
    assert_eq!(ds.episodes().len(), 1);
    assert_eq!(ds.transitions(), ds.episodes()[0].len() as u64);
    assert!(ds.transitions() > 1);
}

#[test]
fn recording_is_deterministic() {
    assert_eq!(
        expert_dataset(500, 3).to_bytes().unwrap(),
        expert_dataset(500, 3).to_bytes().unwrap()
    );
    let mut env = TMaze::new(TMazeGeometry::default()).unwrap();
    let mut p = ScriptedPolicy::new(PolicySpec::Noisy { epsilon: 0.3 }).unwrap();
    let a = record(&mut env, &mut p, 400, 4).unwrap();
    let b = record(&mut env, &mut p, 400, 4).unwrap();
    assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
}

#[test]
fn save_load_save_is_byte_identical_on_disk() {
    let dir = tempfile::tempdir().unwrap();
    let ds = expert_dataset(300, 5);
    let p1 = dir.path().join("a.oryx");
    let p2 = dir.path().join("b.oryx");
    ds.save(&p1).unwrap();
    let back = Dataset::load(&p1).unwrap();
    assert_eq!(back, ds);
    back.save(&p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
}

#[test]
fn corrupted_file_reports_checksum_and_returns_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.oryx");
    let ds = expert_dataset(100, 6);
    ds.save(&path).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    let n = bytes.len();
    bytes[n - 20] ^= 0x01;
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(Dataset::load(&path), Err(OryxError::Checksum { .. })));
    std::fs::write(&path, &bytes[..n / 2]).unwrap();
    assert!(matches!(Dataset::load(&path), Err(OryxError::Truncated(_))));
    assert!(matches!(
        Dataset::load(&dir.path().join("missing")),
        Err(OryxError::Io { .. })
    ));
}

#[test]
fn full_size_subsample_is_a_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let ds = random_dataset(&mut rng, 40, 9);
    for seed in 0..20 {
        let s = subsample_uniform(&ds, ds.transitions(), seed).unwrap();
        assert_eq!(s.stats().unwrap(), ds.stats().unwrap());
        assert_eq!(s.episodes().len(), ds.episodes().len());
    }
}

#[test]
fn single_episode_subsample() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let ds = random_dataset(&mut rng, 1, 6);
    let s = subsample_uniform(&ds, 1, 0).unwrap();
    assert_eq!(s.episodes(), ds.episodes());
}

#[test]
fn half_subsample_includes_episodes_uniformly() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let episodes = 10_000;
    let eps: Vec<Episode> = (0..episodes)
        .map(|id| {
            let len = rng.gen_range(1..=20);
            Episode::new(1, 1, vec![id as f64; len], vec![0; len], vec![0.0; len]).unwrap()
        })
        .collect();
    let ds = Dataset::new(synthetic_meta(1, 1), eps).unwrap();
    let target = ds.transitions() / 2;
    let seeds = 200;
    let mut hits = vec![0u32; episodes];
    for seed in 0..seeds {
        let s = subsample_uniform(&ds, target, seed).unwrap();
        assert!(s.transitions() >= target);
        for e in s.episodes() {
            hits[e.observation(0)[0] as usize] += 1;
        }
    }
    let expected = target as f64 / ds.transitions() as f64;
    // Pool by index and by length; each pool holds far more than 200 draws.
    for chunk in hits.chunks(500) {
        let rate = chunk.iter().sum::<u32>() as f64 / (chunk.len() as f64 * seeds as f64);
        assert!((rate - expected).abs() <= 0.02, "index pool rate {rate}");
    }
    for len in 1..=20 {
        let pool: Vec<u32> = (0..episodes)
            .filter(|&i| ds.episodes()[i].len() == len)
            .map(|i| hits[i])
            .collect();
        let rate = pool.iter().sum::<u32>() as f64 / (pool.len() as f64 * seeds as f64);
        assert!((rate - expected).abs() <= 0.02, "length {len} rate {rate}");
    }
}

#[test]
fn windows_never_cross_episodes() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let ds = random_dataset(&mut rng, 50, 12);
    let n = ds.meta.agents;
    let mut sampled = 0;
    while sampled < 100_000 {
        let b = sample_batch(&ds, 64, 7, &mut rng).unwrap();
        b.validate().unwrap();
        for w in 0..b.batch {
            let mut prev: Option<(f64, f64)> = None;
            for p in 0..b.len {
                let i = w * b.len + p;
                if !b.mask[i] {
                    continue;
                }
                let o = &b.observations[i * n * 2..i * n * 2 + 2];
                let id = o[0] as usize;
                let ep = &ds.episodes()[id];
                let t = o[1] as usize;
                assert_eq!(b.terminals[i], t + 1 == ep.len());
                assert_eq!(b.rewards[i], ep.rewards()[t]);
                if let Some((pid, pt)) = prev {
                    assert_eq!(pid, o[0]);
                    assert_eq!(pt + 1.0, o[1]);
                }
                prev = Some((o[0], o[1]));
            }
            sampled += 1;
        }
    }
}

#[test]
fn window_anchors_are_uniform_over_transitions() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let ds = random_dataset(&mut rng, 4, 8);
    let n = ds.meta.agents;
    let offsets: Vec<usize> = ds
        .episodes()
        .iter()
        .scan(0, |acc, e| {
            let o = *acc;
            *acc += e.len();
            Some(o)
        })
        .collect();
    let total = ds.transitions() as usize;
    let mut counts = vec![0u64; total];
    let draws = 400_000;
    let mut done = 0;
    while done < draws {
        let b = sample_batch(&ds, 100, 3, &mut rng).unwrap();
        for w in 0..b.batch {
            let i = w * b.len + b.len - 1;
            let o = &b.observations[i * n * 2..i * n * 2 + 2];
            counts[offsets[o[0] as usize] + o[1] as usize] += 1;
        }
        done += b.batch;
    }
    let expected = draws as f64 / total as f64;
    for c in counts {
        assert!((c as f64 / expected - 1.0).abs() <= 0.03, "{c} vs {expected}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn random_datasets_roundtrip_bit_exactly(seed in any::<u64>(), episodes in 1usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = random_dataset(&mut rng, episodes, 15);
        let bytes = ds.to_bytes().unwrap();
        let back = Dataset::from_bytes(&bytes, std::path::Path::new("mem")).unwrap();
        prop_assert_eq!(&back, &ds);
        prop_assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn full_target_preserves_stats(seed in any::<u64>(), sub_seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ds = random_dataset(&mut rng, 25, 10);
        let s = subsample_uniform(&ds, ds.transitions(), sub_seed).unwrap();
        prop_assert_eq!(s.stats().unwrap(), ds.stats().unwrap());
    }
}
