use std::sync::Arc;

use levelguide::ela::{build_input_tensor, ElaConfig};
use levelguide::meta::{action_interval, reward, soft_update, ArchiveStats, PolicyNet, ReplayBuffer, Transition, NUM_ACTIONS};
use levelguide::rng::{stream, Stream};
use proptest::prelude::*;

fn transition(action: usize) -> Transition {
    let s = Arc::new(build_input_tensor(&[vec![0.0, 1.0]], &[1.0], 1, 10).unwrap());
    Transition { state: s.clone(), action: action % NUM_ACTIONS, reward: 0.0, next_state: s, terminal: false }
}

#[test]
fn band_actions_partition_the_unit_interval() {
    let bands: Vec<_> = (5..NUM_ACTIONS).map(|a| action_interval(a).unwrap()).collect();
    assert_eq!(bands[0].lo, 0.0);
    assert_eq!(bands[4].hi, 1.0);
    for w in bands.windows(2) {
        assert!((w[0].hi - w[1].lo).abs() < 1e-15);
    }
    for a in 0..5 {
        assert_eq!(action_interval(a).unwrap().hi, 1.0);
    }
}

#[test]
fn replay_sampling_is_uniform() {
    let mut buf = ReplayBuffer::new(20);
    for a in 0..20 {
        buf.push(transition(a)).unwrap();
    }
    let draws = 40_000;
    let mut counts = [0usize; 20];
    let mut rng = stream(5, Stream::Replay, 0);
    for _ in 0..draws / 20 {
        for i in buf.sample_indices(20, &mut rng).unwrap() {
            counts[i] += 1;
        }
    }
    let expected = draws as f64 / 20.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    // 19 degrees of freedom, 0.999 quantile
    assert!(chi2 < 43.82, "chi-square {chi2}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn soft_update_shrinks_the_gap(tau in 0.001..0.5f64, a in 0u64..100, b in 100u64..200) {
        let online = PolicyNet::seeded(ElaConfig::default(), 32, a).unwrap();
        let mut target = PolicyNet::seeded(ElaConfig::default(), 32, b).unwrap();
        let before = target.params().max_abs_diff(online.params()).unwrap();
        soft_update(&mut target, &online, tau).unwrap();
        let after = target.params().max_abs_diff(online.params()).unwrap();
        prop_assert!((after - (1.0 - tau) * before).abs() <= 1e-12 * before.max(1.0));
    }

    #[test]
    fn ring_buffer_keeps_the_newest(cap in 1usize..30, pushes in 1usize..100) {
        let mut buf = ReplayBuffer::new(cap);
        for a in 0..pushes {
            buf.push(transition(a)).unwrap();
        }
        prop_assert_eq!(buf.len(), pushes.min(cap));
    }

    #[test]
    fn level_rewards_telescope(levels in prop::collection::vec(0.0..=1.0f64, 2..20)) {
        // with no feasible front the IGD term vanishes and the sum is the net level gain
        let stats: Vec<ArchiveStats> = levels.iter().map(|&l| ArchiveStats { max_level: l, igd: None }).collect();
        let total: f64 = stats.windows(2).map(|w| reward(&w[0], &w[1]).unwrap()).sum();
        prop_assert!((total - (levels[levels.len() - 1] - levels[0])).abs() <= 1e-12);
    }
}
