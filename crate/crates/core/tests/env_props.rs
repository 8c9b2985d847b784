mod common;

use cdmagym_core::env::{calibrate_normalizers, observation_vector, TrafficMode, NO_ACK};
use cdmagym_core::{ActionValue, CdmaEnv, NetworkScenario, Normalizers, TrafficModel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn default_env(traffic: TrafficModel) -> CdmaEnv {
    let s = NetworkScenario::default_three_pair();
    let norm = calibrate_normalizers(&s, &traffic, 300, 0).unwrap();
    CdmaEnv::new(s, traffic, norm).unwrap()
}

fn actions(p: &[f64]) -> Vec<ActionValue> {
    p.iter().map(|&x| ActionValue(x)).collect()
}

#[test]
fn reset_contract_on_default_scenario() {
    let mut env = default_env(TrafficModel::backlogged(10));
    let obs = env.reset(4);
    assert_eq!(obs.len(), 3);
    for o in &obs {
        assert_eq!(o.buffer_len, 10);
        assert_eq!(o.caused_interference, 0.0);
        assert_eq!(o.sensed_interference, -1.0);
        assert_eq!(o.distances.len(), 3);
    }
    assert_eq!(env.observation_vector(0).len(), 6);
}

#[test]
fn engineered_failure_uses_sentinel_and_penalty() {
    // A strong interferer sits right next to the victim receiver.
    let s = NetworkScenario {
        node_positions: vec![[0.0, 0.0], [10.0, 0.0], [10.5, 0.0], [20.0, 0.0]],
        pairs: vec![(0, 1), (2, 3)],
        path_loss_exp: 3.0,
        spreading_gain: 4,
        noise_power: 1e-6,
        sinr_threshold: 4.0,
        p_min: 0.1,
        p_max: 5.0,
        tx_gain_db: vec![],
        rx_gain_db: vec![],
    };
    let victim = common::brute_sinr(&s, &[0.1, 5.0])[0];
    assert!(victim < s.sinr_threshold, "construction must fail: {victim}");
    let norm = Normalizers::new(100.0, 1e-3).unwrap();
    let mut env = CdmaEnv::new(s.clone(), TrafficModel::backlogged(5), norm).unwrap();
    env.reset(0);
    let out = env.step(&actions(&[0.1, 5.0])).unwrap();
    let a = &out.agents[0];
    assert!(!a.success);
    let caused = common::brute_caused(&s, 0, 0.1);
    assert!((a.reward + (caused / 1e-3).min(1.0)).abs() < 1e-12);
    assert_eq!(a.observation.sensed_interference, NO_ACK);
    assert_eq!(*env.observation_vector(0).last().unwrap(), -1.0);
}

#[test]
fn observation_vector_hand_computed() {
    let s = NetworkScenario {
        node_positions: vec![[0.0, 0.0], [3.0, 0.0], [0.0, 4.0], [3.0, 4.0]],
        pairs: vec![(0, 1), (2, 3)],
        path_loss_exp: 2.0,
        spreading_gain: 10,
        noise_power: 0.01,
        sinr_threshold: 1.0,
        p_min: 0.1,
        p_max: 5.0,
        tx_gain_db: vec![],
        rx_gain_db: vec![],
    };
    let mut env = CdmaEnv::new(s, TrafficModel::backlogged(4), Normalizers::new(50.0, 0.5).unwrap()).unwrap();
    env.reset(0);
    env.step(&actions(&[1.0, 1.0])).unwrap();
    // Pair 0: own receiver at 3 m, other receiver (node 3) at 5 m; diameter 5.
    // Caused: 1 mW / 25 = 0.04 → 0.08 scaled. Sensed at node 1 from node 2:
    // d² = 25 → 0.04 → 0.08. Own SINR = 10·(1/9)/(0.04 + 0.01) ≈ 22.2 ≥ 1.
    let v = env.observation_vector(0);
    let want = [0.6, 1.0, 1.0, 0.08, 0.08];
    assert_eq!(v.len(), want.len());
    for (g, w) in v.iter().zip(want) {
        assert!((g - w).abs() < 1e-12, "{v:?}");
    }
}

/// Replays calibration from scratch: same generator, same draw order, own SINR
/// arithmetic.
#[test]
fn calibration_replay_oracle() {
    let s = NetworkScenario::default_three_pair();
    let traffic = TrafficModel::backlogged(10);
    let got = calibrate_normalizers(&s, &traffic, 1000, 99).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut max_sinr, mut max_int) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let p: Vec<f64> = (0..3).map(|_| rng.random_range(s.p_min..=s.p_max)).collect();
        for g in common::brute_sinr(&s, &p) {
            max_sinr = max_sinr.max(g);
        }
        for (k, &pk) in p.iter().enumerate() {
            max_int = max_int.max(common::brute_caused(&s, k, pk));
        }
    }
    assert!((got.sinr_divisor - max_sinr).abs() <= 1e-12 * max_sinr);
    assert!((got.interference_divisor - max_int).abs() <= 1e-12 * max_int);
}

#[test]
fn single_slot_calibration_is_that_slot() {
    let s = NetworkScenario {
        node_positions: vec![[0.0, 0.0], [1.0, 0.0]],
        pairs: vec![(0, 1)],
        path_loss_exp: 2.0,
        spreading_gain: 64,
        noise_power: 1e-6,
        sinr_threshold: 10.0,
        p_min: 0.1,
        p_max: 5.0,
        tx_gain_db: vec![],
        rx_gain_db: vec![],
    };
    let norm = calibrate_normalizers(&s, &TrafficModel::backlogged(1), 1, 5).unwrap();
    let p = ChaCha8Rng::seed_from_u64(5).random_range(0.1..=5.0);
    assert_eq!(norm.sinr_divisor, 64.0 * p / 1e-6);
}

#[test]
fn idle_slot_has_zero_rewards() {
    let traffic = TrafficModel {
        mode: TrafficMode::Poisson { rate: 0.0 },
        initial_buffer: 0,
        retransmit: false,
    };
    let mut env = default_env(traffic);
    env.reset(0);
    let out = env.step(&actions(&[5.0, 5.0, 5.0])).unwrap();
    for a in &out.agents {
        assert_eq!(a.reward, 0.0);
        assert!(!a.transmitted);
        assert_eq!(a.caused_interference, 0.0);
    }
}

fn power_seq(n: usize) -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(prop::array::uniform3(0.1f64..=5.0), n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rewards_bounded_and_sentinel_exact(seq in power_seq(40), seed in any::<u64>()) {
        let mut env = default_env(TrafficModel::backlogged(10));
        env.reset(seed);
        for p in &seq {
            let out = env.step(&actions(p)).unwrap();
            for (i, a) in out.agents.iter().enumerate() {
                prop_assert!((-1.0..=1.0).contains(&a.reward));
                let signed = if a.success { a.reward >= 0.0 } else { a.reward <= 0.0 };
                prop_assert!(signed);
                prop_assert_eq!(a.observation.sensed_interference == NO_ACK, !a.success);
                let v = observation_vector(&env.observations()[i], env.scaling());
                prop_assert_eq!(*v.last().unwrap() == -1.0, !a.success);
                prop_assert!(a.observation.buffer_len >= 1);
            }
        }
    }

    #[test]
    fn same_seed_same_trajectory(seq in power_seq(30), seed in any::<u64>(), rate in 0.0f64..2.0) {
        let traffic = TrafficModel { mode: TrafficMode::Poisson { rate }, initial_buffer: 2, retransmit: false };
        let mut a = default_env(traffic);
        let mut b = default_env(traffic);
        prop_assert_eq!(a.reset(seed), b.reset(seed));
        for p in &seq {
            let (x, y) = (a.step(&actions(p)).unwrap(), b.step(&actions(p)).unwrap());
            for (u, v) in x.agents.iter().zip(&y.agents) {
                prop_assert_eq!(u.reward.to_bits(), v.reward.to_bits());
                prop_assert_eq!(&u.observation, &v.observation);
            }
        }
    }

    #[test]
    fn more_power_never_hurts_self_or_helps_others(p in prop::array::uniform3(0.1f64..=4.0), bump in 0.0f64..1.0, who in 0usize..3) {
        let mut env = default_env(TrafficModel::backlogged(10));
        env.reset(0);
        let base = env.step(&actions(&p)).unwrap();
        env.reset(0);
        let mut q = p;
        q[who] += bump;
        let bumped = env.step(&actions(&q)).unwrap();
        prop_assert!(bumped.agents[who].success >= base.agents[who].success);
        for k in (0..3).filter(|&k| k != who) {
            prop_assert!(bumped.agents[k].success <= base.agents[k].success);
        }
    }

    #[test]
    fn out_of_range_actions_rejected(p in prop_oneof![-10.0f64..0.099, 5.001f64..100.0]) {
        let mut env = default_env(TrafficModel::backlogged(10));
        env.reset(0);
        prop_assert!(env.step(&actions(&[p, 1.0, 1.0])).is_err());
    }
}
