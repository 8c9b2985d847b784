mod common;

use cdmagym_core::aggregate::{aggregate, apply_aggregation, AggregationPolicy};
use cdmagym_core::neural::Activation;
use cdmagym_core::{DdpgAgent, DdpgConfig, MlpParams};
use common::seeded_mlp;
use proptest::prelude::*;

fn actor(seed: u64) -> MlpParams {
    seeded_mlp(&[6, 10, 1], Activation::Tanh, seed)
}

#[test]
fn weighted_sum_oracle() {
    let ps = [actor(1), actor(2), actor(3)];
    let w = [0.5, 0.3, 0.2];
    let got = aggregate(&[&ps[0], &ps[1], &ps[2]], &w).unwrap();
    for l in 0..2 {
        for (i, g) in got.weights[l].iter().enumerate() {
            let want = 0.5 * ps[0].weights[l][i] + 0.3 * ps[1].weights[l][i] + 0.2 * ps[2].weights[l][i];
            assert!((g - want).abs() < 1e-15);
        }
        for (i, g) in got.biases[l].iter().enumerate() {
            let want = 0.5 * ps[0].biases[l][i] + 0.3 * ps[1].biases[l][i] + 0.2 * ps[2].biases[l][i];
            assert!((g - want).abs() < 1e-15);
        }
    }
}

fn arb_weights(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.01f64..1.0, n).prop_map(|v| {
        let s: f64 = v.iter().sum();
        v.into_iter().map(|x| x / s).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn permutation_invariant(seed in 0u64..1000, w in arb_weights(3), rot in 0usize..3) {
        let ps = [actor(seed), actor(seed + 1), actor(seed + 2)];
        let a = aggregate(&[&ps[0], &ps[1], &ps[2]], &w).unwrap();
        let idx: Vec<usize> = (0..3).map(|i| (i + rot) % 3).collect();
        let pr: Vec<&MlpParams> = idx.iter().map(|&i| &ps[i]).collect();
        let wr: Vec<f64> = idx.iter().map(|&i| w[i]).collect();
        let b = aggregate(&pr, &wr).unwrap();
        for (x, y) in a.values().zip(b.values()) {
            prop_assert!((x - y).abs() < 1e-15);
        }
        prop_assert!(a.same_shape(&ps[0]));
    }

    #[test]
    fn one_hot_is_exact(seed in 0u64..1000, k in 0usize..3) {
        let ps = [actor(seed), actor(seed + 7), actor(seed + 9)];
        let mut w = vec![0.0; 3];
        w[k] = 1.0;
        prop_assert_eq!(aggregate(&[&ps[0], &ps[1], &ps[2]], &w).unwrap(), ps[k].clone());
    }

    #[test]
    fn after_firing_agents_coincide(seed in 0u64..1000, n in 2usize..5) {
        let mut agents: Vec<DdpgAgent> = (0..n)
            .map(|i| DdpgAgent::new(6, DdpgConfig::default(), 0.1, 5.0, seed + i as u64).unwrap())
            .collect();
        let w = vec![1.0 / n as f64; n];
        let ev = apply_aggregation(&mut agents, &AggregationPolicy::default(), 300, &w).unwrap();
        prop_assert!(ev.is_some());
        for a in &agents[1..] {
            let dist = a.actor.values().zip(agents[0].actor.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
            prop_assert_eq!(dist, 0.0);
            prop_assert_eq!(&a.actor_target, &agents[0].actor);
        }
    }
}
