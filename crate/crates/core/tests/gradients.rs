mod common;

use cdmagym_core::neural::{adam_step, soft_update, Activation, AdamConfig, AdamState, MlpParams};
use common::{gradient_check, naive_forward, seeded_mlp};
use proptest::prelude::*;

#[test]
fn small_tanh_net_matches_finite_differences() {
    let p = seeded_mlp(&[3, 5, 2], Activation::Tanh, 11);
    let (worst, n) = gradient_check(&p, &[0.3, -0.7, 0.2], &[1.0, -0.5], 1e-5);
    assert_eq!(n, 3 * 5 + 5 + 5 * 2 + 2);
    assert!(worst < 1e-6, "max relative error {worst:e}");
}

#[test]
fn input_gradient_matches_finite_differences() {
    let p = seeded_mlp(&[4, 16, 32, 1], Activation::Identity, 5);
    let x = [0.1, 0.4, -0.3, 0.9];
    let g = p.input_gradient(&x, &[1.0]).unwrap();
    let h = 1e-5;
    for i in 0..4 {
        let mut xp = x;
        let mut xm = x;
        xp[i] += h;
        xm[i] -= h;
        let fd = (naive_forward(&p, &xp)[0] - naive_forward(&p, &xm)[0]) / (2.0 * h);
        assert!(common::relative_error(g[i], fd) < 1e-6, "input {i}: {} vs {fd}", g[i]);
    }
}

#[test]
fn forward_matches_naive_reference() {
    let p = seeded_mlp(&[10, 16, 32, 32, 256, 1], Activation::Identity, 3);
    let x: Vec<f64> = (0..10).map(|i| (i as f64 * 0.37).sin()).collect();
    let got = p.forward(&x).unwrap();
    let want = naive_forward(&p, &x);
    assert!((got[0] - want[0]).abs() <= 1e-12 * want[0].abs().max(1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn soft_update_is_convex_blend(seed in 0u64..1000, tau in 0.0f64..=1.0) {
        let online = seeded_mlp(&[3, 4, 1], Activation::Tanh, seed);
        let before = seeded_mlp(&[3, 4, 1], Activation::Tanh, seed + 1);
        let mut target = before.clone();
        soft_update(&mut target, &online, tau).unwrap();
        prop_assert!(target.same_shape(&before));
        for ((t, b), o) in target.values().zip(before.values()).zip(online.values()) {
            let want = tau * o + (1.0 - tau) * b;
            prop_assert!((t - want).abs() <= 1e-15);
        }
    }

    #[test]
    fn adam_first_step_moves_each_parameter_by_lr(seed in 0u64..1000) {
        let mut p = seeded_mlp(&[2, 3, 1], Activation::Identity, seed);
        let before = p.clone();
        let grads = p.backward(&[0.5, -0.25], &[1.0]).unwrap();
        let cfg = AdamConfig::with_lr(1e-3);
        let mut state = AdamState::new(&p);
        adam_step(&mut p, &grads, &mut state, &cfg).unwrap();
        // Bias correction makes the first step lr·g/(|g| + ε) per coordinate.
        for ((a, b), g) in p.values().zip(before.values()).zip(grads.values()) {
            let expect = -cfg.lr * g / (g.abs() + cfg.eps);
            prop_assert!((a - b - expect).abs() < 1e-15, "{} vs {}", a - b, expect);
        }
    }

    #[test]
    fn relu_net_gradients_hold_off_kinks(seed in 0u64..200) {
        let p = seeded_mlp(&[4, 8, 1], Activation::Tanh, seed);
        let x = [0.2, -0.4, 0.6, 0.8];
        let (worst, _) = gradient_check(&p, &x, &[1.0], 1e-5);
        prop_assert!(worst < 1e-6, "{worst:e}");
    }
}

#[test]
fn zero_network_outputs_head_of_zero() {
    let p = MlpParams::zeros(&[9, 10, 1], &[Activation::Relu, Activation::Tanh]).unwrap();
    assert_eq!(p.forward(&[1.0; 9]).unwrap(), vec![0.0]);
}
