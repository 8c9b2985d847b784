//! Independent oracles shared by the integration tests. Nothing here calls
//! into the library's numerics except to obtain values under test.

#![allow(dead_code, clippy::needless_range_loop)]

use cdmagym_core::neural::{Activation, MlpParams};
use cdmagym_core::NetworkScenario;

/// Straight-line forward pass written against the raw parameter layout.
pub fn naive_forward(p: &MlpParams, input: &[f64]) -> Vec<f64> {
    let mut x = input.to_vec();
    for l in 0..p.activations.len() {
        let (n_in, n_out) = (p.layer_dims[l], p.layer_dims[l + 1]);
        let mut y = vec![0.0; n_out];
        for o in 0..n_out {
            let mut z = p.biases[l][o];
            for i in 0..n_in {
                z += p.weights[l][o * n_in + i] * x[i];
            }
            y[o] = match p.activations[l] {
                Activation::Identity => z,
                Activation::Relu => z.max(0.0),
                Activation::Tanh => z.tanh(),
            };
        }
        x = y;
    }
    x
}

fn objective(p: &MlpParams, input: &[f64], upstream: &[f64]) -> f64 {
    naive_forward(p, input).iter().zip(upstream).map(|(y, c)| y * c).sum()
}

/// Central-difference gradient of `Σ c·y` with respect to every parameter,
/// in the `values()` order (per layer: weights, then biases).
pub fn finite_difference(p: &MlpParams, input: &[f64], upstream: &[f64], h: f64) -> Vec<f64> {
    let n = p.num_params();
    let mut out = Vec::with_capacity(n);
    let mut probe = p.clone();
    for k in 0..n {
        let orig = *probe.values().nth(k).unwrap();
        *probe.values_mut().nth(k).unwrap() = orig + h;
        let plus = objective(&probe, input, upstream);
        *probe.values_mut().nth(k).unwrap() = orig - h;
        let minus = objective(&probe, input, upstream);
        *probe.values_mut().nth(k).unwrap() = orig;
        out.push((plus - minus) / (2.0 * h));
    }
    out
}

/// Below this magnitude the comparison is effectively absolute: central
/// differences at `h = 1e-5` carry roughly `ε·|f|/h ≈ 1e-11` of rounding noise.
pub const GRAD_FLOOR: f64 = 1e-4;

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(GRAD_FLOOR)
}

/// Largest relative error between analytic and finite-difference parameter
/// gradients, plus the number of parameters compared.
pub fn gradient_check(p: &MlpParams, input: &[f64], upstream: &[f64], h: f64) -> (f64, usize) {
    let analytic: Vec<f64> = p.backward(input, upstream).unwrap().values().copied().collect();
    let numeric = finite_difference(p, input, upstream, h);
    assert_eq!(analytic.len(), numeric.len());
    let worst = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max);
    (worst, analytic.len())
}

/// `relu` hidden layers, `head` on the output.
pub fn seeded_mlp(dims: &[usize], head: Activation, seed: u64) -> MlpParams {
    use rand::SeedableRng;
    let mut acts = vec![Activation::Relu; dims.len() - 2];
    acts.push(head);
    MlpParams::init_uniform(dims, &acts, &mut rand_chacha::ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

/// Link gain written out from the definition.
pub fn gain(s: &NetworkScenario, tx: usize, rx: usize) -> f64 {
    let [x0, y0] = s.node_positions[tx];
    let [x1, y1] = s.node_positions[rx];
    let d = ((x0 - x1).powi(2) + (y0 - y1).powi(2)).sqrt();
    let tg = s.tx_gain_db.get(tx).copied().unwrap_or(0.0);
    let rg = s.rx_gain_db.get(rx).copied().unwrap_or(0.0);
    10f64.powf((tg + rg) / 10.0) * d.powf(-s.path_loss_exp)
}

/// SINR of every pair for the given per-pair powers, by summing all
/// cross-terms explicitly.
pub fn brute_sinr(s: &NetworkScenario, powers: &[f64]) -> Vec<f64> {
    s.pairs
        .iter()
        .enumerate()
        .map(|(k, &(tx, rx))| {
            let mut interference = 0.0;
            for (j, &(other_tx, _)) in s.pairs.iter().enumerate() {
                if j != k {
                    interference += powers[j] * gain(s, other_tx, rx);
                }
            }
            s.spreading_gain as f64 * powers[k] * gain(s, tx, rx) / (interference + s.noise_power)
        })
        .collect()
}

/// Interference pair `k` injects into every other pair's receiver.
pub fn brute_caused(s: &NetworkScenario, k: usize, power: f64) -> f64 {
    let tx = s.pairs[k].0;
    s.pairs
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != k)
        .map(|(_, &(_, rx))| power * gain(s, tx, rx))
        .sum()
}

/// Two pairs placed mirror-symmetrically.
pub fn symmetric_two_pair(noise: f64, threshold: f64) -> NetworkScenario {
    NetworkScenario {
        node_positions: vec![[0.0, 0.0], [6.0, 0.0], [0.0, 10.0], [6.0, 10.0]],
        pairs: vec![(0, 1), (2, 3)],
        path_loss_exp: 3.0,
        spreading_gain: 8,
        noise_power: noise,
        sinr_threshold: threshold,
        p_min: 0.1,
        p_max: 5.0,
        tx_gain_db: vec![],
        rx_gain_db: vec![],
    }
}

/// Brute-force search for the component-wise smallest power vector on an
/// `n × n` grid over `[p_min, p_max]²` at which both pairs meet the
/// threshold. Returns the grid point and the grid step.
pub fn grid_fixed_point(s: &NetworkScenario, n: usize) -> Option<([f64; 2], f64)> {
    let step = (s.p_max - s.p_min) / (n - 1) as f64;
    let at = |i: usize| s.p_min + step * i as f64;
    let mut best: Option<([f64; 2], f64)> = None;
    for i in 0..n {
        for j in 0..n {
            let p = [at(i), at(j)];
            let g = brute_sinr(s, &p);
            if g[0] >= s.sinr_threshold && g[1] >= s.sinr_threshold {
                let total = p[0] + p[1];
                if best.is_none_or(|(_, t)| total < t) {
                    best = Some((p, total));
                }
            }
        }
    }
    best.map(|(p, _)| (p, step))
}
