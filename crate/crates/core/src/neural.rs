//! Dense feed-forward networks with exact reverse-mode gradients.
//!
//! Weights are stored row-major per layer: `weights[l][o * in_dim + i]`
//! connects input `i` to output `o`.

use rand::Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative_at_output(self, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }

    pub fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Weights, biases and activations of a dense network.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layer_dims: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub activations: Vec<Activation>,
}

/// Hidden widths of the actor: one hidden layer of 10 units.
pub const ACTOR_HIDDEN: [usize; 1] = [10];
/// Hidden widths of the critic.
pub const CRITIC_HIDDEN: [usize; 4] = [16, 32, 32, 256];

impl MlpParams {
    pub fn zeros(layer_dims: &[usize], activations: &[Activation]) -> Result<Self> {
        check_dims(layer_dims, activations)?;
        let weights = layer_dims
            .windows(2)
            .map(|w| vec![0.0; w[0] * w[1]])
            .collect();
        let biases = layer_dims[1..].iter().map(|&n| vec![0.0; n]).collect();
        Ok(MlpParams {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            activations: activations.to_vec(),
        })
    }

    /// Every weight and bias drawn uniformly from `±1/√fan_in`.
    pub fn init_uniform<R: Rng + ?Sized>(
        layer_dims: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        let mut params = Self::zeros(layer_dims, activations)?;
        for ((w, b), &fan_in) in params.weights.iter_mut().zip(&mut params.biases).zip(layer_dims) {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for w in w.iter_mut().chain(b.iter_mut()) {
                *w = rng.random_range(-bound..=bound);
            }
        }
        Ok(params)
    }

    /// `[input_dim, 10, 1]`, relu hidden, tanh head.
    pub fn actor<R: Rng + ?Sized>(input_dim: usize, rng: &mut R) -> Result<Self> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(&ACTOR_HIDDEN);
        dims.push(1);
        let mut acts = vec![Activation::Relu; ACTOR_HIDDEN.len()];
        acts.push(Activation::Tanh);
        Self::init_uniform(&dims, &acts, rng)
    }

    /// `[state_dim + 1, 16, 32, 32, 256, 1]`, relu hidden, identity head.
    pub fn critic<R: Rng + ?Sized>(state_dim: usize, rng: &mut R) -> Result<Self> {
        let mut dims = vec![state_dim + 1];
        dims.extend_from_slice(&CRITIC_HIDDEN);
        dims.push(1);
        let mut acts = vec![Activation::Relu; CRITIC_HIDDEN.len()];
        acts.push(Activation::Identity);
        Self::init_uniform(&dims, &acts, rng)
    }

    pub fn num_layers(&self) -> usize {
        self.activations.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn max_width(&self) -> usize {
        self.layer_dims.iter().copied().max().unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    /// Checks weight and bias shapes against `layer_dims`.
    pub fn validate(&self) -> Result<()> {
        check_dims(&self.layer_dims, &self.activations)?;
        if self.weights.len() != self.num_layers() || self.biases.len() != self.num_layers() {
            return Err(Error::ShapeMismatch {
                context: "layer count",
                expected: self.num_layers(),
                got: self.weights.len().min(self.biases.len()),
            });
        }
        for l in 0..self.num_layers() {
            let (i, o) = (self.layer_dims[l], self.layer_dims[l + 1]);
            if self.weights[l].len() != i * o {
                return Err(Error::ShapeMismatch {
                    context: "weight matrix",
                    expected: i * o,
                    got: self.weights[l].len(),
                });
            }
            if self.biases[l].len() != o {
                return Err(Error::ShapeMismatch {
                    context: "bias vector",
                    expected: o,
                    got: self.biases[l].len(),
                });
            }
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &MlpParams) -> bool {
        self.layer_dims == other.layer_dims && self.activations == other.activations
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let mut trace = Trace::new(self);
        self.forward_traced(input, &mut trace)?;
        Ok(trace.output().to_vec())
    }

    /// Forward pass that keeps every layer output in `trace` for a later
    /// [`MlpParams::backward_traced`].
    pub fn forward_traced(&self, input: &[f64], trace: &mut Trace) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                context: "network input",
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        if input.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("network input"));
        }
        trace.ensure(self);
        trace.acts[0].copy_from_slice(input);
        for l in 0..self.num_layers() {
            let (prev, rest) = trace.acts.split_at_mut(l + 1);
            dense(
                &self.weights[l],
                &self.biases[l],
                self.activations[l],
                &prev[l],
                &mut rest[0],
            );
        }
        Ok(())
    }

    /// Accumulates `∂(output · upstream)/∂θ` into `grads` (when given) and,
    /// when asked, writes the gradient with respect to the network input.
    ///
    /// `trace` must hold the forward pass of the same input.
    pub fn backward_traced(
        &self,
        trace: &mut Trace,
        upstream: &[f64],
        mut grads: Option<&mut GradientSet>,
        input_grad: Option<&mut [f64]>,
    ) -> Result<()> {
        if upstream.len() != self.output_dim() {
            return Err(Error::ShapeMismatch {
                context: "upstream gradient",
                expected: self.output_dim(),
                got: upstream.len(),
            });
        }
        if let Some(g) = grads.as_deref() {
            if !g.congruent(self) {
                return Err(Error::ShapeMismatch {
                    context: "gradient set",
                    expected: self.num_params(),
                    got: g.num_params(),
                });
            }
        }
        let Trace { acts, delta, next } = trace;
        delta.clear();
        delta.extend_from_slice(upstream);
        for l in (0..self.num_layers()).rev() {
            let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let out = &acts[l + 1];
            let inp = &acts[l];
            for o in 0..n_out {
                delta[o] *= self.activations[l].derivative_at_output(out[o]);
            }
            if let Some(g) = grads.as_deref_mut() {
                let (gw, gb) = (&mut g.weights[l], &mut g.biases[l]);
                for o in 0..n_out {
                    let d = delta[o];
                    gb[o] += d;
                    if d != 0.0 {
                        let row = &mut gw[o * n_in..(o + 1) * n_in];
                        for (g, x) in row.iter_mut().zip(inp) {
                            *g += d * x;
                        }
                    }
                }
            }
            if l == 0 && input_grad.is_none() {
                break;
            }
            next.clear();
            next.resize(n_in, 0.0);
            let w = &self.weights[l];
            for o in 0..n_out {
                let d = delta[o];
                if d != 0.0 {
                    for (n, wv) in next.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *n += d * wv;
                    }
                }
            }
            std::mem::swap(delta, next);
        }
        if let Some(dst) = input_grad {
            if dst.len() != self.input_dim() {
                return Err(Error::ShapeMismatch {
                    context: "input gradient",
                    expected: self.input_dim(),
                    got: dst.len(),
                });
            }
            dst.copy_from_slice(delta);
        }
        Ok(())
    }

    /// Exact gradient of `output · upstream` with respect to every parameter.
    pub fn backward(&self, input: &[f64], upstream: &[f64]) -> Result<GradientSet> {
        let mut trace = Trace::new(self);
        self.forward_traced(input, &mut trace)?;
        let mut grads = GradientSet::zeros_like(self);
        self.backward_traced(&mut trace, upstream, Some(&mut grads), None)?;
        Ok(grads)
    }

    /// Gradient of `output · upstream` with respect to the input vector.
    pub fn input_gradient(&self, input: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        let mut trace = Trace::new(self);
        self.forward_traced(input, &mut trace)?;
        let mut out = vec![0.0; self.input_dim()];
        self.backward_traced(&mut trace, upstream, None, Some(&mut out))?;
        Ok(out)
    }
}

fn check_dims(layer_dims: &[usize], activations: &[Activation]) -> Result<()> {
    if layer_dims.len() < 2 {
        return Err(Error::InvalidArgument(
            "a network needs at least an input and an output dimension".into(),
        ));
    }
    if layer_dims.contains(&0) {
        return Err(Error::InvalidArgument("layer widths must be positive".into()));
    }
    if activations.len() != layer_dims.len() - 1 {
        return Err(Error::ShapeMismatch {
            context: "activation list",
            expected: layer_dims.len() - 1,
            got: activations.len(),
        });
    }
    Ok(())
}

#[inline]
fn dense(w: &[f64], b: &[f64], act: Activation, input: &[f64], out: &mut [f64]) {
    let n_in = input.len();
    for (o, y) in out.iter_mut().enumerate() {
        let row = &w[o * n_in..(o + 1) * n_in];
        let z = row.iter().zip(input).fold(b[o], |acc, (w, x)| acc + w * x);
        *y = act.apply(z);
    }
}

/// Reusable per-layer activations and backprop scratch.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    next: Vec<f64>,
}

impl Trace {
    pub fn new(params: &MlpParams) -> Self {
        let mut t = Trace::default();
        t.ensure(params);
        t
    }

    fn ensure(&mut self, params: &MlpParams) {
        let fits = self.acts.len() == params.layer_dims.len()
            && self.acts.iter().zip(&params.layer_dims).all(|(a, &d)| a.len() == d);
        if !fits {
            self.acts = params.layer_dims.iter().map(|&d| vec![0.0; d]).collect();
            self.delta = Vec::with_capacity(params.max_width());
            self.next = Vec::with_capacity(params.max_width());
        }
    }

    pub fn output(&self) -> &[f64] {
        self.acts.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Gradients with the same shapes as an [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(params: &MlpParams) -> Self {
        GradientSet {
            weights: params.weights.iter().map(|w| vec![0.0; w.len()]).collect(),
            biases: params.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn congruent(&self, params: &MlpParams) -> bool {
        self.weights.len() == params.weights.len()
            && self.biases.len() == params.biases.len()
            && self.weights.iter().zip(&params.weights).all(|(a, b)| a.len() == b.len())
            && self.biases.iter().zip(&params.biases).all(|(a, b)| a.len() == b.len())
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| w.iter().chain(b.iter()))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub fn fill_zero(&mut self) {
        self.values_mut().for_each(|g| *g = 0.0);
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|g| g.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: GradientSet,
    pub v: GradientSet,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        AdamState {
            m: GradientSet::zeros_like(params),
            v: GradientSet::zeros_like(params),
            t: 0,
        }
    }
}

/// One bias-corrected adaptive-moment update of `params` along `-grads`.
pub fn adam_step(
    params: &mut MlpParams,
    grads: &GradientSet,
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if !(cfg.lr > 0.0) {
        return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {}", cfg.lr)));
    }
    if !grads.congruent(params) || !state.m.congruent(params) {
        return Err(Error::ShapeMismatch {
            context: "adam update",
            expected: params.num_params(),
            got: grads.num_params(),
        });
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("gradient"));
    }
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let it = params
        .values_mut()
        .zip(grads.values())
        .zip(state.m.values_mut().zip(state.v.values_mut()));
    for ((p, &g), (m, v)) in it {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// `target ← τ·online + (1−τ)·target`, elementwise.
pub fn soft_update(target: &mut MlpParams, online: &MlpParams, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("tau must lie in [0, 1], got {tau}")));
    }
    if !target.same_shape(online) {
        return Err(Error::ShapeMismatch {
            context: "soft update",
            expected: target.num_params(),
            got: online.num_params(),
        });
    }
    if tau == 1.0 {
        target.clone_from(online);
        return Ok(());
    }
    if tau == 0.0 {
        return Ok(());
    }
    for (t, &o) in target.values_mut().zip(online.values()) {
        *t = tau * o + (1.0 - tau) * *t;
    }
    Ok(())
}
