//! Per-pair DDPG learners and the multi-agent training loop.

use std::borrow::Borrow;
use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::aggregate::{self, AggregationEvent, AggregationPolicy};
use crate::derive_seed;
use crate::env::{ActionValue, CdmaEnv};
use crate::error::{DivergenceSnapshot, Error, Result};
use crate::neural::{adam_step, soft_update, AdamConfig, AdamState, GradientSet, MlpParams, Trace};

/// Truncated discounted return `Σ γ^i r_i`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::InvalidArgument(format!(
            "discount must lie in [0, 1), got {gamma}"
        )));
    }
    // Horner from the tail: r0 + γ(r1 + γ(r2 + ...)).
    Ok(rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdpgConfig {
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    /// Steps of uniform random actions before learning starts.
    pub warmup_steps: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    /// Exploration std at the first step, in normalized action units.
    pub noise_start: f64,
    /// Exploration std at the last step.
    pub noise_end: f64,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        DdpgConfig {
            gamma: 0.99,
            tau: 0.005,
            batch_size: 64,
            replay_capacity: 100_000,
            warmup_steps: 500,
            lr_actor: 1e-4,
            lr_critic: 1e-3,
            noise_start: 0.3,
            noise_end: 0.05,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return bad("need 0 < batch_size <= replay_capacity".into());
        }
        if !(self.lr_actor > 0.0 && self.lr_critic > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if self.noise_start < 0.0 || self.noise_end < 0.0 {
            return bad("exploration noise must be non-negative".into());
        }
        Ok(())
    }
}

/// One `(s, a, s', r)` transition. `action` is the normalized actor output.
#[derive(Debug, Clone, PartialEq)]
pub struct Experience {
    pub state: Vec<f64>,
    pub action: f64,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

/// Fixed-capacity FIFO store with uniform sampling without replacement.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<Experience>,
    rng: ChaCha8Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        ReplayBuffer {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, exp: Experience) {
        if self.capacity == 0 {
            return;
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(exp);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.items.iter()
    }

    /// `batch` distinct entries, or `None` if fewer are stored.
    pub fn sample(&mut self, batch: usize) -> Option<Vec<&Experience>> {
        if batch == 0 || batch > self.items.len() {
            return None;
        }
        let idx = rand::seq::index::sample(&mut self.rng, self.items.len(), batch);
        Some(idx.iter().map(|i| &self.items[i]).collect())
    }
}

/// Diagnostics of one learning update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainStats {
    pub critic_loss: f64,
    /// Mean `Q(s, μ(s))` over the batch before the actor update.
    pub actor_objective: f64,
}

/// Actor, critic, their targets and the replay memory for one pair.
#[derive(Debug, Clone)]
pub struct DdpgAgent {
    pub actor: MlpParams,
    pub actor_target: MlpParams,
    pub critic: MlpParams,
    pub critic_target: MlpParams,
    pub actor_opt: AdamState,
    pub critic_opt: AdamState,
    pub config: DdpgConfig,
    pub noise_sigma: f64,
    pub replay: ReplayBuffer,
    pub p_min: f64,
    pub p_max: f64,
    rng: ChaCha8Rng,
    scratch: Scratch,
    updates: u64,
}

#[derive(Debug, Clone, Default)]
struct Scratch {
    actor: Trace,
    critic: Trace,
    critic_in: Vec<f64>,
    critic_in_grad: Vec<f64>,
    actor_grads: Option<GradientSet>,
    critic_grads: Option<GradientSet>,
    targets: Vec<f64>,
}

impl DdpgAgent {
    pub fn new(state_dim: usize, config: DdpgConfig, p_min: f64, p_max: f64, seed: u64) -> Result<Self> {
        config.validate()?;
        if !(p_min < p_max) {
            return Err(Error::InvalidArgument(format!("need p_min < p_max, got [{p_min}, {p_max}]")));
        }
        let mut init = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1));
        let actor = MlpParams::actor(state_dim, &mut init)?;
        let critic = MlpParams::critic(state_dim, &mut init)?;
        Ok(DdpgAgent {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor_opt: AdamState::new(&actor),
            critic_opt: AdamState::new(&critic),
            actor,
            critic,
            config,
            noise_sigma: config.noise_start,
            replay: ReplayBuffer::new(config.replay_capacity, derive_seed(seed, 2)),
            p_min,
            p_max,
            rng: ChaCha8Rng::seed_from_u64(derive_seed(seed, 3)),
            scratch: Scratch::default(),
            updates: 0,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.actor.input_dim()
    }

    /// Number of completed learning updates.
    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// Affine map of a normalized action in `[-1, 1]` to mW.
    pub fn power_from_unit(&self, u: f64) -> f64 {
        unit_to_power(u, self.p_min, self.p_max)
    }

    /// Deterministic actor output in `[-1, 1]`.
    pub fn policy_unit(&mut self, state: &[f64]) -> Result<f64> {
        self.actor.forward_traced(state, &mut self.scratch.actor)?;
        Ok(self.scratch.actor.output()[0])
    }

    /// Chooses a power; with `explore` Gaussian noise is added before
    /// clamping. Returns the power and the normalized action actually taken.
    pub fn act(&mut self, state: &[f64], explore: bool) -> Result<(ActionValue, f64)> {
        let mut u = self.policy_unit(state)?;
        if explore && self.noise_sigma > 0.0 {
            let normal = Normal::new(0.0, self.noise_sigma)
                .map_err(|e| Error::InvalidArgument(e.to_string()))?;
            u += normal.sample(&mut self.rng);
        }
        let u = u.clamp(-1.0, 1.0);
        Ok((ActionValue(self.power_from_unit(u)), u))
    }

    /// Uniform random normalized action, used during warmup.
    pub fn random_action(&mut self) -> (ActionValue, f64) {
        let u = self.rng.random_range(-1.0..=1.0);
        (ActionValue(self.power_from_unit(u)), u)
    }

    pub fn remember(&mut self, exp: Experience) {
        self.replay.push(exp);
    }

    /// Samples a batch from replay and learns from it, if enough is stored.
    pub fn train_from_replay(&mut self) -> Result<Option<TrainStats>> {
        let n = self.config.batch_size;
        let Some(batch) = self.replay.sample(n) else {
            return Ok(None);
        };
        // Detach the batch from the buffer borrow.
        let batch: Vec<Experience> = batch.into_iter().cloned().collect();
        self.train_step(&batch).map(Some)
    }

    /// One critic regression step toward `r + γ(1−done)Q'(s', μ'(s'))`, one
    /// deterministic policy-gradient step for the actor, then soft target
    /// updates.
    pub fn train_step<E: Borrow<Experience>>(&mut self, batch: &[E]) -> Result<TrainStats> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty training batch".into()));
        }
        let dim = self.state_dim();
        for e in batch {
            let e = e.borrow();
            if e.state.len() != dim || e.next_state.len() != dim {
                return Err(Error::ShapeMismatch {
                    context: "experience state",
                    expected: dim,
                    got: e.state.len().min(e.next_state.len()),
                });
            }
        }
        let b = batch.len() as f64;
        let gamma = self.config.gamma;
        let sc = &mut self.scratch;
        let mut critic_grads = sc
            .critic_grads
            .take()
            .unwrap_or_else(|| GradientSet::zeros_like(&self.critic));
        let mut actor_grads = sc
            .actor_grads
            .take()
            .unwrap_or_else(|| GradientSet::zeros_like(&self.actor));
        critic_grads.fill_zero();
        actor_grads.fill_zero();
        sc.critic_in.resize(dim + 1, 0.0);
        sc.critic_in_grad.resize(dim + 1, 0.0);

        sc.targets.clear();
        for e in batch {
            let e = e.borrow();
            let y = if e.terminal {
                e.reward
            } else {
                self.actor_target.forward_traced(&e.next_state, &mut sc.actor)?;
                let a_next = sc.actor.output()[0];
                sc.critic_in[..dim].copy_from_slice(&e.next_state);
                sc.critic_in[dim] = a_next;
                self.critic_target.forward_traced(&sc.critic_in, &mut sc.critic)?;
                e.reward + gamma * sc.critic.output()[0]
            };
            sc.targets.push(y);
        }

        let mut critic_loss = 0.0;
        for (e, &y) in batch.iter().zip(&sc.targets) {
            let e = e.borrow();
            sc.critic_in[..dim].copy_from_slice(&e.state);
            sc.critic_in[dim] = e.action;
            self.critic.forward_traced(&sc.critic_in, &mut sc.critic)?;
            let err = sc.critic.output()[0] - y;
            critic_loss += err * err / b;
            self.critic
                .backward_traced(&mut sc.critic, &[2.0 * err / b], Some(&mut critic_grads), None)?;
        }
        if !critic_loss.is_finite() || !critic_grads.is_finite() {
            return Err(self.divergence(critic_loss, "critic loss is not finite"));
        }
        let critic_cfg = AdamConfig::with_lr(self.config.lr_critic);
        adam_step(&mut self.critic, &critic_grads, &mut self.critic_opt, &critic_cfg)?;

        // Actor ascends Q(s, μ(s)): minimize −Q, gradient enters through the
        // action input of the critic.
        let sc = &mut self.scratch;
        let mut objective = 0.0;
        for e in batch {
            let e = e.borrow();
            self.actor.forward_traced(&e.state, &mut sc.actor)?;
            let u = sc.actor.output()[0];
            sc.critic_in[..dim].copy_from_slice(&e.state);
            sc.critic_in[dim] = u;
            self.critic.forward_traced(&sc.critic_in, &mut sc.critic)?;
            objective += sc.critic.output()[0] / b;
            self.critic
                .backward_traced(&mut sc.critic, &[1.0], None, Some(&mut sc.critic_in_grad))?;
            let dq_du = sc.critic_in_grad[dim];
            self.actor
                .backward_traced(&mut sc.actor, &[-dq_du / b], Some(&mut actor_grads), None)?;
        }
        if !objective.is_finite() || !actor_grads.is_finite() {
            return Err(self.divergence(critic_loss, "actor gradient is not finite"));
        }
        let actor_cfg = AdamConfig::with_lr(self.config.lr_actor);
        adam_step(&mut self.actor, &actor_grads, &mut self.actor_opt, &actor_cfg)?;

        soft_update(&mut self.critic_target, &self.critic, self.config.tau)?;
        soft_update(&mut self.actor_target, &self.actor, self.config.tau)?;

        self.scratch.actor_grads = Some(actor_grads);
        self.scratch.critic_grads = Some(critic_grads);
        self.updates += 1;
        Ok(TrainStats {
            critic_loss,
            actor_objective: objective,
        })
    }

    fn divergence(&self, critic_loss: f64, reason: &str) -> Error {
        Error::Divergence {
            step: self.updates,
            reason: reason.to_string(),
            snapshot: Box::new(DivergenceSnapshot {
                actor: self.actor.clone(),
                critic: self.critic.clone(),
                critic_loss,
            }),
        }
    }
}

pub fn unit_to_power(u: f64, p_min: f64, p_max: f64) -> f64 {
    let p = p_min + (u + 1.0) * 0.5 * (p_max - p_min);
    p.clamp(p_min, p_max)
}

/// Knobs of a multi-agent training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingOptions {
    pub n_steps: usize,
    /// Slots per episode; buffers and histories are refreshed between them.
    pub episode_len: usize,
    pub aggregation: Option<AggregationPolicy>,
    pub seed: u64,
}

/// Per-step, per-agent record of a training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    /// `rewards[agent][step]`
    pub rewards: Vec<Vec<f64>>,
    pub powers: Vec<Vec<f64>>,
    pub successes: Vec<Vec<bool>>,
    pub aggregation_events: Vec<AggregationEvent>,
}

impl TrainingLog {
    fn new(n_agents: usize) -> Self {
        TrainingLog {
            rewards: vec![Vec::new(); n_agents],
            powers: vec![Vec::new(); n_agents],
            successes: vec![Vec::new(); n_agents],
            aggregation_events: Vec::new(),
        }
    }

    pub fn num_steps(&self) -> usize {
        self.rewards.first().map_or(0, Vec::len)
    }

    /// Mean reward of `agent` over the last `window` steps ending at `end`
    /// (exclusive).
    pub fn window_mean(&self, agent: usize, end: usize, window: usize) -> f64 {
        let r = &self.rewards[agent][..end.min(self.rewards[agent].len())];
        let start = r.len().saturating_sub(window);
        let w = &r[start..];
        if w.is_empty() {
            0.0
        } else {
            w.iter().sum::<f64>() / w.len() as f64
        }
    }

    /// CSV rows `step,agent_id,reward,power_mw,success`.
    pub fn csv_rows(&self) -> impl Iterator<Item = String> + '_ {
        (0..self.num_steps()).flat_map(move |t| {
            (0..self.rewards.len()).map(move |a| {
                format!(
                    "{},{},{},{},{}",
                    t,
                    a,
                    self.rewards[a][t],
                    self.powers[a][t],
                    u8::from(self.successes[a][t])
                )
            })
        })
    }

    pub const CSV_HEADER: &'static str = "step,agent_id,reward,power_mw,success";
}

/// Trailing moving average with window `w` (shorter at the start).
pub fn moving_average(xs: &[f64], w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(xs.len());
    let mut sum = 0.0;
    for i in 0..xs.len() {
        sum += xs[i];
        if i >= w {
            sum -= xs[i - w];
        }
        out.push(sum / (i + 1).min(w) as f64);
    }
    out
}

/// A training run that stopped early, with everything logged so far.
#[derive(Debug)]
pub struct TrainingFailure {
    pub error: Error,
    pub partial: TrainingLog,
}

impl std::fmt::Display for TrainingFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "training stopped after {} steps: {}", self.partial.num_steps(), self.error)
    }
}

impl std::error::Error for TrainingFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Stepwise driver of the observe → act → step → store → learn loop.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub env: CdmaEnv,
    pub agents: Vec<DdpgAgent>,
    pub options: TrainingOptions,
    pub log: TrainingLog,
    step: usize,
    episode: u64,
    states: Vec<Vec<f64>>,
}

impl Trainer {
    pub fn new(env: CdmaEnv, agents: Vec<DdpgAgent>, options: TrainingOptions) -> Result<Self> {
        if agents.len() != env.num_agents() {
            return Err(Error::ShapeMismatch {
                context: "agent count",
                expected: env.num_agents(),
                got: agents.len(),
            });
        }
        if options.episode_len == 0 {
            return Err(Error::InvalidArgument("episode_len must be >= 1".into()));
        }
        if let Some(p) = &options.aggregation {
            p.validate()?;
        }
        let log = TrainingLog::new(agents.len());
        let mut t = Trainer {
            env,
            agents,
            options,
            log,
            step: 0,
            episode: 0,
            states: Vec::new(),
        };
        t.begin_episode();
        Ok(t)
    }

    /// Agents for every pair of `env`, seeded from `seed`.
    pub fn default_agents(env: &CdmaEnv, config: DdpgConfig, seed: u64) -> Result<Vec<DdpgAgent>> {
        let s = env.scenario();
        let dim = crate::env::observation_dim(env.num_agents());
        (0..env.num_agents())
            .map(|i| DdpgAgent::new(dim, config, s.p_min, s.p_max, derive_seed(seed, 100 + i as u64)))
            .collect()
    }

    fn begin_episode(&mut self) {
        self.env.reset(derive_seed(self.options.seed, 10_000 + self.episode));
        self.episode += 1;
        self.states = (0..self.env.num_agents())
            .map(|i| self.env.observation_vector(i))
            .collect();
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.options.n_steps
    }

    /// One environment slot plus one learning update per agent. Does not
    /// aggregate; see [`Trainer::maybe_aggregate`].
    pub fn step_once(&mut self) -> Result<()> {
        let n_steps = self.options.n_steps.max(1);
        let frac = self.step as f64 / n_steps as f64;
        let warm = self.step < self.agents.first().map_or(0, |a| a.config.warmup_steps);
        let mut actions = Vec::with_capacity(self.agents.len());
        let mut units = Vec::with_capacity(self.agents.len());
        for (agent, state) in self.agents.iter_mut().zip(&self.states) {
            agent.noise_sigma =
                agent.config.noise_start + (agent.config.noise_end - agent.config.noise_start) * frac;
            let (a, u) = if warm {
                agent.random_action()
            } else {
                agent.act(state, true)?
            };
            actions.push(a);
            units.push(u);
        }
        let out = self.env.step(&actions)?;
        for (i, res) in out.agents.iter().enumerate() {
            self.log.rewards[i].push(res.reward);
            self.log.powers[i].push(res.power.unwrap_or(0.0));
            self.log.successes[i].push(res.success);
            let next = self.env.observation_vector(i);
            if res.transmitted {
                self.agents[i].remember(Experience {
                    state: std::mem::replace(&mut self.states[i], next),
                    action: units[i],
                    reward: res.reward,
                    next_state: self.env.observation_vector(i),
                    terminal: false,
                });
            } else {
                self.states[i] = next;
            }
        }
        if !warm {
            for agent in &mut self.agents {
                agent.train_from_replay()?;
            }
        }
        self.step += 1;
        if self.step.is_multiple_of(self.options.episode_len) && !self.is_finished() {
            self.begin_episode();
        }
        Ok(())
    }

    /// Applies the configured aggregation if the current step count is a
    /// multiple of its period.
    pub fn maybe_aggregate(&mut self) -> Result<()> {
        let Some(policy) = self.options.aggregation else {
            return Ok(());
        };
        let weights = policy.participant_weights(&self.log, self.step);
        if let Some(ev) = aggregate::apply_aggregation(&mut self.agents, &policy, self.step, &weights)? {
            self.log.aggregation_events.push(ev);
        }
        Ok(())
    }

    pub fn run(mut self) -> std::result::Result<TrainingRun, Box<TrainingFailure>> {
        while !self.is_finished() {
            let r = self.step_once().and_then(|_| self.maybe_aggregate());
            if let Err(error) = r {
                return Err(Box::new(TrainingFailure {
                    error,
                    partial: self.log,
                }));
            }
        }
        Ok(TrainingRun {
            log: self.log,
            agents: self.agents,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub log: TrainingLog,
    pub agents: Vec<DdpgAgent>,
}

/// Trains one freshly seeded agent per pair of `env`.
pub fn run_training(
    env: CdmaEnv,
    config: DdpgConfig,
    options: TrainingOptions,
) -> std::result::Result<TrainingRun, Box<TrainingFailure>> {
    let fail = |error| {
        Box::new(TrainingFailure {
            error,
            partial: TrainingLog::default(),
        })
    };
    let agents = Trainer::default_agents(&env, config, options.seed).map_err(fail)?;
    Trainer::new(env, agents, options).map_err(fail)?.run()
}
