//! Periodic model aggregation across agents.
//!
//! Every `period` steps the online actors (optionally critics too) of all
//! participants are replaced by their elementwise convex combination, and
//! each target network is reset to the same combination.

use serde::{Deserialize, Serialize};

use crate::agent::{DdpgAgent, TrainingLog};
use crate::error::{Error, Result};
use crate::neural::MlpParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationScope {
    ActorsOnly,
    ActorsAndCritics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Weighting {
    Uniform,
    /// Softmax of each participant's mean reward over the last `window` steps.
    RewardWeighted { window: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AggregationPolicy {
    pub period: usize,
    pub scope: AggregationScope,
    pub weighting: Weighting,
}

impl Default for AggregationPolicy {
    fn default() -> Self {
        AggregationPolicy {
            period: 100,
            scope: AggregationScope::ActorsOnly,
            weighting: Weighting::Uniform,
        }
    }
}

impl AggregationPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.period == 0 {
            return Err(Error::InvalidArgument("aggregation period must be >= 1".into()));
        }
        if let Weighting::RewardWeighted { window: 0 } = self.weighting {
            return Err(Error::InvalidArgument("reward window must be >= 1".into()));
        }
        Ok(())
    }

    pub fn fires_at(&self, step_index: usize) -> bool {
        step_index >= 1 && step_index.is_multiple_of(self.period)
    }

    /// Participant weights at `step` for the agents logged in `log`.
    pub fn participant_weights(&self, log: &TrainingLog, step: usize) -> Vec<f64> {
        let n = log.rewards.len();
        let means: Vec<f64> = match self.weighting {
            Weighting::Uniform => return vec![1.0 / n as f64; n],
            Weighting::RewardWeighted { window } => {
                (0..n).map(|a| log.window_mean(a, step, window)).collect()
            }
        };
        softmax(&means)
    }
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Logged whenever an aggregation fires.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregationEvent {
    pub step: usize,
    pub scope: AggregationScope,
    pub participants: usize,
}

impl AggregationEvent {
    pub const CSV_HEADER: &'static str = "step,scope,participants";

    pub fn to_csv_row(&self) -> String {
        let scope = match self.scope {
            AggregationScope::ActorsOnly => "actors_only",
            AggregationScope::ActorsAndCritics => "actors_and_critics",
        };
        format!("{},{},{}", self.step, scope, self.participants)
    }
}

/// Elementwise `Σ_k w_k θ_k`.
pub fn aggregate(params: &[&MlpParams], weights: &[f64]) -> Result<MlpParams> {
    let first = *params
        .first()
        .ok_or_else(|| Error::InvalidWeights("no participants".into()))?;
    if params.len() != weights.len() {
        return Err(Error::InvalidWeights(format!(
            "{} weights for {} participants",
            weights.len(),
            params.len()
        )));
    }
    if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::InvalidWeights(format!("negative or non-finite weight in {weights:?}")));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidWeights(format!("weights sum to {sum}, not 1")));
    }
    first.validate()?;
    for p in &params[1..] {
        if !p.same_shape(first) {
            return Err(Error::ShapeMismatch {
                context: "aggregated network",
                expected: first.num_params(),
                got: p.num_params(),
            });
        }
        p.validate()?;
    }

    let mut out = first.clone();
    out.values_mut().for_each(|v| *v = 0.0);
    for (p, &w) in params.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (o, &v) in out.values_mut().zip(p.values()) {
            *o += w * v;
        }
    }
    // A one-hot weight vector reproduces its participant exactly.
    if let Some(k) = weights.iter().position(|&w| w == 1.0) {
        out.clone_from(params[k]);
    }
    Ok(out)
}

/// Installs the aggregate of `agents` as every agent's online and target
/// networks (within `scope`).
pub fn install_aggregate(
    agents: &mut [&mut DdpgAgent],
    scope: AggregationScope,
    weights: &[f64],
) -> Result<()> {
    let actors: Vec<&MlpParams> = agents.iter().map(|a| &a.actor).collect();
    let actor = aggregate(&actors, weights)?;
    let critic = match scope {
        AggregationScope::ActorsOnly => None,
        AggregationScope::ActorsAndCritics => {
            let critics: Vec<&MlpParams> = agents.iter().map(|a| &a.critic).collect();
            Some(aggregate(&critics, weights)?)
        }
    };
    for a in agents.iter_mut() {
        a.actor.clone_from(&actor);
        a.actor_target.clone_from(&actor);
        if let Some(c) = &critic {
            a.critic.clone_from(c);
            a.critic_target.clone_from(c);
        }
    }
    Ok(())
}

/// Aggregates when `policy` fires at `step_index`; otherwise leaves the agents
/// untouched.
pub fn apply_aggregation(
    agents: &mut [DdpgAgent],
    policy: &AggregationPolicy,
    step_index: usize,
    weights: &[f64],
) -> Result<Option<AggregationEvent>> {
    if !policy.fires_at(step_index) || agents.is_empty() {
        return Ok(None);
    }
    let mut refs: Vec<&mut DdpgAgent> = agents.iter_mut().collect();
    install_aggregate(&mut refs, policy.scope, weights)?;
    Ok(Some(AggregationEvent {
        step: step_index,
        scope: policy.scope,
        participants: agents.len(),
    }))
}
