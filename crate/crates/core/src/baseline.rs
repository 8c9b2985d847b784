//! Distributed constrained power control (DCPC).
//!
//! Each transmitter scales its power by `Γ*/Γ` using the SINR returned in the
//! receiver's ACK and clamps to `[p_min, p_max]`. Without an ACK the SINR is
//! unknown and the transmitter re-acquires at `p_max`.

use crate::env::{ActionValue, CdmaEnv, Trajectory};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DcpcState {
    pub power: Vec<f64>,
    pub target_sinr: f64,
    pub p_min: f64,
    pub p_max: f64,
}

impl DcpcState {
    pub fn new(n_pairs: usize, initial: f64, target_sinr: f64, p_min: f64, p_max: f64) -> Result<Self> {
        if !(p_min < p_max) || !(target_sinr > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "DCPC needs p_min < p_max and a positive target, got [{p_min}, {p_max}], {target_sinr}"
            )));
        }
        Ok(DcpcState {
            power: vec![initial.clamp(p_min, p_max); n_pairs],
            target_sinr,
            p_min,
            p_max,
        })
    }

    /// `p ← clamp(p·Γ*/Γ, p_min, p_max)` for every pair with a measurement.
    ///
    /// `None` leaves that pair alone. Non-positive measurements are rejected
    /// with [`Error::Measurement`]; the remaining pairs are still updated.
    pub fn update(&mut self, measured_sinr: &[Option<f64>]) -> Result<()> {
        if measured_sinr.len() != self.power.len() {
            return Err(Error::ShapeMismatch {
                context: "SINR measurements",
                expected: self.power.len(),
                got: measured_sinr.len(),
            });
        }
        let mut rejected = Vec::new();
        for (k, m) in measured_sinr.iter().enumerate() {
            match *m {
                None => {}
                Some(g) if g > 0.0 && g.is_finite() => {
                    self.power[k] = (self.power[k] * self.target_sinr / g).clamp(self.p_min, self.p_max);
                }
                Some(_) => rejected.push(k),
            }
        }
        if rejected.is_empty() {
            Ok(())
        } else {
            Err(Error::Measurement(rejected))
        }
    }

    /// No ACK came back for `pair`: escalate to full power.
    pub fn escalate(&mut self, pair: usize) {
        self.power[pair] = self.p_max;
    }
}

/// Functional form of [`DcpcState::update`].
pub fn dcpc_update(state: &DcpcState, measured_sinr: &[Option<f64>]) -> Result<DcpcState> {
    let mut next = state.clone();
    next.update(measured_sinr)?;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DcpcRun {
    /// `powers[slot][pair]` used in each slot.
    pub powers: Vec<Vec<f64>>,
    /// `sinrs[slot][pair]`, `None` for idle pairs.
    pub sinrs: Vec<Vec<Option<f64>>>,
    pub trajectory: Trajectory,
    pub final_state: DcpcState,
}

impl DcpcRun {
    pub fn pdr(&self) -> f64 {
        self.trajectory.pdr()
    }

    pub fn average_power(&self) -> f64 {
        self.trajectory.average_power()
    }
}

/// Closed-loop DCPC over `n_slots`, starting every transmitter at
/// `initial_power`. The environment is reset with `seed`.
pub fn run_dcpc(env: &mut CdmaEnv, n_slots: usize, seed: u64, initial_power: f64) -> Result<DcpcRun> {
    if n_slots == 0 {
        return Err(Error::InvalidArgument("run_dcpc needs at least one slot".into()));
    }
    let s = env.scenario();
    let mut state = DcpcState::new(env.num_agents(), initial_power, s.sinr_threshold, s.p_min, s.p_max)?;
    env.reset(seed);
    let mut run = DcpcRun {
        powers: Vec::with_capacity(n_slots),
        sinrs: Vec::with_capacity(n_slots),
        trajectory: Trajectory::default(),
        final_state: state.clone(),
    };
    let mut measured = vec![None; env.num_agents()];
    for _ in 0..n_slots {
        let actions: Vec<ActionValue> = state.power.iter().map(|&p| ActionValue(p)).collect();
        let out = env.step(&actions)?;
        run.powers.push(state.power.clone());
        run.sinrs.push(out.agents.iter().map(|a| a.sinr).collect());
        run.trajectory.push_outcome(&out);
        for (k, a) in out.agents.iter().enumerate() {
            measured[k] = None;
            if a.transmitted {
                if a.success {
                    measured[k] = a.sinr;
                } else {
                    state.escalate(k);
                }
            }
        }
        state.update(&measured)?;
    }
    run.final_state = state;
    Ok(run)
}
