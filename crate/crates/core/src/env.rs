//! Slotted multi-agent power-control environment.
//!
//! Every slot, each agent with a non-empty buffer transmits one packet at the
//! power it chose. A packet is delivered (and acknowledged) when the SINR at
//! its receiver reaches the scenario threshold. The ACK carries the SINR and
//! the interference sensed at the receiver back to the transmitter; without
//! an ACK the sensed interference in the next observation is `-1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netmodel::{self, NetworkScenario};

/// Sensed-interference value reported when no ACK arrived.
pub const NO_ACK: f64 = -1.0;

/// Relative slack on the SINR threshold test, so that a transmitter tuned to
/// exactly `Γ*` is not failed by the last bit of floating point rounding.
pub const SINR_REL_TOLERANCE: f64 = 1e-9;

/// Floor applied to calibrated divisors.
pub const MIN_DIVISOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TrafficMode {
    /// Every transmitter always has a packet queued.
    Backlogged,
    /// Poisson arrivals with the given mean packets per slot.
    Poisson { rate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficModel {
    #[serde(flatten)]
    pub mode: TrafficMode,
    pub initial_buffer: u32,
    /// Keep failed packets queued instead of dropping them.
    #[serde(default)]
    pub retransmit: bool,
}

impl TrafficModel {
    pub fn backlogged(initial_buffer: u32) -> Self {
        TrafficModel {
            mode: TrafficMode::Backlogged,
            initial_buffer,
            retransmit: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let TrafficMode::Poisson { rate } = self.mode {
            if !(rate >= 0.0 && rate.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "poisson arrival rate must be >= 0, got {rate}"
                )));
            }
        }
        Ok(())
    }

    fn start_buffer(&self) -> u32 {
        match self.mode {
            TrafficMode::Backlogged => self.initial_buffer.max(1),
            TrafficMode::Poisson { .. } => self.initial_buffer,
        }
    }
}

impl Default for TrafficModel {
    fn default() -> Self {
        TrafficModel::backlogged(10)
    }
}

/// Divisors that map raw SINR and interference into `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizers {
    pub sinr_divisor: f64,
    pub interference_divisor: f64,
}

impl Normalizers {
    pub fn new(sinr_divisor: f64, interference_divisor: f64) -> Result<Self> {
        let n = Normalizers {
            sinr_divisor,
            interference_divisor,
        };
        n.validate()?;
        Ok(n)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sinr_divisor > 0.0 && self.interference_divisor > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "normalizers must be positive, got {self:?}"
            )))
        }
    }
}

/// What one agent knows at the start of a slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// Own receiver first, then the other receivers by ascending node index.
    pub distances: Vec<f64>,
    pub buffer_len: u32,
    /// Interference the last transmission injected into foreign receivers.
    pub caused_interference: f64,
    /// Foreign power at the own receiver, or [`NO_ACK`].
    pub sensed_interference: f64,
}

/// A transmit power in mW.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct ActionValue(pub f64);

impl ActionValue {
    pub fn new(power: f64, scenario: &NetworkScenario) -> Result<Self> {
        if power >= scenario.p_min && power <= scenario.p_max {
            Ok(ActionValue(power))
        } else {
            Err(Error::ActionOutOfBounds {
                agent: usize::MAX,
                power,
                p_min: scenario.p_min,
                p_max: scenario.p_max,
            })
        }
    }

    pub fn power(self) -> f64 {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub transmitted: bool,
    pub success: bool,
    /// Transmit power used, `None` when the agent was idle.
    pub power: Option<f64>,
    pub sinr: Option<f64>,
    pub caused_interference: f64,
    /// Foreign power at the own receiver during the slot.
    pub sensed_interference: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub slot: u64,
    pub agents: Vec<AgentOutcome>,
}

/// One CSV row of a trajectory log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub slot: u64,
    pub agent: usize,
    pub power: f64,
    pub sinr: f64,
    pub success: bool,
    pub reward: f64,
    pub interference: f64,
}

impl TrajectoryRecord {
    pub const CSV_HEADER: &'static str = "slot,agent,power_mw,sinr,success,reward,interference_mw";

    /// Rows for every agent that transmitted in `outcome`.
    pub fn from_outcome(outcome: &StepOutcome) -> impl Iterator<Item = TrajectoryRecord> + '_ {
        outcome
            .agents
            .iter()
            .enumerate()
            .filter(|(_, a)| a.transmitted)
            .map(move |(i, a)| TrajectoryRecord {
                slot: outcome.slot,
                agent: i,
                power: a.power.unwrap_or(0.0),
                sinr: a.sinr.unwrap_or(0.0),
                success: a.success,
                reward: a.reward,
                interference: a.caused_interference,
            })
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.slot,
            self.agent,
            self.power,
            self.sinr,
            u8::from(self.success),
            self.reward,
            self.interference
        )
    }
}

/// Transmissions of a run, with delivery and power summaries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub records: Vec<TrajectoryRecord>,
}

impl Trajectory {
    pub fn push_outcome(&mut self, outcome: &StepOutcome) {
        self.records.extend(TrajectoryRecord::from_outcome(outcome));
    }

    pub fn transmissions(&self) -> usize {
        self.records.len()
    }

    pub fn successes(&self) -> usize {
        self.records.iter().filter(|r| r.success).count()
    }

    /// Delivered over transmitted packets; 0 when nothing was sent.
    pub fn pdr(&self) -> f64 {
        if self.records.is_empty() {
            0.0
        } else {
            self.successes() as f64 / self.records.len() as f64
        }
    }

    /// Mean transmit power per transmitted packet.
    pub fn average_power(&self) -> f64 {
        if self.records.is_empty() {
            0.0
        } else {
            self.records.iter().map(|r| r.power).sum::<f64>() / self.records.len() as f64
        }
    }

    pub fn agent(&self, agent: usize) -> Trajectory {
        Trajectory {
            records: self.records.iter().filter(|r| r.agent == agent).cloned().collect(),
        }
    }
}

/// Scale factors that turn an [`Observation`] into network input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureScaling {
    pub distance: f64,
    pub buffer: f64,
    pub interference: f64,
}

impl FeatureScaling {
    pub fn new(scenario: &NetworkScenario, traffic: &TrafficModel, norm: &Normalizers) -> Self {
        FeatureScaling {
            distance: scenario.diameter().max(MIN_DIVISOR),
            buffer: traffic.initial_buffer.max(1) as f64,
            interference: norm.interference_divisor,
        }
    }
}

/// `[distances…, buffer, caused, sensed]`, each scaled; the `-1` sentinel is
/// passed through unscaled.
pub fn observation_vector(obs: &Observation, scaling: &FeatureScaling) -> Vec<f64> {
    let mut out = Vec::with_capacity(obs.distances.len() + 3);
    write_observation_vector(obs, scaling, &mut out);
    out
}

pub fn write_observation_vector(obs: &Observation, scaling: &FeatureScaling, out: &mut Vec<f64>) {
    out.clear();
    out.extend(obs.distances.iter().map(|d| d / scaling.distance));
    out.push(obs.buffer_len as f64 / scaling.buffer);
    out.push(obs.caused_interference / scaling.interference);
    out.push(if obs.sensed_interference == NO_ACK {
        NO_ACK
    } else {
        obs.sensed_interference / scaling.interference
    });
}

/// Length of the flat observation vector for `n_pairs` agents.
pub fn observation_dim(n_pairs: usize) -> usize {
    n_pairs + 3
}

/// Native slotted simulator with a reset/step contract.
#[derive(Debug, Clone)]
pub struct CdmaEnv {
    scenario: NetworkScenario,
    traffic: TrafficModel,
    normalizers: Normalizers,
    scaling: FeatureScaling,
    distances: Vec<Vec<f64>>,
    rng: ChaCha8Rng,
    buffers: Vec<u32>,
    observations: Vec<Observation>,
    slot: u64,
    ready: bool,
    tx_powers: Vec<Option<f64>>,
}

impl CdmaEnv {
    pub fn new(scenario: NetworkScenario, traffic: TrafficModel, normalizers: Normalizers) -> Result<Self> {
        scenario.validate()?;
        traffic.validate()?;
        normalizers.validate()?;
        let mut distances = Vec::with_capacity(scenario.num_pairs());
        for &(tx, own_rx) in &scenario.pairs {
            let mut others: Vec<usize> = scenario
                .pairs
                .iter()
                .map(|&(_, rx)| rx)
                .filter(|&rx| rx != own_rx)
                .collect();
            others.sort_unstable();
            let mut row = vec![scenario.distance(tx, own_rx)?];
            for rx in others {
                row.push(scenario.distance(tx, rx)?);
            }
            distances.push(row);
        }
        let scaling = FeatureScaling::new(&scenario, &traffic, &normalizers);
        let n_nodes = scenario.num_nodes();
        Ok(CdmaEnv {
            scenario,
            traffic,
            normalizers,
            scaling,
            distances,
            rng: ChaCha8Rng::seed_from_u64(0),
            buffers: Vec::new(),
            observations: Vec::new(),
            slot: 0,
            ready: false,
            tx_powers: vec![None; n_nodes],
        })
    }

    pub fn scenario(&self) -> &NetworkScenario {
        &self.scenario
    }

    pub fn traffic(&self) -> &TrafficModel {
        &self.traffic
    }

    pub fn normalizers(&self) -> &Normalizers {
        &self.normalizers
    }

    pub fn scaling(&self) -> &FeatureScaling {
        &self.scaling
    }

    pub fn num_agents(&self) -> usize {
        self.scenario.num_pairs()
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }

    pub fn observation_vector(&self, agent: usize) -> Vec<f64> {
        observation_vector(&self.observations[agent], &self.scaling)
    }

    /// Refills buffers, clears interference history and reseeds the arrival
    /// process.
    pub fn reset(&mut self, seed: u64) -> Vec<Observation> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        let start = self.traffic.start_buffer();
        self.buffers = vec![start; self.num_agents()];
        self.observations = self
            .distances
            .iter()
            .map(|d| Observation {
                distances: d.clone(),
                buffer_len: start,
                caused_interference: 0.0,
                sensed_interference: NO_ACK,
            })
            .collect();
        self.slot = 0;
        self.ready = true;
        self.observations.clone()
    }

    pub fn step(&mut self, actions: &[ActionValue]) -> Result<StepOutcome> {
        if !self.ready {
            return Err(Error::NotReset);
        }
        let n = self.num_agents();
        if actions.len() != n {
            return Err(Error::ShapeMismatch {
                context: "action list",
                expected: n,
                got: actions.len(),
            });
        }
        let s = &self.scenario;
        for (agent, a) in actions.iter().enumerate() {
            if !(a.0 >= s.p_min && a.0 <= s.p_max) {
                return Err(Error::ActionOutOfBounds {
                    agent,
                    power: a.0,
                    p_min: s.p_min,
                    p_max: s.p_max,
                });
            }
        }

        self.tx_powers.iter_mut().for_each(|p| *p = None);
        for (k, &(tx, _)) in s.pairs.iter().enumerate() {
            if self.buffers[k] > 0 {
                self.tx_powers[tx] = Some(actions[k].0);
            }
        }

        let mut agents = Vec::with_capacity(n);
        for (k, &(tx, rx)) in s.pairs.iter().enumerate() {
            let Some(power) = self.tx_powers[tx] else {
                agents.push(AgentOutcome {
                    observation: Observation {
                        caused_interference: 0.0,
                        sensed_interference: NO_ACK,
                        ..self.observations[k].clone()
                    },
                    reward: 0.0,
                    transmitted: false,
                    success: false,
                    power: None,
                    sinr: None,
                    caused_interference: 0.0,
                    sensed_interference: netmodel::received_interference(s, rx, &self.tx_powers)?,
                });
                continue;
            };
            let gamma = netmodel::sinr(s, rx, &self.tx_powers)?;
            let caused = netmodel::caused_interference(s, tx, power)?;
            let sensed = netmodel::received_interference(s, rx, &self.tx_powers)?;
            let success = gamma >= s.sinr_threshold * (1.0 - SINR_REL_TOLERANCE);
            let reward = if success {
                (gamma / self.normalizers.sinr_divisor).min(1.0)
            } else {
                -(caused / self.normalizers.interference_divisor).min(1.0)
            };
            agents.push(AgentOutcome {
                observation: Observation {
                    caused_interference: caused,
                    sensed_interference: if success { sensed } else { NO_ACK },
                    ..self.observations[k].clone()
                },
                reward,
                transmitted: true,
                success,
                power: Some(power),
                sinr: Some(gamma),
                caused_interference: caused,
                sensed_interference: sensed,
            });
        }

        for (k, out) in agents.iter_mut().enumerate() {
            self.buffers[k] = self.next_buffer(self.buffers[k], out.transmitted, out.success);
            out.observation.buffer_len = self.buffers[k];
            self.observations[k] = out.observation.clone();
        }
        let slot = self.slot;
        self.slot += 1;
        Ok(StepOutcome { slot, agents })
    }

    fn next_buffer(&mut self, buffer: u32, transmitted: bool, success: bool) -> u32 {
        match self.traffic.mode {
            TrafficMode::Backlogged => buffer,
            TrafficMode::Poisson { rate } => {
                let mut b = buffer;
                if transmitted && (success || !self.traffic.retransmit) {
                    b -= 1;
                }
                if rate > 0.0 {
                    let arrivals: f64 = Poisson::new(rate)
                        .expect("rate validated at construction")
                        .sample(&mut self.rng);
                    b = b.saturating_add(arrivals as u32);
                }
                b
            }
        }
    }
}

/// Largest SINR and caused interference seen over `n_slots` of uniformly
/// random powers.
///
/// Powers come from `ChaCha8Rng::seed_from_u64(seed)`, one
/// `random_range(p_min..=p_max)` draw per agent per slot in agent order; the
/// environment itself is reset with the same seed.
pub fn calibrate_normalizers(
    scenario: &NetworkScenario,
    traffic: &TrafficModel,
    n_slots: usize,
    seed: u64,
) -> Result<Normalizers> {
    if n_slots == 0 {
        return Err(Error::InvalidArgument("calibration needs at least one slot".into()));
    }
    let mut env = CdmaEnv::new(scenario.clone(), *traffic, Normalizers::new(1.0, 1.0)?)?;
    env.reset(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_sinr = 0.0f64;
    let mut max_int = 0.0f64;
    let mut actions = vec![ActionValue(scenario.p_min); env.num_agents()];
    for _ in 0..n_slots {
        for a in actions.iter_mut() {
            *a = ActionValue(rng.random_range(scenario.p_min..=scenario.p_max));
        }
        let out = env.step(&actions)?;
        for a in out.agents.iter().filter(|a| a.transmitted) {
            max_sinr = max_sinr.max(a.sinr.unwrap_or(0.0));
            max_int = max_int.max(a.caused_interference);
        }
    }
    Normalizers::new(max_sinr.max(MIN_DIVISOR), max_int.max(MIN_DIVISOR))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single_pair() -> NetworkScenario {
        NetworkScenario {
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
        }
    }

    fn env(s: NetworkScenario, traffic: TrafficModel) -> CdmaEnv {
        CdmaEnv::new(s, traffic, Normalizers::new(1e9, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn reset_initial_observations() {
        let mut e = env(NetworkScenario::default_three_pair(), TrafficModel::backlogged(10));
        let obs = e.reset(3);
        assert_eq!(obs.len(), 3);
        for o in &obs {
            assert_eq!(o.buffer_len, 10);
            assert_eq!(o.caused_interference, 0.0);
            assert_eq!(o.sensed_interference, NO_ACK);
            assert_eq!(o.distances.len(), 3);
        }
        assert_eq!(obs, e.reset(3));
    }

    #[test]
    fn single_pair_shapes() {
        let mut e = env(single_pair(), TrafficModel::backlogged(1));
        let obs = e.reset(0);
        assert_eq!(obs[0].distances, vec![1.0]);
        assert_eq!(observation_vector(&obs[0], e.scaling()).len(), 4);
    }

    #[test]
    fn distance_ordering() {
        let mut e = env(NetworkScenario::default_three_pair(), TrafficModel::default());
        let obs = e.reset(0);
        let s = e.scenario().clone();
        // Agent 1 (tx node 2): own rx 3, then rx 1, rx 5.
        assert_eq!(
            obs[1].distances,
            vec![s.distance(2, 3).unwrap(), s.distance(2, 1).unwrap(), s.distance(2, 5).unwrap()]
        );
    }

    #[test]
    fn step_before_reset_fails() {
        let mut e = env(single_pair(), TrafficModel::default());
        assert!(matches!(e.step(&[ActionValue(1.0)]), Err(Error::NotReset)));
    }

    #[test]
    fn single_pair_success_reward() {
        let sd = 1e9;
        let mut e = CdmaEnv::new(single_pair(), TrafficModel::default(), Normalizers::new(sd, 1.0).unwrap())
            .unwrap();
        e.reset(0);
        let out = e.step(&[ActionValue(5.0)]).unwrap();
        let a = &out.agents[0];
        assert!(a.success);
        let gamma = 6.4e7 * 5.0;
        assert!((a.sinr.unwrap() - gamma).abs() / gamma < 1e-12);
        assert!((a.reward - (gamma / sd).min(1.0)).abs() < 1e-12);
        assert_eq!(a.observation.sensed_interference, 0.0);
    }

    #[test]
    fn out_of_bounds_action_rejected() {
        let mut e = env(single_pair(), TrafficModel::default());
        e.reset(0);
        assert!(matches!(
            e.step(&[ActionValue(5.5)]),
            Err(Error::ActionOutOfBounds { agent: 0, .. })
        ));
        assert!(e.step(&[ActionValue(0.05)]).is_err());
        assert!(ActionValue::new(0.05, &single_pair()).is_err());
    }

    #[test]
    fn idle_slot_when_buffers_empty() {
        let traffic = TrafficModel {
            mode: TrafficMode::Poisson { rate: 0.0 },
            initial_buffer: 0,
            retransmit: false,
        };
        let mut e = env(NetworkScenario::default_three_pair(), traffic);
        e.reset(0);
        let out = e.step(&[ActionValue(1.0); 3]).unwrap();
        for a in &out.agents {
            assert!(!a.transmitted);
            assert_eq!(a.reward, 0.0);
            assert_eq!(a.caused_interference, 0.0);
            assert_eq!(a.sensed_interference, 0.0);
        }
    }

    #[test]
    fn poisson_drop_and_retransmit() {
        // Threshold no transmitter can reach: every packet fails.
        let mut s = single_pair();
        s.sinr_threshold = 1e12;
        let drop = TrafficModel {
            mode: TrafficMode::Poisson { rate: 0.0 },
            initial_buffer: 2,
            retransmit: false,
        };
        let mut e = env(s.clone(), drop);
        e.reset(0);
        assert_eq!(e.step(&[ActionValue(1.0)]).unwrap().agents[0].observation.buffer_len, 1);
        assert_eq!(e.step(&[ActionValue(1.0)]).unwrap().agents[0].observation.buffer_len, 0);
        let out = e.step(&[ActionValue(1.0)]).unwrap();
        assert!(!out.agents[0].transmitted);

        let keep = TrafficModel { retransmit: true, ..drop };
        let mut e = env(s, keep);
        e.reset(0);
        for _ in 0..5 {
            assert_eq!(e.step(&[ActionValue(1.0)]).unwrap().agents[0].observation.buffer_len, 2);
        }
    }

    #[test]
    fn observation_vector_sentinel_and_scaling() {
        let obs = Observation {
            distances: vec![3.0, 6.0, 12.0],
            buffer_len: 5,
            caused_interference: 0.02,
            sensed_interference: NO_ACK,
        };
        let scaling = FeatureScaling {
            distance: 24.0,
            buffer: 10.0,
            interference: 0.04,
        };
        let v = observation_vector(&obs, &scaling);
        assert_eq!(v, vec![0.125, 0.25, 0.5, 0.5, 0.5, -1.0]);

        let acked = Observation {
            sensed_interference: 0.01,
            ..obs
        };
        assert_eq!(observation_vector(&acked, &scaling)[5], 0.25);
    }

    #[test]
    fn calibration_single_slot_matches_sample() {
        let s = single_pair();
        let n = calibrate_normalizers(&s, &TrafficModel::default(), 1, 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p: f64 = rng.random_range(s.p_min..=s.p_max);
        let gamma = netmodel::sinr(&s, 1, &[Some(p), None]).unwrap();
        assert_eq!(n.sinr_divisor, gamma);
        // Single pair injects no interference anywhere: floored divisor.
        assert_eq!(n.interference_divisor, MIN_DIVISOR);
    }

    #[test]
    fn calibration_is_deterministic() {
        let s = NetworkScenario::default_three_pair();
        let t = TrafficModel::default();
        assert_eq!(
            calibrate_normalizers(&s, &t, 200, 5).unwrap(),
            calibrate_normalizers(&s, &t, 200, 5).unwrap()
        );
        assert!(calibrate_normalizers(&s, &t, 0, 5).is_err());
    }

    #[test]
    fn trajectory_rows() {
        let mut e = env(single_pair(), TrafficModel::default());
        e.reset(0);
        let out = e.step(&[ActionValue(2.0)]).unwrap();
        let rows: Vec<_> = TrajectoryRecord::from_outcome(&out).collect();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].to_csv_row().starts_with("0,0,2,"));
        assert_eq!(TrajectoryRecord::CSV_HEADER.split(',').count(), rows[0].to_csv_row().split(',').count());
    }
}
