//! Radio channel and DS-CDMA SINR arithmetic over a static topology.
//!
//! Powers are in mW and distances in meters everywhere. The spreading code
//! matrix is reduced to its processing gain `L`: the desired signal is
//! amplified by `L` after despreading while every other active transmitter
//! contributes its full received power as interference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Static topology, channel constants and CDMA parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkScenario {
    pub node_positions: Vec<[f64; 2]>,
    /// `(tx_node, rx_node)` per transmit-receive pair.
    pub pairs: Vec<(usize, usize)>,
    pub path_loss_exp: f64,
    pub spreading_gain: u32,
    pub noise_power: f64,
    pub sinr_threshold: f64,
    pub p_min: f64,
    pub p_max: f64,
    /// Per-node transmit antenna gain in dB. Empty means 0 dB everywhere.
    #[serde(default)]
    pub tx_gain_db: Vec<f64>,
    /// Per-node receive antenna gain in dB. Empty means 0 dB everywhere.
    #[serde(default)]
    pub rx_gain_db: Vec<f64>,
}

/// Received-power multiplier of a TX→RX path.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LinkGain(pub f64);

impl LinkGain {
    pub fn value(self) -> f64 {
        self.0
    }
}

impl NetworkScenario {
    /// Three pairs on a 30 m desk-scale floor plan, nominal 0 dB gains.
    pub fn default_three_pair() -> Self {
        NetworkScenario {
            node_positions: vec![
                [0.0, 0.0],
                [8.0, 2.0],
                [4.0, 18.0],
                [12.0, 14.0],
                [26.0, 6.0],
                [18.0, 8.0],
            ],
            pairs: vec![(0, 1), (2, 3), (4, 5)],
            path_loss_exp: 3.0,
            spreading_gain: 16,
            noise_power: 1.5e-3,
            sinr_threshold: 4.0,
            p_min: 0.1,
            p_max: 5.0,
            tx_gain_db: vec![0.0; 6],
            rx_gain_db: vec![0.0; 6],
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.node_positions.len()
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        let bad = |m: String| Err(Error::InvalidScenario(m));
        if self.pairs.is_empty() {
            return bad("at least one pair is required".into());
        }
        let mut used = vec![false; n];
        for &(tx, rx) in &self.pairs {
            for node in [tx, rx] {
                if node >= n {
                    return Err(Error::IndexOutOfRange { index: node, len: n });
                }
                if used[node] {
                    return bad(format!("node {node} appears in more than one pair"));
                }
                used[node] = true;
            }
        }
        if !(self.path_loss_exp > 0.0 && self.path_loss_exp.is_finite()) {
            return bad(format!("path_loss_exp must be > 0, got {}", self.path_loss_exp));
        }
        if self.spreading_gain < 1 {
            return bad("spreading_gain must be >= 1".into());
        }
        if !(self.noise_power > 0.0 && self.noise_power.is_finite()) {
            return bad(format!("noise_power must be > 0, got {}", self.noise_power));
        }
        if !(self.sinr_threshold > 0.0 && self.sinr_threshold.is_finite()) {
            return bad(format!("sinr_threshold must be > 0, got {}", self.sinr_threshold));
        }
        if !(self.p_min >= 0.0 && self.p_min < self.p_max && self.p_max.is_finite()) {
            return bad(format!(
                "power bounds must satisfy 0 <= p_min < p_max, got [{}, {}]",
                self.p_min, self.p_max
            ));
        }
        for (name, table) in [("tx_gain_db", &self.tx_gain_db), ("rx_gain_db", &self.rx_gain_db)] {
            if !table.is_empty() && table.len() != n {
                return bad(format!("{name} has {} entries for {n} nodes", table.len()));
            }
            if table.iter().any(|g| !g.is_finite()) {
                return bad(format!("{name} contains a non-finite entry"));
            }
        }
        for (i, a) in self.node_positions.iter().enumerate() {
            if !(a[0].is_finite() && a[1].is_finite()) {
                return bad(format!("node {i} has a non-finite position"));
            }
            for (j, b) in self.node_positions.iter().enumerate().skip(i + 1) {
                if a == b {
                    return Err(Error::DegenerateGeometry { a: i, b: j });
                }
            }
        }
        Ok(())
    }

    fn check_index(&self, node: usize) -> Result<()> {
        if node < self.num_nodes() {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                index: node,
                len: self.num_nodes(),
            })
        }
    }

    pub fn distance(&self, a: usize, b: usize) -> Result<f64> {
        self.check_index(a)?;
        self.check_index(b)?;
        let (pa, pb) = (self.node_positions[a], self.node_positions[b]);
        Ok((pa[0] - pb[0]).hypot(pa[1] - pb[1]))
    }

    /// Largest distance between any two nodes.
    pub fn diameter(&self) -> f64 {
        let mut best = 0.0f64;
        for i in 0..self.num_nodes() {
            for j in i + 1..self.num_nodes() {
                let p = (self.node_positions[i], self.node_positions[j]);
                best = best.max((p.0[0] - p.1[0]).hypot(p.0[1] - p.1[1]));
            }
        }
        best
    }

    fn tx_gain(&self, node: usize) -> f64 {
        self.tx_gain_db.get(node).copied().unwrap_or(0.0)
    }

    fn rx_gain(&self, node: usize) -> f64 {
        self.rx_gain_db.get(node).copied().unwrap_or(0.0)
    }

    /// Index of the pair whose receiver is `rx`.
    pub fn pair_of_receiver(&self, rx: usize) -> Option<usize> {
        self.pairs.iter().position(|&(_, r)| r == rx)
    }

    /// Index of the pair whose transmitter is `tx`.
    pub fn pair_of_transmitter(&self, tx: usize) -> Option<usize> {
        self.pairs.iter().position(|&(t, _)| t == tx)
    }

    /// Copy of the scenario with every transmitter shifted by `tx_db` and
    /// every receiver by `rx_db` on top of the configured per-node gains.
    pub fn with_gain_offsets(&self, tx_db: f64, rx_db: f64) -> Self {
        let n = self.num_nodes();
        let mut out = self.clone();
        out.tx_gain_db = (0..n).map(|i| self.tx_gain(i) + tx_db).collect();
        out.rx_gain_db = (0..n).map(|i| self.rx_gain(i) + rx_db).collect();
        out
    }
}

/// `10^((G_tx + G_rx)/10) · d^(−α)` for the path `tx → rx`.
pub fn link_gain(scenario: &NetworkScenario, tx: usize, rx: usize) -> Result<LinkGain> {
    if tx == rx {
        scenario.check_index(tx)?;
        return Err(Error::InvalidLink(tx));
    }
    let d = scenario.distance(tx, rx)?;
    if d == 0.0 {
        return Err(Error::DegenerateGeometry { a: tx, b: rx });
    }
    let offset_db = scenario.tx_gain(tx) + scenario.rx_gain(rx);
    Ok(LinkGain(
        10f64.powf(offset_db / 10.0) * d.powf(-scenario.path_loss_exp),
    ))
}

/// SINR at receiver `rx`.
///
/// `tx_powers[node]` is `Some(mW)` for every node transmitting in this slot.
/// Nodes that are not transmitters of any pair are ignored.
pub fn sinr(scenario: &NetworkScenario, rx: usize, tx_powers: &[Option<f64>]) -> Result<f64> {
    let pair = scenario.pair_of_receiver(rx).ok_or(Error::NotAReceiver(rx))?;
    let own_tx = scenario.pairs[pair].0;
    let own_power = tx_powers
        .get(own_tx)
        .copied()
        .flatten()
        .ok_or(Error::MissingTransmitter { tx: own_tx, rx })?;
    let desired = own_power * link_gain(scenario, own_tx, rx)?.0;
    let interference = received_interference(scenario, rx, tx_powers)?;
    Ok(scenario.spreading_gain as f64 * desired / (interference + scenario.noise_power))
}

/// Total power at `rx` from every active transmitter other than its own.
pub fn received_interference(
    scenario: &NetworkScenario,
    rx: usize,
    tx_powers: &[Option<f64>],
) -> Result<f64> {
    let pair = scenario.pair_of_receiver(rx).ok_or(Error::NotAReceiver(rx))?;
    let own_tx = scenario.pairs[pair].0;
    let mut total = 0.0;
    for &(tx, _) in &scenario.pairs {
        if tx == own_tx {
            continue;
        }
        if let Some(p) = tx_powers.get(tx).copied().flatten() {
            total += p * link_gain(scenario, tx, rx)?.0;
        }
    }
    Ok(total)
}

/// Aggregate interference a transmission from `tx` at `power` injects into
/// every receiver other than its own.
pub fn caused_interference(scenario: &NetworkScenario, tx: usize, power: f64) -> Result<f64> {
    scenario.check_index(tx)?;
    let pair = scenario.pair_of_transmitter(tx).ok_or(Error::NotATransmitter(tx))?;
    let own_rx = scenario.pairs[pair].1;
    let mut total = 0.0;
    for &(_, rx) in &scenario.pairs {
        if rx != own_rx {
            total += power * link_gain(scenario, tx, rx)?.0;
        }
    }
    Ok(total)
}
