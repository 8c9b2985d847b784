//! Experiment orchestration behind the command-line tool: configuration,
//! training runs, the gain-grid evaluation, the variance study and the
//! latency benchmark.
//!
//! Every emitted CSV starts with a `#` metadata line carrying the config hash
//! and seed, followed by a header row.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::{DdpgAgent, DdpgConfig, Trainer, TrainingLog, TrainingOptions, TrainingRun};
use crate::aggregate::{install_aggregate, AggregationPolicy};
use crate::baseline::run_dcpc;
use crate::deploy::{self, InferenceEngine, ModelArtifact, NaiveEngine, PowerPolicy, Precision};
use crate::derive_seed;
use crate::env::{
    calibrate_normalizers, observation_dim, write_observation_vector, ActionValue, CdmaEnv, Normalizers,
    TrafficModel, Trajectory, TrajectoryRecord,
};
use crate::error::{Error, Result};
use crate::netmodel::NetworkScenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Slots of uniformly random powers used to size the reward divisors.
    pub slots: usize,
    pub seed: u64,
    /// Skip calibration and use these divisors.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed: Option<Normalizers>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            slots: 1000,
            seed: 0,
            fixed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub n_steps: usize,
    pub episode_len: usize,
    /// Aggregate actors across agents during training.
    pub aggregate: bool,
    /// Trailing window for "final reward" statistics.
    pub final_window: usize,
    pub export_precision: Precision,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            n_steps: 5000,
            episode_len: 100,
            aggregate: true,
            final_window: 200,
            export_precision: Precision::F64,
        }
    }
}

/// Gain-offset grid used by the evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentGrid {
    pub tx_gains_db: Vec<f64>,
    pub rx_gains_db: Vec<f64>,
    pub packets_per_experiment: usize,
    /// Each cell is run once per seed; results are pooled.
    pub seeds: Vec<u64>,
    /// Power of the first packet of every run (defaults to `p_max`).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_packet_power: Option<f64>,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        ExperimentGrid {
            tx_gains_db: vec![-6.0, -3.0, 0.0, 3.0],
            rx_gains_db: vec![-6.0, -3.0, 0.0, 3.0],
            packets_per_experiment: 1000,
            seeds: vec![0],
            first_packet_power: None,
        }
    }
}

impl ExperimentGrid {
    pub fn num_cells(&self) -> usize {
        self.tx_gains_db.len() * self.rx_gains_db.len()
    }

    /// `(tx_db, rx_db)` in row-major order (tx outer).
    pub fn cells(&self) -> Vec<(f64, f64)> {
        self.tx_gains_db
            .iter()
            .flat_map(|&t| self.rx_gains_db.iter().map(move |&r| (t, r)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_cells() == 0 || self.packets_per_experiment == 0 || self.seeds.is_empty() {
            return Err(Error::InvalidArgument(
                "evaluation grid needs gains on both axes, packets and at least one seed".into(),
            ));
        }
        if self.tx_gains_db.iter().chain(&self.rx_gains_db).any(|g| !g.is_finite()) {
            return Err(Error::InvalidArgument("non-finite gain offset".into()));
        }
        Ok(())
    }
}

/// Everything a command needs besides the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub scenario: NetworkScenario,
    pub traffic: TrafficModel,
    pub calibration: CalibrationConfig,
    pub training: TrainingConfig,
    pub ddpg: DdpgConfig,
    pub aggregation: AggregationPolicy,
    pub eval: ExperimentGrid,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            scenario: NetworkScenario::default_three_pair(),
            traffic: TrafficModel::default(),
            calibration: CalibrationConfig::default(),
            training: TrainingConfig::default(),
            ddpg: DdpgConfig::default(),
            aggregation: AggregationPolicy::default(),
            eval: ExperimentGrid::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, path: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate().map_err(|e| Error::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate()?;
        self.traffic.validate()?;
        self.ddpg.validate()?;
        self.aggregation.validate()?;
        self.eval.validate()?;
        if let Some(n) = &self.calibration.fixed {
            n.validate()?;
        } else if self.calibration.slots == 0 {
            return Err(Error::InvalidArgument("calibration.slots must be >= 1".into()));
        }
        let t = &self.training;
        if t.n_steps == 0 || t.episode_len == 0 || t.final_window == 0 {
            return Err(Error::InvalidArgument(
                "training.n_steps, episode_len and final_window must be >= 1".into(),
            ));
        }
        if let Some(p) = self.eval.first_packet_power {
            if !(p >= self.scenario.p_min && p <= self.scenario.p_max) {
                return Err(Error::InvalidArgument(format!(
                    "first_packet_power {p} outside [{}, {}]",
                    self.scenario.p_min, self.scenario.p_max
                )));
            }
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest[..8].iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    pub fn normalizers(&self) -> Result<Normalizers> {
        match self.calibration.fixed {
            Some(n) => Ok(n),
            None => calibrate_normalizers(
                &self.scenario,
                &self.traffic,
                self.calibration.slots,
                self.calibration.seed,
            ),
        }
    }

    pub fn env(&self, normalizers: Normalizers) -> Result<CdmaEnv> {
        CdmaEnv::new(self.scenario.clone(), self.traffic, normalizers)
    }

    fn training_options(&self, seed: u64, aggregate: bool) -> TrainingOptions {
        TrainingOptions {
            n_steps: self.training.n_steps,
            episode_len: self.training.episode_len,
            aggregation: aggregate.then_some(self.aggregation),
            seed,
        }
    }

    fn first_packet_power(&self) -> f64 {
        self.eval.first_packet_power.unwrap_or(self.scenario.p_max)
    }
}

fn metadata_line(config_hash: &str, seed: u64, extra: &str) -> String {
    if extra.is_empty() {
        format!("# config_hash={config_hash} seed={seed}")
    } else {
        format!("# config_hash={config_hash} seed={seed} {extra}")
    }
}

fn write_csv(path: &Path, meta: &str, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    let mut out = String::new();
    out.push_str(meta);
    out.push('\n');
    out.push_str(header);
    out.push('\n');
    for r in rows {
        out.push_str(&r);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Trains one run of `config` and returns the normalizers it used.
pub fn train(
    config: &ExperimentConfig,
    seed: u64,
    aggregate: bool,
) -> std::result::Result<(Normalizers, TrainingRun), Box<crate::agent::TrainingFailure>> {
    let fail = |error| {
        Box::new(crate::agent::TrainingFailure {
            error,
            partial: TrainingLog::default(),
        })
    };
    let norm = config.normalizers().map_err(fail)?;
    let env = config.env(norm).map_err(fail)?;
    let run = crate::agent::run_training(env, config.ddpg, config.training_options(seed, aggregate))?;
    Ok((norm, run))
}

/// Contents of `run.toml` written next to trained artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMetadata {
    pub seed: u64,
    pub config_hash: String,
    pub aggregation: bool,
    pub normalizers: Normalizers,
    pub artifacts: Vec<String>,
    pub config: ExperimentConfig,
}

pub const RUN_METADATA_FILE: &str = "run.toml";

impl RunMetadata {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(RUN_METADATA_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config {
            path,
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub artifacts: Vec<PathBuf>,
    pub rewards_csv: PathBuf,
    pub metadata: RunMetadata,
    pub log: TrainingLog,
}

pub fn artifact_name(agent: usize) -> String {
    format!("agent_{agent}.mrng")
}

/// Trains, exports one actor per agent, and writes `rewards.csv`,
/// `aggregation.csv` and `run.toml` into `out_dir`. On divergence the partial
/// reward log is written to `rewards_partial.csv` before the error is
/// returned.
pub fn cmd_train(config: &ExperimentConfig, out_dir: &Path, seed: u64, aggregate: bool) -> Result<TrainOutput> {
    create_dir(out_dir)?;
    let hash = config.hash();
    let meta = metadata_line(&hash, seed, "");
    let (norm, run) = match train(config, seed, aggregate) {
        Ok(r) => r,
        Err(failure) => {
            let path = out_dir.join("rewards_partial.csv");
            write_csv(&path, &meta, TrainingLog::CSV_HEADER, failure.partial.csv_rows())?;
            return Err(failure.error);
        }
    };
    let s = &config.scenario;
    let mut artifacts = Vec::with_capacity(run.agents.len());
    for (i, agent) in run.agents.iter().enumerate() {
        let path = out_dir.join(artifact_name(i));
        deploy::export_model(&agent.actor, s.p_min, s.p_max, config.training.export_precision, &path)?;
        artifacts.push(path);
    }
    let rewards_csv = out_dir.join("rewards.csv");
    write_csv(&rewards_csv, &meta, TrainingLog::CSV_HEADER, run.log.csv_rows())?;
    write_csv(
        &out_dir.join("aggregation.csv"),
        &meta,
        crate::aggregate::AggregationEvent::CSV_HEADER,
        run.log.aggregation_events.iter().map(|e| e.to_csv_row()),
    )?;
    let metadata = RunMetadata {
        seed,
        config_hash: hash,
        aggregation: aggregate,
        normalizers: norm,
        artifacts: (0..run.agents.len()).map(artifact_name).collect(),
        config: config.clone(),
    };
    let meta_path = out_dir.join(RUN_METADATA_FILE);
    let text = toml::to_string(&metadata).expect("metadata is always representable as TOML");
    std::fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))?;
    Ok(TrainOutput {
        artifacts,
        rewards_csv,
        metadata,
        log: run.log,
    })
}

/// Policy driving the evaluation grid.
#[derive(Debug, Clone)]
pub enum EvalPolicy {
    /// One frozen actor per pair.
    Drl(Vec<ModelArtifact>),
    Dcpc,
    MaxPower,
}

impl EvalPolicy {
    pub fn name(&self) -> &'static str {
        match self {
            EvalPolicy::Drl(_) => "drl",
            EvalPolicy::Dcpc => "dcpc",
            EvalPolicy::MaxPower => "maxpower",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    pub tx_gain_db: f64,
    pub rx_gain_db: f64,
    pub average_power: f64,
    pub pdr: f64,
    pub transmissions: usize,
    pub successes: usize,
    /// Per-packet records, one trajectory per seed.
    pub trajectories: Vec<Trajectory>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub policy: String,
    pub cells: Vec<CellResult>,
    /// Mean over cells of the per-cell average power.
    pub mean_power: f64,
    pub mean_pdr: f64,
}

impl ExperimentReport {
    pub const CELL_HEADER: &'static str =
        "policy,cell,tx_gain_db,rx_gain_db,avg_power_mw,pdr,transmissions,successes";
    pub const SUMMARY_HEADER: &'static str = "policy,cells,mean_power_mw,mean_pdr";

    pub fn cell_rows(&self) -> impl Iterator<Item = String> + '_ {
        self.cells.iter().enumerate().map(move |(i, c)| {
            format!(
                "{},{},{},{},{},{},{},{}",
                self.policy, i, c.tx_gain_db, c.rx_gain_db, c.average_power, c.pdr, c.transmissions, c.successes
            )
        })
    }

    pub fn summary_row(&self) -> String {
        format!("{},{},{},{}", self.policy, self.cells.len(), self.mean_power, self.mean_pdr)
    }
}

fn check_models(models: &[ModelArtifact], scenario: &NetworkScenario) -> Result<()> {
    if models.len() != scenario.num_pairs() {
        return Err(Error::ShapeMismatch {
            context: "one model per transmitter-receiver pair",
            expected: scenario.num_pairs(),
            got: models.len(),
        });
    }
    let dim = observation_dim(scenario.num_pairs());
    for m in models {
        if m.params.input_dim() != dim {
            return Err(Error::ShapeMismatch {
                context: "model input width vs scenario observation width",
                expected: dim,
                got: m.params.input_dim(),
            });
        }
        if m.params.output_dim() != 1 {
            return Err(Error::ShapeMismatch {
                context: "model output width",
                expected: 1,
                got: m.params.output_dim(),
            });
        }
    }
    Ok(())
}

fn run_frozen(
    env: &mut CdmaEnv,
    engines: &mut [InferenceEngine],
    n_slots: usize,
    seed: u64,
    first_power: f64,
) -> Result<Trajectory> {
    env.reset(seed);
    let mut traj = Trajectory::default();
    let mut obs = Vec::with_capacity(observation_dim(env.num_agents()));
    let mut actions = vec![ActionValue(first_power); env.num_agents()];
    for t in 0..n_slots {
        if t > 0 {
            for (i, eng) in engines.iter_mut().enumerate() {
                write_observation_vector(&env.observations()[i], env.scaling(), &mut obs);
                actions[i] = ActionValue(eng.infer(&obs)?);
            }
        }
        traj.push_outcome(&env.step(&actions)?);
    }
    Ok(traj)
}

fn run_constant(env: &mut CdmaEnv, n_slots: usize, seed: u64, power: f64) -> Result<Trajectory> {
    env.reset(seed);
    let actions = vec![ActionValue(power); env.num_agents()];
    let mut traj = Trajectory::default();
    for _ in 0..n_slots {
        traj.push_outcome(&env.step(&actions)?);
    }
    Ok(traj)
}

/// Runs `policy` on every cell of `config.eval` with learning frozen. Cells run
/// in parallel; the result does not depend on the thread count.
pub fn evaluate(
    config: &ExperimentConfig,
    normalizers: Normalizers,
    policy: &EvalPolicy,
    seed: u64,
) -> Result<ExperimentReport> {
    config.eval.validate()?;
    if let EvalPolicy::Drl(models) = policy {
        check_models(models, &config.scenario)?;
    }
    let n_slots = config.eval.packets_per_experiment;
    let first = config.first_packet_power();
    let cells = config.eval.cells();
    let results: Vec<CellResult> = cells
        .par_iter()
        .enumerate()
        .map(|(c, &(tx_db, rx_db))| {
            let scenario = config.scenario.with_gain_offsets(tx_db, rx_db);
            let mut env = CdmaEnv::new(scenario, config.traffic, normalizers)?;
            let mut engines = match policy {
                EvalPolicy::Drl(models) => models
                    .iter()
                    .map(InferenceEngine::from_artifact)
                    .collect::<Result<Vec<_>>>()?,
                _ => Vec::new(),
            };
            let mut trajectories = Vec::with_capacity(config.eval.seeds.len());
            for &s in &config.eval.seeds {
                let run_seed = derive_seed(derive_seed(seed, s), c as u64);
                let traj = match policy {
                    EvalPolicy::Drl(_) => run_frozen(&mut env, &mut engines, n_slots, run_seed, first)?,
                    EvalPolicy::Dcpc => run_dcpc(&mut env, n_slots, run_seed, first)?.trajectory,
                    EvalPolicy::MaxPower => run_constant(&mut env, n_slots, run_seed, config.scenario.p_max)?,
                };
                trajectories.push(traj);
            }
            let transmissions: usize = trajectories.iter().map(Trajectory::transmissions).sum();
            let successes: usize = trajectories.iter().map(Trajectory::successes).sum();
            let power_sum: f64 = trajectories
                .iter()
                .flat_map(|t| &t.records)
                .map(|r| r.power)
                .sum();
            let (average_power, pdr) = if transmissions == 0 {
                (0.0, 0.0)
            } else {
                (power_sum / transmissions as f64, successes as f64 / transmissions as f64)
            };
            Ok(CellResult {
                tx_gain_db: tx_db,
                rx_gain_db: rx_db,
                average_power,
                pdr,
                transmissions,
                successes,
                trajectories,
            })
        })
        .collect::<Result<_>>()?;
    let n = results.len() as f64;
    Ok(ExperimentReport {
        policy: policy.name().to_string(),
        mean_power: results.iter().map(|c| c.average_power).sum::<f64>() / n,
        mean_pdr: results.iter().map(|c| c.pdr).sum::<f64>() / n,
        cells: results,
    })
}

/// Loads the artifacts and normalizers written by [`cmd_train`].
pub fn load_trained(models_dir: &Path) -> Result<(RunMetadata, Vec<ModelArtifact>)> {
    let meta = RunMetadata::load(models_dir)?;
    let models = meta
        .artifacts
        .iter()
        .map(|name| ModelArtifact::read(&models_dir.join(name)))
        .collect::<Result<Vec<_>>>()?;
    Ok((meta, models))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Drl,
    Dcpc,
    MaxPower,
}

/// Evaluates and writes `cells.csv`, `summary.csv` and `packets.csv`.
///
/// DRL models come from `models_dir` (a [`cmd_train`] output directory) and
/// run with the normalizers recorded there; the baselines use the
/// normalizers of `config`.
pub fn cmd_eval(
    config: &ExperimentConfig,
    policy: PolicyKind,
    models_dir: Option<&Path>,
    out_dir: &Path,
    seed: u64,
) -> Result<ExperimentReport> {
    let (norm, policy) = match policy {
        PolicyKind::Drl => {
            let dir = models_dir
                .ok_or_else(|| Error::InvalidArgument("the drl policy needs a trained model directory".into()))?;
            let (meta, models) = load_trained(dir)?;
            (meta.normalizers, EvalPolicy::Drl(models))
        }
        PolicyKind::Dcpc => (config.normalizers()?, EvalPolicy::Dcpc),
        PolicyKind::MaxPower => (config.normalizers()?, EvalPolicy::MaxPower),
    };
    let report = evaluate(config, norm, &policy, seed)?;
    create_dir(out_dir)?;
    let meta = metadata_line(&config.hash(), seed, "");
    write_csv(&out_dir.join("cells.csv"), &meta, ExperimentReport::CELL_HEADER, report.cell_rows())?;
    write_csv(
        &out_dir.join("summary.csv"),
        &meta,
        ExperimentReport::SUMMARY_HEADER,
        std::iter::once(report.summary_row()),
    )?;
    let packets = report.cells.iter().enumerate().flat_map(|(c, cell)| {
        cell.trajectories.iter().enumerate().flat_map(move |(k, t)| {
            t.records.iter().map(move |r| format!("{c},{k},{}", r.to_csv_row()))
        })
    });
    write_csv(
        &out_dir.join("packets.csv"),
        &meta,
        &format!("cell,seed_index,{}", TrajectoryRecord::CSV_HEADER),
        packets,
    )?;
    Ok(report)
}

/// How replicas in the variance study are coupled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceMode {
    /// No aggregation.
    Independent,
    /// Actors averaged across the agents of each run.
    AcrossAgents,
    /// Lock-stepped replicas; agent `i`'s actor averaged across runs.
    AcrossRuns,
}

impl VarianceMode {
    pub fn name(self) -> &'static str {
        match self {
            VarianceMode::Independent => "independent",
            VarianceMode::AcrossAgents => "across_agents",
            VarianceMode::AcrossRuns => "across_runs",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeResult {
    pub mode: VarianceMode,
    pub seeds: Vec<u64>,
    /// `final_rewards[run][agent]`: mean reward over the final window.
    pub final_rewards: Vec<Vec<f64>>,
    /// Unbiased across-run variance per agent.
    pub variance: Vec<f64>,
    pub mean: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    pub modes: Vec<ModeResult>,
}

impl VarianceReport {
    pub fn mode(&self, mode: VarianceMode) -> Option<&ModeResult> {
        self.modes.iter().find(|m| m.mode == mode)
    }
}

pub fn replica_seed(seed: u64, run: usize) -> u64 {
    derive_seed(seed, 1_000 + run as u64)
}

fn final_means(log: &TrainingLog, window: usize) -> Vec<f64> {
    let n = log.num_steps();
    (0..log.rewards.len()).map(|a| log.window_mean(a, n, window)).collect()
}

/// Sample mean and unbiased variance.
pub fn mean_and_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() < 2 {
        0.0
    } else {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    };
    (mean, var)
}

fn train_across_runs(config: &ExperimentConfig, env: &CdmaEnv, seeds: &[u64]) -> Result<Vec<TrainingLog>> {
    let mut trainers = seeds
        .iter()
        .map(|&s| {
            let agents = Trainer::default_agents(env, config.ddpg, s)?;
            Trainer::new(env.clone(), agents, config.training_options(s, false))
        })
        .collect::<Result<Vec<_>>>()?;
    let policy = config.aggregation;
    let weights = vec![1.0 / seeds.len() as f64; seeds.len()];
    while !trainers[0].is_finished() {
        trainers.par_iter_mut().try_for_each(Trainer::step_once)?;
        let step = trainers[0].steps_done();
        if policy.fires_at(step) {
            for i in 0..env.num_agents() {
                let mut same_index: Vec<&mut DdpgAgent> = trainers.iter_mut().map(|t| &mut t.agents[i]).collect();
                install_aggregate(&mut same_index, policy.scope, &weights)?;
            }
        }
    }
    Ok(trainers.into_iter().map(|t| t.log).collect())
}

/// Trains `n_runs` seeded replicas per mode and tabulates the across-run
/// spread of each agent's final-window mean reward. Every mode uses the same
/// replica seeds.
pub fn variance_study(
    config: &ExperimentConfig,
    n_runs: usize,
    seed: u64,
    modes: &[VarianceMode],
) -> Result<VarianceReport> {
    if n_runs < 3 {
        return Err(Error::InvalidArgument(format!("variance study needs n_runs >= 3, got {n_runs}")));
    }
    let norm = config.normalizers()?;
    let env = config.env(norm)?;
    let seeds: Vec<u64> = (0..n_runs).map(|r| replica_seed(seed, r)).collect();
    let window = config.training.final_window;

    let jobs: Vec<(VarianceMode, u64)> = modes
        .iter()
        .filter(|m| **m != VarianceMode::AcrossRuns)
        .flat_map(|&m| seeds.iter().map(move |&s| (m, s)))
        .collect();
    let finished: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(mode, s)| {
            let opts = config.training_options(s, mode == VarianceMode::AcrossAgents);
            crate::agent::run_training(env.clone(), config.ddpg, opts)
                .map(|run| final_means(&run.log, window))
                .map_err(|f| f.error)
        })
        .collect::<Result<_>>()?;

    let mut out = Vec::with_capacity(modes.len());
    let mut it = finished.into_iter();
    for &mode in modes {
        let final_rewards: Vec<Vec<f64>> = if mode == VarianceMode::AcrossRuns {
            train_across_runs(config, &env, &seeds)?
                .iter()
                .map(|log| final_means(log, window))
                .collect()
        } else {
            it.by_ref().take(n_runs).collect()
        };
        let n_agents = env.num_agents();
        let (mean, variance): (Vec<f64>, Vec<f64>) = (0..n_agents)
            .map(|a| mean_and_variance(&final_rewards.iter().map(|r| r[a]).collect::<Vec<_>>()))
            .unzip();
        out.push(ModeResult {
            mode,
            seeds: seeds.clone(),
            final_rewards,
            variance,
            mean,
        });
    }
    Ok(VarianceReport { modes: out })
}

/// Runs [`variance_study`] and writes `variance_runs.csv` and
/// `variance.csv`.
pub fn cmd_variance_study(
    config: &ExperimentConfig,
    n_runs: usize,
    seed: u64,
    modes: &[VarianceMode],
    out_dir: &Path,
) -> Result<VarianceReport> {
    let report = variance_study(config, n_runs, seed, modes)?;
    create_dir(out_dir)?;
    let meta = metadata_line(&config.hash(), seed, &format!("n_runs={n_runs}"));
    let runs = report.modes.iter().flat_map(|m| {
        m.final_rewards.iter().enumerate().flat_map(move |(r, rewards)| {
            rewards
                .iter()
                .enumerate()
                .map(move |(a, v)| format!("{},{},{},{},{}", m.mode.name(), r, m.seeds[r], a, v))
        })
    });
    write_csv(
        &out_dir.join("variance_runs.csv"),
        &meta,
        "mode,run,seed,agent,final_mean_reward",
        runs,
    )?;
    let table = report.modes.iter().flat_map(|m| {
        (0..m.variance.len()).map(move |a| {
            format!("{},{},{},{},{}", m.mode.name(), a, m.mean[a], m.variance[a], m.final_rewards.len())
        })
    });
    write_csv(&out_dir.join("variance.csv"), &meta, "mode,agent,mean,variance,n_runs", table)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub engine: deploy::LatencyStats,
    pub naive: deploy::LatencyStats,
    pub precision: Precision,
}

impl BenchReport {
    pub fn rows(&self) -> [String; 2] {
        let p = self.precision.name();
        [
            self.engine.to_csv_row(&format!("engine_{p}")),
            self.naive.to_csv_row(&format!("naive_{p}")),
        ]
    }
}

/// Latency of the optimized engine and the naive path on a fixed input.
pub fn bench(artifact: &ModelArtifact, n_runs: usize) -> Result<BenchReport> {
    let mut engine = InferenceEngine::from_artifact(artifact)?;
    let mut naive = NaiveEngine::new(artifact);
    let input: Vec<f64> = (0..engine.input_dim()).map(|i| 0.1 + 0.05 * i as f64).collect();
    Ok(BenchReport {
        engine: deploy::bench_latency(&mut engine, &input, n_runs)?,
        naive: deploy::bench_latency(&mut naive, &input, n_runs)?,
        precision: artifact.precision,
    })
}

/// Benchmarks the artifact at `model_path` and writes `bench.csv`. Timing is
/// flagged non-deterministic in the metadata line.
pub fn cmd_bench(model_path: &Path, n_runs: usize, out_dir: &Path) -> Result<BenchReport> {
    let bytes = std::fs::read(model_path).map_err(|e| Error::io(model_path, e))?;
    let artifact = ModelArtifact::from_bytes(&bytes)?;
    let report = bench(&artifact, n_runs)?;
    create_dir(out_dir)?;
    let meta = format!(
        "# model_checksum={:016x} n_runs={n_runs} timer_overhead_ns={} deterministic=false",
        deploy::checksum(&bytes[..bytes.len() - 8]),
        report.engine.timer_overhead_ns
    );
    write_csv(
        &out_dir.join("bench.csv"),
        &meta,
        deploy::LatencyStats::CSV_HEADER,
        report.rows(),
    )?;
    Ok(report)
}
