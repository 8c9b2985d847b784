use std::path::PathBuf;
use std::process::ExitCode;

use cdmagym_core::deploy::DEFAULT_BENCH_RUNS;
use cdmagym_core::harness::{self, ExperimentConfig, PolicyKind, VarianceMode};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "cdmagym", version, about = "DS-CDMA power-control training, evaluation and benchmarking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train one agent per pair and export the actors.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Disable actor aggregation regardless of the config.
        #[arg(long)]
        no_aggregation: bool,
    },
    /// Run a policy over the gain grid.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        policy: Policy,
        /// Output directory of a previous `train` (required for `drl`).
        #[arg(long)]
        models: Option<PathBuf>,
    },
    /// Across-run reward variance with and without aggregation.
    VarianceStudy {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        /// Also run the lock-stepped across-runs aggregation mode.
        #[arg(long)]
        across_runs: bool,
        /// Only run the non-aggregated mode.
        #[arg(long)]
        no_aggregation: bool,
    },
    /// Inference latency of an exported model.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BENCH_RUNS)]
        runs: usize,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Policy {
    Drl,
    Dcpc,
    Maxpower,
}

fn load_config(path: Option<&PathBuf>) -> cdmagym_core::Result<ExperimentConfig> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn run(cli: Cli) -> cdmagym_core::Result<()> {
    match cli.command {
        Command::Train {
            config,
            seed,
            out,
            no_aggregation,
        } => {
            let cfg = load_config(config.as_ref())?;
            let seed = seed.unwrap_or(cfg.seed);
            let aggregate = cfg.training.aggregate && !no_aggregation;
            let res = harness::cmd_train(&cfg, &out, seed, aggregate)?;
            let n = res.log.num_steps();
            let w = cfg.training.final_window;
            for a in 0..res.artifacts.len() {
                println!(
                    "agent {a}: final {w}-step mean reward {:.4} -> {}",
                    res.log.window_mean(a, n, w),
                    res.artifacts[a].display()
                );
            }
            println!("rewards: {}", res.rewards_csv.display());
        }
        Command::Eval {
            config,
            seed,
            out,
            policy,
            models,
        } => {
            let cfg = load_config(config.as_ref())?;
            let seed = seed.unwrap_or(cfg.seed);
            let kind = match policy {
                Policy::Drl => PolicyKind::Drl,
                Policy::Dcpc => PolicyKind::Dcpc,
                Policy::Maxpower => PolicyKind::MaxPower,
            };
            let report = harness::cmd_eval(&cfg, kind, models.as_deref(), &out, seed)?;
            println!("{}", harness::ExperimentReport::SUMMARY_HEADER);
            println!("{}", report.summary_row());
        }
        Command::VarianceStudy {
            config,
            seed,
            out,
            runs,
            across_runs,
            no_aggregation,
        } => {
            let cfg = load_config(config.as_ref())?;
            let seed = seed.unwrap_or(cfg.seed);
            let mut modes = vec![VarianceMode::Independent];
            if !no_aggregation {
                modes.push(VarianceMode::AcrossAgents);
            }
            if across_runs {
                modes.push(VarianceMode::AcrossRuns);
            }
            let report = harness::cmd_variance_study(&cfg, runs, seed, &modes, &out)?;
            println!("mode,agent,mean,variance");
            for m in &report.modes {
                for a in 0..m.variance.len() {
                    println!("{},{},{:.5},{:.3e}", m.mode.name(), a, m.mean[a], m.variance[a]);
                }
            }
        }
        Command::Bench { model, out, runs } => {
            let report = harness::cmd_bench(&model, runs, &out)?;
            println!("{}", cdmagym_core::deploy::LatencyStats::CSV_HEADER);
            for row in report.rows() {
                println!("{row}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
