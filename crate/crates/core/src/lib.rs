//! Multi-agent power control for a slotted DS-CDMA network: link model,
//! environment, DDPG agents with periodic actor aggregation, the DCPC
//! baseline, a portable inference runtime and the experiment harness.

// `!(a < b)` is used deliberately so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod aggregate;
pub mod baseline;
pub mod deploy;
pub mod env;
pub mod error;
pub mod harness;
pub mod netmodel;
pub mod neural;

pub use agent::{run_training, DdpgAgent, DdpgConfig, TrainingLog, TrainingOptions, TrainingRun};
pub use aggregate::{aggregate, apply_aggregation, AggregationPolicy, AggregationScope, Weighting};
pub use baseline::{dcpc_update, run_dcpc, DcpcState};
pub use deploy::{bench_latency, export_model, load_engine, InferenceEngine, ModelArtifact, Precision};
pub use env::{ActionValue, CdmaEnv, Normalizers, Observation, StepOutcome, TrafficModel};
pub use error::{Error, Result};
pub use harness::{ExperimentConfig, ExperimentGrid, ExperimentReport};
pub use netmodel::{link_gain, sinr, LinkGain, NetworkScenario};
pub use neural::{Activation, MlpParams};

/// Splits one user seed into independent streams (SplitMix64 finalizer over
/// `seed ⊕ golden·(stream+1)`).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(stream.wrapping_add(1));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
