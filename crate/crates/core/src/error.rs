use std::path::PathBuf;

use thiserror::Error;

use crate::neural::MlpParams;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid link: node {0} cannot transmit to itself")]
    InvalidLink(usize),

    #[error("degenerate geometry: nodes {a} and {b} share a position")]
    DegenerateGeometry { a: usize, b: usize },

    #[error("node index {index} out of range ({len} nodes)")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("node {0} is not the receiver of any pair")]
    NotAReceiver(usize),

    #[error("node {0} is not the transmitter of any pair")]
    NotATransmitter(usize),

    #[error("paired transmitter {tx} of receiver {rx} has no power assigned")]
    MissingTransmitter { tx: usize, rx: usize },

    #[error("agent {agent}: power {power} mW outside [{p_min}, {p_max}]")]
    ActionOutOfBounds {
        agent: usize,
        power: f64,
        p_min: f64,
        p_max: f64,
    },

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("training diverged at step {step}: {reason}")]
    Divergence {
        step: u64,
        reason: String,
        snapshot: Box<DivergenceSnapshot>,
    },

    #[error("invalid aggregation weights: {0}")]
    InvalidWeights(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("environment used before reset")]
    NotReset,

    #[error("non-positive SINR measurement for pairs {0:?}")]
    Measurement(Vec<usize>),

    #[error("bad magic bytes in model artifact")]
    BadMagic,

    #[error("unsupported model format version {0}")]
    UnsupportedVersion(u32),

    #[error("model artifact checksum mismatch (stored {stored:#018x}, computed {computed:#018x})")]
    ChecksumMismatch { stored: u64, computed: u64 },

    #[error("model artifact truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },

    #[error("inconsistent model dimensions: {0}")]
    BadDims(String),

    #[error("config error in {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Parameters captured when a train step produced a non-finite value.
#[derive(Debug, Clone)]
pub struct DivergenceSnapshot {
    pub actor: MlpParams,
    pub critic: MlpParams,
    pub critic_loss: f64,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
