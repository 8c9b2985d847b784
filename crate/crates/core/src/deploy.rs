//! Portable actor artifacts and an allocation-free inference runtime.
//!
//! Byte layout (all integers and floats little-endian):
//!
//! | field            | size                                   |
//! |------------------|----------------------------------------|
//! | magic `"MRNG"`   | 4                                      |
//! | format version   | u32                                    |
//! | precision        | u8: 4 = f32, 8 = f64                   |
//! | layer count `n`  | u32                                    |
//! | layer dims       | `(n + 1)` × u32                        |
//! | activation tags  | `n` × u8: 0 identity, 1 relu, 2 tanh   |
//! | p_min, p_max     | 2 × f64                                |
//! | per layer        | weights (row-major, out × in), biases  |
//! | checksum         | u64                                    |
//!
//! Parameter values are stored at the declared precision. The checksum is
//! the first eight bytes of the SHA-256 digest of every preceding byte, read
//! as a little-endian u64.

use std::hint::black_box;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::agent::unit_to_power;
use crate::error::{Error, Result};
use crate::neural::{Activation, MlpParams};

pub const MAGIC: [u8; 4] = *b"MRNG";
pub const FORMAT_VERSION: u32 = 1;

const MAX_LAYERS: usize = 1024;
const MAX_WIDTH: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn width(self) -> usize {
        match self {
            Precision::F32 => 4,
            Precision::F64 => 8,
        }
    }

    fn from_width(w: u8) -> Option<Self> {
        match w {
            4 => Some(Precision::F32),
            8 => Some(Precision::F64),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            other => Err(Error::InvalidArgument(format!("unknown precision {other:?}"))),
        }
    }
}

/// A decoded model file.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub precision: Precision,
    /// Values already rounded to `precision`.
    pub params: MlpParams,
    pub p_min: f64,
    pub p_max: f64,
}

pub fn checksum(bytes: &[u8]) -> u64 {
    let digest = Sha256::digest(bytes);
    let mut head = [0u8; 8];
    head.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(head)
}

impl ModelArtifact {
    pub fn new(params: &MlpParams, p_min: f64, p_max: f64, precision: Precision) -> Result<Self> {
        params.validate()?;
        if params.values().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("exported parameters"));
        }
        if !(p_min < p_max && p_min.is_finite() && p_max.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad action bounds [{p_min}, {p_max}]")));
        }
        let mut params = params.clone();
        if precision == Precision::F32 {
            params.values_mut().for_each(|v| *v = *v as f32 as f64);
        }
        Ok(ModelArtifact {
            precision,
            params,
            p_min,
            p_max,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let p = &self.params;
        let mut out = Vec::with_capacity(64 + p.num_params() * self.precision.width());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(self.precision.width() as u8);
        out.extend_from_slice(&(p.num_layers() as u32).to_le_bytes());
        for &d in &p.layer_dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        out.extend(p.activations.iter().map(|a| a.tag()));
        out.extend_from_slice(&self.p_min.to_le_bytes());
        out.extend_from_slice(&self.p_max.to_le_bytes());
        for (w, b) in p.weights.iter().zip(&p.biases) {
            for &v in w.iter().chain(b) {
                match self.precision {
                    Precision::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
                    Precision::F64 => out.extend_from_slice(&v.to_le_bytes()),
                }
            }
        }
        let sum = checksum(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let width = r.take(1)?[0];
        let precision = Precision::from_width(width)
            .ok_or_else(|| Error::BadDims(format!("unknown precision width {width}")))?;
        let n_layers = r.u32()? as usize;
        if n_layers == 0 || n_layers > MAX_LAYERS {
            return Err(Error::BadDims(format!("layer count {n_layers}")));
        }
        let mut dims = Vec::with_capacity(n_layers + 1);
        for _ in 0..=n_layers {
            let d = r.u32()? as usize;
            if d == 0 || d > MAX_WIDTH {
                return Err(Error::BadDims(format!("layer width {d}")));
            }
            dims.push(d);
        }
        let mut acts = Vec::with_capacity(n_layers);
        for &tag in r.take(n_layers)? {
            acts.push(
                Activation::from_tag(tag)
                    .ok_or_else(|| Error::BadDims(format!("unknown activation tag {tag}")))?,
            );
        }
        let p_min = r.f64()?;
        let p_max = r.f64()?;
        let n_values: usize = dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum();
        let body_end = r.pos + n_values * precision.width();
        let total = body_end + 8;
        if bytes.len() < total {
            return Err(Error::Truncated {
                needed: total,
                available: bytes.len(),
            });
        }
        if bytes.len() > total {
            return Err(Error::BadDims(format!(
                "{} trailing bytes after checksum",
                bytes.len() - total
            )));
        }
        let stored = u64::from_le_bytes(bytes[body_end..].try_into().expect("8 bytes"));
        let computed = checksum(&bytes[..body_end]);
        if stored != computed {
            return Err(Error::ChecksumMismatch { stored, computed });
        }

        let mut params = MlpParams::zeros(&dims, &acts)?;
        for l in 0..n_layers {
            let (w, b) = (&mut params.weights[l], &mut params.biases[l]);
            for v in w.iter_mut().chain(b.iter_mut()) {
                *v = match precision {
                    Precision::F32 => r.f32()? as f64,
                    Precision::F64 => r.f64()?,
                };
            }
        }
        if !(p_min < p_max) || params.values().any(|v| !v.is_finite()) {
            return Err(Error::BadDims("non-finite values or empty action range".into()));
        }
        Ok(ModelArtifact {
            precision,
            params,
            p_min,
            p_max,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Truncated {
                needed: end,
                available: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Writes `params` with action bounds to `path`.
pub fn export_model(
    params: &MlpParams,
    p_min: f64,
    p_max: f64,
    precision: Precision,
    path: &Path,
) -> Result<ModelArtifact> {
    let artifact = ModelArtifact::new(params, p_min, p_max, precision)?;
    artifact.write(path)?;
    Ok(artifact)
}

/// Anything that maps an observation vector to a transmit power.
pub trait PowerPolicy {
    fn infer(&mut self, input: &[f64]) -> Result<f64>;
}

trait Scalar: Copy + PartialOrd + std::ops::Add<Output = Self> + std::ops::Mul<Output = Self> {
    const ZERO: Self;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn tanh(self) -> Self;
}

impl Scalar for f32 {
    const ZERO: Self = 0.0;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
    fn tanh(self) -> Self {
        f32::tanh(self)
    }
}

impl Scalar for f64 {
    const ZERO: Self = 0.0;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerLayout {
    n_in: usize,
    n_out: usize,
    weight_offset: usize,
    bias_offset: usize,
    activation: Activation,
}

#[derive(Debug, Clone)]
struct Engine<T> {
    buffer: Vec<T>,
    layers: Vec<LayerLayout>,
    front: Vec<T>,
    back: Vec<T>,
}

impl<T: Scalar> Engine<T> {
    fn build(params: &MlpParams) -> Self {
        let mut buffer = Vec::with_capacity(params.num_params());
        let mut layers = Vec::with_capacity(params.num_layers());
        for l in 0..params.num_layers() {
            let (n_in, n_out) = (params.layer_dims[l], params.layer_dims[l + 1]);
            let weight_offset = buffer.len();
            buffer.extend(params.weights[l].iter().map(|&v| T::from_f64(v)));
            let bias_offset = buffer.len();
            buffer.extend(params.biases[l].iter().map(|&v| T::from_f64(v)));
            layers.push(LayerLayout {
                n_in,
                n_out,
                weight_offset,
                bias_offset,
                activation: params.activations[l],
            });
        }
        let width = params.max_width();
        Engine {
            buffer,
            layers,
            front: vec![T::ZERO; width],
            back: vec![T::ZERO; width],
        }
    }

    #[inline]
    fn run(&mut self, input: &[f64]) -> f64 {
        for (dst, &x) in self.front.iter_mut().zip(input) {
            *dst = T::from_f64(x);
        }
        for layer in &self.layers {
            let (n_in, n_out) = (layer.n_in, layer.n_out);
            let w = &self.buffer[layer.weight_offset..layer.weight_offset + n_in * n_out];
            let b = &self.buffer[layer.bias_offset..layer.bias_offset + n_out];
            let x = &self.front[..n_in];
            let y = &mut self.back[..n_out];
            for ((dst, row), &bias) in y.iter_mut().zip(w.chunks_exact(n_in)).zip(b) {
                let mut acc = bias;
                for (&wi, &xi) in row.iter().zip(x) {
                    acc = acc + wi * xi;
                }
                *dst = acc;
            }
            match layer.activation {
                Activation::Identity => {}
                Activation::Relu => {
                    for v in y.iter_mut() {
                        if !(*v > T::ZERO) {
                            *v = T::ZERO;
                        }
                    }
                }
                Activation::Tanh => {
                    for v in y.iter_mut() {
                        *v = v.tanh();
                    }
                }
            }
            std::mem::swap(&mut self.front, &mut self.back);
        }
        self.front[0].to_f64()
    }
}

#[derive(Debug, Clone)]
enum EngineKind {
    F32(Engine<f32>),
    F64(Engine<f64>),
}

/// Flattened parameters plus preallocated activation buffers. `infer` does
/// not allocate.
#[derive(Debug, Clone)]
pub struct InferenceEngine {
    kind: EngineKind,
    input_dim: usize,
    p_min: f64,
    p_max: f64,
}

impl InferenceEngine {
    pub fn from_artifact(artifact: &ModelArtifact) -> Result<Self> {
        let p = &artifact.params;
        p.validate()?;
        if p.output_dim() != 1 {
            return Err(Error::BadDims(format!(
                "policy networks have one output, this one has {}",
                p.output_dim()
            )));
        }
        let kind = match artifact.precision {
            Precision::F32 => EngineKind::F32(Engine::build(p)),
            Precision::F64 => EngineKind::F64(Engine::build(p)),
        };
        Ok(InferenceEngine {
            kind,
            input_dim: p.input_dim(),
            p_min: artifact.p_min,
            p_max: artifact.p_max,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.p_min, self.p_max)
    }

    /// Raw network output (normalized action before the power map).
    pub fn infer_unit(&mut self, input: &[f64]) -> Result<f64> {
        if input.len() != self.input_dim {
            return Err(Error::ShapeMismatch {
                context: "inference input",
                expected: self.input_dim,
                got: input.len(),
            });
        }
        Ok(match &mut self.kind {
            EngineKind::F32(e) => e.run(input),
            EngineKind::F64(e) => e.run(input),
        })
    }
}

impl PowerPolicy for InferenceEngine {
    fn infer(&mut self, input: &[f64]) -> Result<f64> {
        let u = self.infer_unit(input)?.clamp(-1.0, 1.0);
        Ok(unit_to_power(u, self.p_min, self.p_max))
    }
}

pub fn load_engine(path: &Path) -> Result<InferenceEngine> {
    InferenceEngine::from_artifact(&ModelArtifact::read(path)?)
}

/// Deliberately unoptimized path: re-decodes and re-validates the artifact
/// bytes and runs the allocating forward pass on every call.
#[derive(Debug, Clone)]
pub struct NaiveEngine {
    bytes: Vec<u8>,
}

impl NaiveEngine {
    pub fn new(artifact: &ModelArtifact) -> Self {
        NaiveEngine {
            bytes: artifact.to_bytes(),
        }
    }
}

impl PowerPolicy for NaiveEngine {
    fn infer(&mut self, input: &[f64]) -> Result<f64> {
        let artifact = ModelArtifact::from_bytes(&self.bytes)?;
        let u = artifact.params.forward(input)?[0].clamp(-1.0, 1.0);
        Ok(unit_to_power(u, artifact.p_min, artifact.p_max))
    }
}

/// Latency distribution of single inference calls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatencyStats {
    pub median_ns: f64,
    pub mean_ns: f64,
    pub p99_ns: f64,
    pub n_runs: usize,
    /// Median cost of an empty timed region, already subtracted from every
    /// sample above.
    pub timer_overhead_ns: f64,
}

impl LatencyStats {
    pub const CSV_HEADER: &'static str = "format,median_ns,mean_ns,p99_ns,n_runs";

    pub fn to_csv_row(&self, format: &str) -> String {
        format!(
            "{},{:.1},{:.1},{:.1},{}",
            format, self.median_ns, self.mean_ns, self.p99_ns, self.n_runs
        )
    }
}

pub const DEFAULT_BENCH_RUNS: usize = 30_000;
pub const MIN_BENCH_RUNS: usize = 1_000;

fn median_sorted(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Median duration of an empty `Instant` timed region.
pub fn timer_overhead_ns() -> f64 {
    let mut samples: Vec<f64> = (0..MIN_BENCH_RUNS)
        .map(|_| {
            let t0 = Instant::now();
            black_box(());
            t0.elapsed().as_nanos() as f64
        })
        .collect();
    samples.sort_by(f64::total_cmp);
    median_sorted(&samples)
}

/// Times `n_runs` single calls on a fixed input after a short warmup. Each
/// sample has the clock's own overhead removed (floored at zero) so that
/// sub-100 ns calls are not dominated by reading the timer.
pub fn bench_latency<P: PowerPolicy + ?Sized>(
    policy: &mut P,
    input: &[f64],
    n_runs: usize,
) -> Result<LatencyStats> {
    if n_runs < MIN_BENCH_RUNS {
        return Err(Error::InvalidArgument(format!(
            "latency benchmark needs at least {MIN_BENCH_RUNS} runs, got {n_runs}"
        )));
    }
    for _ in 0..(n_runs / 10).min(1_000) {
        black_box(policy.infer(black_box(input))?);
    }
    let overhead = timer_overhead_ns();
    let mut samples = Vec::with_capacity(n_runs);
    for _ in 0..n_runs {
        let t0 = Instant::now();
        let out = policy.infer(black_box(input));
        let dt = t0.elapsed();
        black_box(out?);
        samples.push((dt.as_nanos() as f64 - overhead).max(0.0));
    }
    let mean_ns = samples.iter().sum::<f64>() / n_runs as f64;
    samples.sort_by(f64::total_cmp);
    let median_ns = median_sorted(&samples);
    let p99_idx = ((0.99 * n_runs as f64).ceil() as usize).clamp(1, n_runs) - 1;
    Ok(LatencyStats {
        median_ns,
        mean_ns,
        p99_ns: samples[p99_idx],
        n_runs,
        timer_overhead_ns: overhead,
    })
}
