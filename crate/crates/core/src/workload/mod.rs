//! From a single-machine job trace to per-machine job profiles.
//!
//! The trace only records each job's runtime and energy on a reference
//! machine. Hardware-counter vectors are drawn per job from a Gaussian
//! mixture, and a k-nearest-neighbour model trained on benchmark runs maps
//! counters to runtime scale factors and power draw on every other machine.

mod mixture;
mod neighbors;
mod profiles;
pub mod synth;
mod trace;

use thiserror::Error;

pub use mixture::{fit_mixture, sample_counters, EmConfig, MixtureComponent, MixtureModel};
pub use neighbors::{predict_execution, MachineResponse, NeighborModel, TrainingPoint};
pub use profiles::{
    build_profiles, load_profiles, save_profiles, work_of, BuildOptions, JobProfile,
    MachineEstimate, Priority,
};
pub use trace::{load_trace, parse_trace, write_trace, LoadOptions, LoadedTrace, TraceRecord};

use crate::machine::MachineId;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("trace line {line}: {reason}")]
    Parse { line: u64, reason: String },
    #[error("trace line {line}: duplicate job id `{job_id}`")]
    DuplicateJob { line: u64, job_id: String },
    #[error("need at least {k} samples to fit {k} components, got {n}")]
    TooFewSamples { k: usize, n: usize },
    #[error("all samples are identical; cannot fit a mixture")]
    DegenerateSamples,
    #[error("counter vectors must all have dimension {expected}, found {found}")]
    Dimension { expected: usize, found: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("machine `{0}` is absent from the training data")]
    UnknownTarget(MachineId),
    #[error("job `{0}` has no eligible machine")]
    NoEligibleMachine(String),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Csv(#[from] csv::Error),
}

/// A fixed-order vector of hardware-counter rates, e.g. instructions/s and
/// LLC misses/s.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(transparent)]
pub struct CounterVector(pub Vec<f64>);

impl CounterVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Names of the default two-counter feature space.
pub const DEFAULT_COUNTERS: [&str; 2] = ["instructions_per_s", "llc_misses_per_s"];

/// Stable 64-bit seed for a record, independent of processing order.
pub(crate) fn derive_seed(seed: u64, key: &str) -> u64 {
    // FNV-1a over the seed bytes followed by the key.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seed.to_le_bytes().iter().chain(key.as_bytes()) {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
