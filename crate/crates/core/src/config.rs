//! TOML configuration for `impact simulate`.
//!
//! ```toml
//! seed = 7
//! method = "EBA"
//! machines = "fixtures/machines.toml"
//! intensity = ["fixtures/intensity/faster.txt"]
//! policies = ["Greedy", "Energy", "Fixed:IC"]
//! horizon_hours = 72.0
//!
//! [budget]
//! rule = "greedy_spend"
//! fraction = 0.5
//!
//! [workload]
//! trace = "fixtures/sample_trace.csv"
//! reference = "IC"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::accounting::{AccountingParams, Method};
use crate::carbon::{CarbonError, IntensityBook};
use crate::machine::{self, Machine, MachineError, MachineId};
use crate::sim::{BudgetRule, PolicyKind, SimConfig, UserMode};
use crate::workload::synth::{counter_samples, training_set};
use crate::workload::{
    build_profiles, derive_seed, fit_mixture, load_profiles, load_trace, BuildOptions, EmConfig,
    JobProfile, LoadOptions, NeighborModel, TraceRecord, WorkloadError,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Toml {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Machine(#[from] MachineError),
    #[error(transparent)]
    Carbon(#[from] CarbonError),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadConfig {
    /// Pre-built profiles; takes precedence over `trace`.
    pub profiles: Option<PathBuf>,
    /// Reference-machine trace to extrapolate.
    pub trace: Option<PathBuf>,
    /// Machine the trace was measured on.
    pub reference: Option<MachineId>,
    pub repeat: u32,
    pub collapse_repetitions: bool,
    pub mixture_components: usize,
    pub counter_samples: usize,
    pub neighbors: usize,
    pub training_points: usize,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            profiles: None,
            trace: None,
            reference: None,
            repeat: 2,
            collapse_repetitions: false,
            mixture_components: 3,
            counter_samples: 600,
            neighbors: 5,
            training_points: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default)]
    pub seed: u64,
    pub method: Method,
    pub machines: PathBuf,
    #[serde(default)]
    pub intensity: Vec<PathBuf>,
    /// Defaults to the five adaptive policies plus one fixed policy per machine.
    #[serde(default)]
    pub policies: Option<Vec<PolicyKind>>,
    #[serde(default = "unlimited")]
    pub budget: BudgetRule,
    /// Hours after the first submission at which the run stops.
    #[serde(default)]
    pub horizon_hours: Option<f64>,
    #[serde(default)]
    pub user_mode: UserMode,
    #[serde(default)]
    pub accounting: AccountingParams,
    pub workload: WorkloadConfig,
}

fn unlimited() -> BudgetRule {
    BudgetRule::Unlimited
}

/// Everything a simulation sweep needs, loaded and validated.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub machines: Vec<Machine>,
    pub book: IntensityBook,
    pub profiles: Vec<JobProfile>,
    pub policies: Vec<PolicyKind>,
    pub sim: SimConfig,
    pub budget: BudgetRule,
}

impl SimulateConfig {
    pub fn parse(text: &str, origin: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Toml {
            path: origin.to_path_buf(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    /// Resolves relative fixture paths against `root` instead of the
    /// working directory.
    pub fn rebase(&mut self, root: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = root.join(&*p);
            }
        };
        fix(&mut self.machines);
        self.intensity.iter_mut().for_each(fix);
        if let Some(p) = self.workload.profiles.as_mut() {
            fix(p);
        }
        if let Some(p) = self.workload.trace.as_mut() {
            fix(p);
        }
    }

    /// Loads fixtures and builds (or reads) the job profiles.
    pub fn prepare(&self) -> Result<Prepared, ConfigError> {
        let machines = machine::load_machines(&self.machines)?;
        let book = IntensityBook::load_files(&self.intensity)?;
        // Carbon totals are reported for every method.
        for m in &machines {
            book.get(&m.region_id)?;
        }
        if !(self.accounting.beta > 0.0 && self.accounting.beta <= 1.0) {
            return Err(ConfigError::Invalid(format!(
                "accounting.beta = {} must lie in (0, 1]",
                self.accounting.beta
            )));
        }

        let profiles = self.load_profiles(&machines)?;
        if profiles.is_empty() {
            return Err(ConfigError::Invalid("workload has no jobs".into()));
        }

        let policies = match &self.policies {
            Some(p) if p.is_empty() => {
                return Err(ConfigError::Invalid("policies is empty".into()))
            }
            Some(p) => p.clone(),
            None => PolicyKind::standard_set(machines.iter().map(|m| &m.id)),
        };
        for p in &policies {
            if let PolicyKind::Fixed(id) = p {
                machine::find(&machines, id).ok_or_else(|| {
                    ConfigError::Invalid(format!("policy {p} names unknown machine"))
                })?;
            }
        }

        let first = profiles
            .iter()
            .map(|p| p.submit_time)
            .min_by(f64::total_cmp)
            .expect("nonempty");
        let horizon = match self.horizon_hours {
            Some(h) if !(h.is_finite() && h > 0.0) => {
                return Err(ConfigError::Invalid(format!(
                    "horizon_hours = {h} must be > 0"
                )))
            }
            Some(h) => Some(first + h * 3600.0),
            None => None,
        };
        Ok(Prepared {
            sim: SimConfig {
                method: self.method,
                params: self.accounting,
                budget: None,
                horizon,
                user_mode: self.user_mode,
            },
            machines,
            book,
            profiles,
            policies,
            budget: self.budget,
        })
    }

    fn load_profiles(&self, machines: &[Machine]) -> Result<Vec<JobProfile>, ConfigError> {
        let w = &self.workload;
        if let Some(path) = &w.profiles {
            return Ok(load_profiles(path)?);
        }
        let Some(trace) = &w.trace else {
            return Err(ConfigError::Invalid(
                "workload needs either `profiles` or `trace`".into(),
            ));
        };
        let reference = w.reference.clone().ok_or_else(|| {
            ConfigError::Invalid("workload.reference is required with a trace".into())
        })?;
        let loaded = load_trace(
            trace,
            LoadOptions {
                collapse_repetitions: w.collapse_repetitions,
            },
        )?;
        Ok(profiles_from_trace(
            &loaded.records,
            machines,
            &reference,
            w,
            self.seed,
        )?)
    }
}

/// Extrapolates reference-machine trace records to every machine: fits the
/// counter mixture and the neighbour model on seeded synthetic captures,
/// then expands each record `w.repeat` times.
pub fn profiles_from_trace(
    records: &[TraceRecord],
    machines: &[Machine],
    reference: &MachineId,
    w: &WorkloadConfig,
    seed: u64,
) -> Result<Vec<JobProfile>, WorkloadError> {
    let samples = counter_samples(w.counter_samples, derive_seed(seed, "counters"));
    let mixture = fit_mixture(
        &samples,
        w.mixture_components,
        derive_seed(seed, "mixture"),
        EmConfig::default(),
    )?;
    let points = training_set(
        machines,
        reference,
        w.training_points,
        derive_seed(seed, "training"),
    )?;
    let neighbors = NeighborModel::fit(reference.clone(), points, w.neighbors)?;
    build_profiles(
        records,
        machines,
        &mixture,
        &neighbors,
        &BuildOptions {
            repeat: w.repeat,
            seed,
            share_repetition_characteristics: true,
        },
    )
}
