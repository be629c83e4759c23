use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GameError, GameVersion};
use crate::accounting::{self, AccountingParams, Execution, Method};
use crate::machine::{self, Machine, MachineId};
use crate::workload::JobProfile;

pub const DEFAULT_INITIAL_WINDOW: usize = 8;
pub const DEFAULT_MIN_DURATION_S: f64 = 60.0;

fn default_window() -> usize {
    DEFAULT_INITIAL_WINDOW
}
fn default_min_duration() -> f64 {
    DEFAULT_MIN_DURATION_S
}
fn default_beta() -> f64 {
    1.0
}

/// Jobs, machines and rules of one game. Every participant sees the same
/// job sequence in `jobs` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameFixture {
    pub machines: Vec<Machine>,
    pub jobs: Vec<JobProfile>,
    /// Allocation for V1 and V2 sessions, in core-seconds.
    pub budget: f64,
    /// Session length on the simulated clock, seconds.
    pub deadline_s: f64,
    /// Clock advance per placement, as a fraction of the job's runtime on
    /// the chosen machine.
    pub clock_fraction: f64,
    /// Machine whose prices calibrate the V3 allocation.
    pub reference: MachineId,
    #[serde(default = "default_window")]
    pub initial_window: usize,
    /// Finished sessions shorter than this (wall clock) are flagged.
    #[serde(default = "default_min_duration")]
    pub min_duration_s: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub seed: u64,
}

impl GameFixture {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, GameError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| GameError::Fixture(format!("{}: {e}", path.display())))?;
        let f: GameFixture = serde_json::from_str(&text)
            .map_err(|e| GameError::Fixture(format!("{}: {e}", path.display())))?;
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<(), GameError> {
        let bad = |s: String| Err(GameError::Fixture(s));
        machine::validate_machines(&self.machines)
            .map_err(|e| GameError::Fixture(e.to_string()))?;
        if self.jobs.is_empty() {
            return bad("no jobs".into());
        }
        if !(self.budget.is_finite() && self.budget > 0.0) {
            return bad(format!("budget {} must be > 0", self.budget));
        }
        if !(self.deadline_s.is_finite() && self.deadline_s > 0.0) {
            return bad(format!("deadline_s {} must be > 0", self.deadline_s));
        }
        if !(self.clock_fraction.is_finite() && self.clock_fraction >= 0.0) {
            return bad(format!(
                "clock_fraction {} must be >= 0",
                self.clock_fraction
            ));
        }
        if self.initial_window == 0 {
            return bad("initial_window must be >= 1".into());
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return bad(format!("beta {} must lie in (0, 1]", self.beta));
        }
        if machine::find(&self.machines, &self.reference).is_none() {
            return bad(format!(
                "reference machine `{}` is not listed",
                self.reference
            ));
        }
        let mut ids = HashSet::new();
        for j in &self.jobs {
            if !ids.insert(j.job_id.as_str()) {
                return bad(format!("duplicate job `{}`", j.job_id));
            }
            for m in &self.machines {
                match j.estimate(&m.id) {
                    Some(e) if e.runtime_s > 0.0 && e.energy_j > 0.0 => {}
                    _ => {
                        return bad(format!(
                            "job `{}` lacks an estimate for `{}`",
                            j.job_id, m.id
                        ))
                    }
                }
            }
        }
        self.v3_budget()?;
        Ok(())
    }

    pub fn machine(&self, id: &str) -> Option<&Machine> {
        self.machines.iter().find(|m| m.id.as_str() == id)
    }

    pub fn job(&self, id: &str) -> Option<(usize, &JobProfile)> {
        self.jobs.iter().enumerate().find(|(_, j)| j.job_id == id)
    }

    fn execution(job: &JobProfile, m: &Machine) -> Execution {
        let est = job.estimate(&m.id).expect("validated fixture");
        Execution {
            job_id: job.job_id.clone(),
            machine_id: m.id.clone(),
            duration_s: est.runtime_s,
            energy_j: est.energy_j,
            cores_used: job.cores_requested,
            start_time: 0.0,
        }
    }

    fn price(&self, method: Method, job: &JobProfile, m: &Machine) -> Result<f64, GameError> {
        let params = AccountingParams {
            beta: self.beta,
            ..AccountingParams::default()
        };
        let exec = Self::execution(job, m);
        accounting::quote(method, &exec, m, None, &params)
            .map(|q| q.amount)
            .map_err(|e| GameError::Fixture(e.to_string()))
    }

    /// Cost of `job` on `m` under `version`: core-seconds for V1 and V2,
    /// the energy-based amount in joules for V3.
    pub fn cost(
        &self,
        version: GameVersion,
        job: &JobProfile,
        m: &Machine,
    ) -> Result<f64, GameError> {
        match version {
            GameVersion::V1 | GameVersion::V2 => self.price(Method::Runtime, job, m),
            GameVersion::V3 => self.price(Method::Eba, job, m),
        }
    }

    /// V1 allocation rescaled by the mean energy-based to mean core-time
    /// price ratio of the jobs that fit the reference machine.
    pub fn v3_budget(&self) -> Result<f64, GameError> {
        let r = machine::find(&self.machines, &self.reference).expect("validated reference");
        let (mut eba, mut rt) = (0.0, 0.0);
        for j in self.jobs.iter().filter(|j| r.fits(j.cores_requested)) {
            eba += self.price(Method::Eba, j, r)?;
            rt += self.price(Method::Runtime, j, r)?;
        }
        if rt == 0.0 {
            return Err(GameError::Fixture(format!(
                "no job fits reference `{}`",
                self.reference
            )));
        }
        Ok(self.budget * (eba / rt))
    }

    pub fn budget_for(&self, version: GameVersion) -> Result<f64, GameError> {
        match version {
            GameVersion::V1 | GameVersion::V2 => Ok(self.budget),
            GameVersion::V3 => self.v3_budget(),
        }
    }
}

/// Knobs for [`GameFixture::from_profiles`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixtureShape {
    pub jobs: usize,
    /// V1 allocation as a fraction of running every job on the reference machine.
    pub budget_fraction: f64,
    pub clock_fraction: f64,
    /// Deadline as a fraction of the clock needed to place every job on the
    /// reference machine.
    pub deadline_fraction: f64,
}

impl Default for FixtureShape {
    fn default() -> Self {
        FixtureShape {
            jobs: 20,
            budget_fraction: 0.6,
            clock_fraction: 0.1,
            deadline_fraction: 0.7,
        }
    }
}

impl GameFixture {
    /// A fixture from the first `shape.jobs` profiles.
    pub fn from_profiles(
        machines: Vec<Machine>,
        profiles: &[JobProfile],
        reference: MachineId,
        shape: FixtureShape,
        seed: u64,
    ) -> Result<Self, GameError> {
        let jobs: Vec<JobProfile> = profiles.iter().take(shape.jobs).cloned().collect();
        let r = machine::find(&machines, &reference)
            .ok_or_else(|| GameError::Fixture(format!("unknown reference `{reference}`")))?;
        let (mut core_s, mut runtime) = (0.0, 0.0);
        for j in &jobs {
            let est = j.estimate(&r.id).ok_or_else(|| {
                GameError::Fixture(format!("job `{}` lacks `{reference}`", j.job_id))
            })?;
            core_s += f64::from(j.cores_requested) * est.runtime_s;
            runtime += est.runtime_s;
        }
        let f = GameFixture {
            machines,
            jobs,
            budget: (shape.budget_fraction * core_s).round(),
            deadline_s: (shape.deadline_fraction * shape.clock_fraction * runtime).round(),
            clock_fraction: shape.clock_fraction,
            reference,
            initial_window: DEFAULT_INITIAL_WINDOW,
            min_duration_s: DEFAULT_MIN_DURATION_S,
            beta: 1.0,
            seed,
        };
        f.validate()?;
        Ok(f)
    }
}
