//! Per-execution pricing under the five accounting methods.
//!
//! Every function here is a pure function of its arguments. Amounts carry
//! method-specific units and are never converted between methods:
//!
//! | method  | unit                      |
//! |---------|---------------------------|
//! | Runtime | core-seconds              |
//! | Energy  | joules                    |
//! | Peak    | core-seconds x perf score |
//! | EBA     | joule-equivalents         |
//! | CBA     | gCO2e                     |

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::carbon::{
    machine_age, CarbonError, CarbonIntensitySeries, DepreciationSchedule, DEFAULT_ANNUAL_RATE,
    SECONDS_PER_HOUR,
};
use crate::machine::{Machine, MachineId};

pub const JOULES_PER_KWH: f64 = 3.6e6;

#[derive(Debug, Error, PartialEq)]
pub enum AccountingError {
    #[error("execution of `{job}`: {reason}")]
    InvalidExecution { job: String, reason: String },
    #[error("execution targets machine `{exec}` but was priced on `{machine}`")]
    MachineMismatch { exec: MachineId, machine: MachineId },
    #[error("beta must lie in (0, 1], got {0}")]
    BadBeta(f64),
    #[error("intensity series is for region `{series}`, machine is in `{machine}`")]
    RegionMismatch { series: String, machine: String },
    #[error(transparent)]
    Carbon(#[from] CarbonError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    Runtime,
    Energy,
    Peak,
    #[serde(rename = "EBA")]
    Eba,
    #[serde(rename = "CBA")]
    Cba,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Runtime,
        Method::Energy,
        Method::Peak,
        Method::Eba,
        Method::Cba,
    ];

    pub fn unit(self) -> &'static str {
        match self {
            Method::Runtime => "core-s",
            Method::Energy => "J",
            Method::Peak => "core-s*perf",
            Method::Eba => "J",
            Method::Cba => "gCO2e",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Runtime => "Runtime",
            Method::Energy => "Energy",
            Method::Peak => "Peak",
            Method::Eba => "EBA",
            Method::Cba => "CBA",
        })
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "runtime" => Ok(Method::Runtime),
            "energy" => Ok(Method::Energy),
            "peak" => Ok(Method::Peak),
            "eba" => Ok(Method::Eba),
            "cba" => Ok(Method::Cba),
            _ => Err(format!("unknown accounting method `{s}`")),
        }
    }
}

/// How the grid intensity entering the operational-carbon term is chosen.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntensityMode {
    /// Intensity of the hour in which the job starts.
    #[default]
    AtStart,
    /// Duration-weighted mean over the job's span.
    Integrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AccountingParams {
    /// Weight on the potential-energy term of EBA.
    pub beta: f64,
    pub mode: IntensityMode,
    /// Annual rate of the accelerated embodied-carbon schedule used by CBA.
    pub annual_rate: f64,
}

impl Default for AccountingParams {
    fn default() -> Self {
        AccountingParams {
            beta: 1.0,
            mode: IntensityMode::AtStart,
            annual_rate: DEFAULT_ANNUAL_RATE,
        }
    }
}

/// One job run (measured or predicted) on one machine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Execution {
    pub job_id: String,
    pub machine_id: MachineId,
    pub duration_s: f64,
    pub energy_j: f64,
    pub cores_used: u32,
    /// Epoch seconds.
    pub start_time: f64,
}

impl Execution {
    pub fn validate(&self, m: &Machine) -> Result<(), AccountingError> {
        let bad = |reason: String| {
            Err(AccountingError::InvalidExecution {
                job: self.job_id.clone(),
                reason,
            })
        };
        if self.machine_id != m.id {
            return Err(AccountingError::MachineMismatch {
                exec: self.machine_id.clone(),
                machine: m.id.clone(),
            });
        }
        if !(self.duration_s.is_finite() && self.duration_s >= 0.0) {
            return bad(format!("duration {} must be >= 0", self.duration_s));
        }
        if !(self.energy_j.is_finite() && self.energy_j >= 0.0) {
            return bad(format!("energy {} must be >= 0", self.energy_j));
        }
        if !self.start_time.is_finite() {
            return bad("start time must be finite".into());
        }
        if !m.fits(self.cores_used) {
            return bad(format!(
                "uses {} cores, machine `{}` has {}",
                self.cores_used,
                m.id,
                m.total_cores()
            ));
        }
        Ok(())
    }
}

/// Price of one execution under one method. When `breakdown` is non-empty,
/// `amount` is the sum of its components.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostQuote {
    pub method: Method,
    pub amount: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub breakdown: BTreeMap<String, f64>,
}

impl CostQuote {
    fn plain(method: Method, amount: f64) -> Self {
        CostQuote {
            method,
            amount,
            breakdown: BTreeMap::new(),
        }
    }

    fn composed(method: Method, parts: [(&str, f64); 2]) -> Self {
        let breakdown: BTreeMap<String, f64> =
            parts.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        let amount = breakdown.values().sum();
        CostQuote {
            method,
            amount,
            breakdown,
        }
    }
}

/// Node TDP prorated by the fraction of node cores the job occupies.
pub fn tdp_share(m: &Machine, cores_used: u32) -> f64 {
    let share = m.tdp_watts * (f64::from(cores_used) / f64::from(m.cores_per_node));
    share.min(m.tdp_watts * f64::from(m.node_count))
}

/// Fraction of the machine's total cores the job occupies.
pub fn core_share(m: &Machine, cores_used: u32) -> f64 {
    f64::from(cores_used) / m.total_cores() as f64
}

pub fn cost_runtime(exec: &Execution) -> CostQuote {
    CostQuote::plain(
        Method::Runtime,
        f64::from(exec.cores_used) * exec.duration_s,
    )
}

pub fn cost_energy(exec: &Execution, m: &Machine) -> CostQuote {
    CostQuote::plain(Method::Energy, exec.energy_j * m.pue)
}

pub fn cost_peak(exec: &Execution, m: &Machine) -> CostQuote {
    CostQuote::plain(
        Method::Peak,
        f64::from(exec.cores_used) * exec.duration_s * m.peak_perf_per_core,
    )
}

/// Energy-based accounting: the mean of the energy the job used and the
/// energy its share of the node would draw at TDP for the same duration.
pub fn cost_eba(exec: &Execution, m: &Machine, beta: f64) -> Result<CostQuote, AccountingError> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(AccountingError::BadBeta(beta));
    }
    exec.validate(m)?;
    let measured = exec.energy_j * m.pue;
    let potential = beta * exec.duration_s * tdp_share(m, exec.cores_used);
    Ok(CostQuote::composed(
        Method::Eba,
        [("measured", measured / 2.0), ("potential", potential / 2.0)],
    ))
}

/// Embodied-carbon rate (g/h) of the whole machine for a job starting at `t`.
pub fn embodied_rate(m: &Machine, t: f64, annual_rate: f64) -> Result<f64, AccountingError> {
    let age = machine_age(m.year_deployed, t)?;
    Ok(DepreciationSchedule::accelerated(m.embodied_carbon_g)
        .with_rate(annual_rate)
        .hourly_carbon_rate(age)?)
}

/// Carbon-based accounting: operational carbon of the (PUE-scaled) energy
/// plus the job's core share of the machine's depreciated embodied carbon.
pub fn cost_cba(
    exec: &Execution,
    m: &Machine,
    ci: &CarbonIntensitySeries,
    params: &AccountingParams,
) -> Result<CostQuote, AccountingError> {
    exec.validate(m)?;
    if ci.region_id != m.region_id {
        return Err(AccountingError::RegionMismatch {
            series: ci.region_id.clone(),
            machine: m.region_id.clone(),
        });
    }
    let intensity = match params.mode {
        IntensityMode::AtStart => ci.intensity_at(exec.start_time)?,
        IntensityMode::Integrated => {
            ci.mean_intensity(exec.start_time, exec.start_time + exec.duration_s)?
        }
    };
    let operational = exec.energy_j * m.pue / JOULES_PER_KWH * intensity;
    let rate = embodied_rate(m, exec.start_time, params.annual_rate)?;
    let embodied = rate * (exec.duration_s / SECONDS_PER_HOUR) * core_share(m, exec.cores_used);
    Ok(CostQuote::composed(
        Method::Cba,
        [("embodied_g", embodied), ("operational_g", operational)],
    ))
}

/// Prices `exec` under one method. `ci` is only consulted for CBA.
pub fn quote(
    method: Method,
    exec: &Execution,
    m: &Machine,
    ci: Option<&CarbonIntensitySeries>,
    params: &AccountingParams,
) -> Result<CostQuote, AccountingError> {
    match method {
        Method::Runtime => {
            exec.validate(m)?;
            Ok(cost_runtime(exec))
        }
        Method::Energy => {
            exec.validate(m)?;
            Ok(cost_energy(exec, m))
        }
        Method::Peak => {
            exec.validate(m)?;
            Ok(cost_peak(exec, m))
        }
        Method::Eba => cost_eba(exec, m, params.beta),
        Method::Cba => {
            let ci = ci.ok_or_else(|| CarbonError::MissingRegion(m.region_id.clone()))?;
            cost_cba(exec, m, ci, params)
        }
    }
}

pub fn quote_all(
    exec: &Execution,
    m: &Machine,
    ci: &CarbonIntensitySeries,
    params: &AccountingParams,
) -> Result<BTreeMap<Method, CostQuote>, AccountingError> {
    Method::ALL
        .iter()
        .map(|&method| Ok((method, quote(method, exec, m, Some(ci), params)?)))
        .collect()
}
