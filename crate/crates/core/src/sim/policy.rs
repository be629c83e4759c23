use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::engine::PricingContext;
use super::state::ClusterState;
use super::SimError;
use crate::machine::MachineId;
use crate::workload::JobProfile;

/// How a user picks the machine for each job.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PolicyKind {
    /// Cheapest under the active accounting method.
    Greedy,
    /// Least energy.
    Energy,
    /// Greedy, unless another machine finishes within half the time.
    Mixed,
    /// Earliest finish: queue wait plus runtime.
    Eft,
    /// Shortest runtime.
    Runtime,
    /// Always the named machine.
    Fixed(MachineId),
}

impl PolicyKind {
    /// The five adaptive policies followed by one fixed policy per machine id.
    pub fn standard_set<'a>(fixed: impl IntoIterator<Item = &'a MachineId>) -> Vec<PolicyKind> {
        let mut v = vec![
            PolicyKind::Greedy,
            PolicyKind::Energy,
            PolicyKind::Mixed,
            PolicyKind::Eft,
            PolicyKind::Runtime,
        ];
        v.extend(fixed.into_iter().cloned().map(PolicyKind::Fixed));
        v
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::Greedy => f.write_str("Greedy"),
            PolicyKind::Energy => f.write_str("Energy"),
            PolicyKind::Mixed => f.write_str("Mixed"),
            PolicyKind::Eft => f.write_str("EFT"),
            PolicyKind::Runtime => f.write_str("Runtime"),
            PolicyKind::Fixed(m) => write!(f, "Fixed:{m}"),
        }
    }
}

impl FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some((head, id)) = s.split_once(':') {
            if head.eq_ignore_ascii_case("fixed") && !id.is_empty() {
                return Ok(PolicyKind::Fixed(MachineId::new(id)));
            }
        }
        match s.to_ascii_lowercase().as_str() {
            "greedy" => Ok(PolicyKind::Greedy),
            "energy" => Ok(PolicyKind::Energy),
            "mixed" => Ok(PolicyKind::Mixed),
            "eft" => Ok(PolicyKind::Eft),
            "runtime" => Ok(PolicyKind::Runtime),
            _ => Err(format!("unknown policy `{s}`")),
        }
    }
}

impl TryFrom<String> for PolicyKind {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<PolicyKind> for String {
    fn from(p: PolicyKind) -> Self {
        p.to_string()
    }
}

/// A policy's pick with the admission quote priced at the estimated start.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub machine: MachineId,
    pub estimated_wait: f64,
    pub quote: f64,
}

struct Candidate {
    id: MachineId,
    wait: f64,
    runtime: f64,
    energy: f64,
}

impl Candidate {
    fn completion(&self) -> f64 {
        self.wait + self.runtime
    }
}

/// Index of the minimal key; ties go to the lowest machine id.
fn argmin_by(cands: &[Candidate], key: impl Fn(&Candidate) -> f64) -> usize {
    let mut best = 0;
    for i in 1..cands.len() {
        let (a, b) = (key(&cands[i]), key(&cands[best]));
        if a < b || (a == b && cands[i].id < cands[best].id) {
            best = i;
        }
    }
    best
}

/// Picks a machine for `profile` at time `now`. Returns `Ok(None)` when the
/// job cannot be placed under this policy.
pub fn select_machine(
    policy: &PolicyKind,
    profile: &JobProfile,
    state: &ClusterState,
    user: Option<u32>,
    now: f64,
    ctx: &PricingContext<'_>,
) -> Result<Option<Selection>, SimError> {
    let mut cands = Vec::with_capacity(profile.eligible_machines.len());
    for id in &profile.eligible_machines {
        if matches!(policy, PolicyKind::Fixed(only) if only != id) {
            continue;
        }
        let est = profile
            .estimate(id)
            .ok_or_else(|| SimError::MissingEstimate {
                job: profile.job_id.clone(),
                machine: id.clone(),
            })?;
        cands.push(Candidate {
            id: id.clone(),
            wait: state.estimate_wait(id, profile.cores_requested, user, now)?,
            runtime: est.runtime_s,
            energy: est.energy_j,
        });
    }
    if cands.is_empty() {
        return Ok(None);
    }

    let price = |c: &Candidate| ctx.price(profile, &c.id, now + c.wait);
    let cheapest = || -> Result<usize, SimError> {
        let prices = cands.iter().map(price).collect::<Result<Vec<_>, _>>()?;
        let mut best = 0;
        for i in 1..cands.len() {
            if prices[i] < prices[best]
                || (prices[i] == prices[best] && cands[i].id < cands[best].id)
            {
                best = i;
            }
        }
        Ok(best)
    };

    let pick = match policy {
        PolicyKind::Greedy => cheapest()?,
        PolicyKind::Energy => argmin_by(&cands, |c| c.energy),
        PolicyKind::Runtime => argmin_by(&cands, |c| c.runtime),
        PolicyKind::Eft => argmin_by(&cands, Candidate::completion),
        PolicyKind::Mixed => {
            let greedy = cheapest()?;
            let limit = 0.5 * cands[greedy].completion();
            let fastest = argmin_by(&cands, Candidate::completion);
            if cands[fastest].completion() <= limit {
                fastest
            } else {
                greedy
            }
        }
        PolicyKind::Fixed(_) => 0,
    };
    let chosen = &cands[pick];
    Ok(Some(Selection {
        machine: chosen.id.clone(),
        estimated_wait: chosen.wait,
        quote: price(chosen)?,
    }))
}
