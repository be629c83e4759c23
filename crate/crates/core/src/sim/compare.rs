use serde::{Deserialize, Serialize};

use super::engine::{run, PricingContext, SimConfig, SimulationResult};
use super::policy::PolicyKind;
use super::SimError;
use crate::carbon::IntensityBook;
use crate::machine::{Machine, MachineId};
use crate::workload::JobProfile;

/// How the allocation for a policy comparison is sized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum BudgetRule {
    Unlimited,
    Fixed {
        amount: f64,
    },
    /// A fraction of what an unbudgeted Greedy run spends.
    GreedySpend {
        fraction: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRun {
    pub policy: PolicyKind,
    pub result: SimulationResult,
}

fn resolve_budget(
    rule: BudgetRule,
    profiles: &[JobProfile],
    machines: &[Machine],
    config: &SimConfig,
    book: &IntensityBook,
) -> Result<Option<f64>, SimError> {
    match rule {
        BudgetRule::Unlimited => Ok(None),
        BudgetRule::Fixed { amount } => Ok(Some(amount)),
        BudgetRule::GreedySpend { fraction } => {
            if !(fraction.is_finite() && fraction >= 0.0) {
                return Err(SimError::Invalid(format!(
                    "budget fraction {fraction} must be >= 0"
                )));
            }
            let free = SimConfig {
                budget: None,
                ..config.clone()
            };
            let r = run(profiles, machines, &PolicyKind::Greedy, &free, book)?;
            Ok(Some(r.spent * fraction))
        }
    }
}

/// Runs every policy on the same workload and allocation, one thread each.
/// Results come back in `policies` order.
pub fn compare_policies(
    profiles: &[JobProfile],
    machines: &[Machine],
    policies: &[PolicyKind],
    config: &SimConfig,
    rule: BudgetRule,
    book: &IntensityBook,
) -> Result<Vec<PolicyRun>, SimError> {
    let budget = resolve_budget(rule, profiles, machines, config, book)?;
    let config = SimConfig {
        budget,
        ..config.clone()
    };
    std::thread::scope(|s| {
        let handles: Vec<_> = policies
            .iter()
            .map(|p| {
                let config = &config;
                s.spawn(move || run(profiles, machines, p, config, book))
            })
            .collect();
        handles
            .into_iter()
            .zip(policies)
            .map(|(h, p)| {
                let result = h.join().expect("simulation thread panicked")?;
                Ok(PolicyRun {
                    policy: p.clone(),
                    result,
                })
            })
            .collect()
    })
}

/// Cheapest machine for one job at each hour start in `[t0, t1)`, pricing
/// it as if it started on an idle machine at that instant.
pub fn hourly_cheapest(
    profile: &JobProfile,
    ctx: &PricingContext<'_>,
    t0: f64,
    t1: f64,
) -> Result<Vec<(f64, MachineId)>, SimError> {
    let mut out = Vec::new();
    let mut t = t0;
    while t < t1 {
        let mut best: Option<(f64, &MachineId)> = None;
        for id in &profile.eligible_machines {
            let p = ctx.price(profile, id, t)?;
            if best.is_none_or(|(bp, bid)| p < bp || (p == bp && id < bid)) {
                best = Some((p, id));
            }
        }
        if let Some((_, id)) = best {
            out.push((t, id.clone()));
        }
        t += 3600.0;
    }
    Ok(out)
}
