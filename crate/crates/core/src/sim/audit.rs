use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use super::engine::{EventKind, SimulationResult};
use crate::machine::{Machine, MachineId};

/// Invariant violations found in a finished run. Empty means clean.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub checked_events: usize,
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Replays the event log of `result` and checks capacity, budget,
/// no-migration, FIFO start order, the per-user running limit, timeline
/// monotonicity and that attributed carbon covers operational carbon.
pub fn audit(result: &SimulationResult, machines: &[Machine]) -> AuditReport {
    let mut v = Vec::new();
    let capacity: BTreeMap<&MachineId, u64> =
        machines.iter().map(|m| (&m.id, m.total_cores())).collect();
    let mut occupied: BTreeMap<&MachineId, u64> = BTreeMap::new();
    let mut admitted_on: HashMap<&str, &MachineId> = HashMap::new();
    let mut started: HashSet<&str> = HashSet::new();
    let mut fifo: BTreeMap<&MachineId, VecDeque<&str>> = BTreeMap::new();
    let mut running_users: HashSet<(&str, &MachineId)> = HashSet::new();
    let mut job_user: HashMap<&str, &str> = HashMap::new();
    let mut last_time = f64::NEG_INFINITY;

    for ev in &result.events {
        let job = ev.job_id.as_str();
        if ev.time < last_time {
            v.push(format!(
                "event for `{job}` at {} goes back in time",
                ev.time
            ));
        }
        last_time = ev.time;
        let Some(&cap) = capacity.get(&ev.machine) else {
            v.push(format!(
                "event for `{job}` on unknown machine `{}`",
                ev.machine
            ));
            continue;
        };
        match ev.kind {
            EventKind::Admit => {
                if admitted_on.insert(job, &ev.machine).is_some() {
                    v.push(format!("`{job}` admitted twice"));
                }
                job_user.insert(job, ev.user_id.as_str());
                fifo.entry(&ev.machine).or_default().push_back(job);
            }
            EventKind::Start => {
                if admitted_on.get(job) != Some(&&ev.machine) {
                    v.push(format!(
                        "`{job}` started on `{}` without admission there",
                        ev.machine
                    ));
                }
                if !started.insert(job) {
                    v.push(format!("`{job}` started twice"));
                }
                match fifo.get_mut(&ev.machine).and_then(|q| q.pop_front()) {
                    Some(head) if head == job => {}
                    other => v.push(format!(
                        "`{job}` started on `{}` out of FIFO order (head {:?})",
                        ev.machine, other
                    )),
                }
                let occ = occupied.entry(&ev.machine).or_default();
                *occ += u64::from(ev.cores);
                if *occ > cap {
                    v.push(format!(
                        "`{}` over capacity ({occ} > {cap}) at {}",
                        ev.machine, ev.time
                    ));
                }
                if *occ != ev.occupied_after {
                    v.push(format!(
                        "`{job}` start logged {} busy cores, replay says {occ}",
                        ev.occupied_after
                    ));
                }
                let user = job_user.get(job).copied().unwrap_or(ev.user_id.as_str());
                if !running_users.insert((user, &ev.machine)) {
                    v.push(format!(
                        "user `{user}` runs two jobs on `{}` at {}",
                        ev.machine, ev.time
                    ));
                }
            }
            EventKind::End => {
                if !started.contains(job) || admitted_on.get(job) != Some(&&ev.machine) {
                    v.push(format!(
                        "`{job}` ended on `{}` where it never started",
                        ev.machine
                    ));
                }
                let occ = occupied.entry(&ev.machine).or_default();
                *occ = occ.saturating_sub(u64::from(ev.cores));
                let user = job_user.get(job).copied().unwrap_or(ev.user_id.as_str());
                running_users.remove(&(user, &ev.machine));
            }
        }
        if let Some(b) = result.budget {
            if ev.spent_after > b {
                v.push(format!(
                    "spent {} exceeds budget {b} at {}",
                    ev.spent_after, ev.time
                ));
            }
        }
    }
    if let Some(b) = result.budget {
        if result.spent > b {
            v.push(format!("total spent {} exceeds budget {b}", result.spent));
        }
    }
    for (i, w) in result.timeline.windows(2).enumerate() {
        if w[1].time < w[0].time || w[1].completed != w[0].completed + 1 {
            v.push(format!("timeline not monotone at point {}", i + 1));
        }
    }
    if result.timeline.first().is_some_and(|p| p.completed != 1) {
        v.push("timeline does not start at one completion".into());
    }
    if result.timeline.len() as u64 != result.jobs_completed {
        v.push("timeline length differs from completed jobs".into());
    }
    if result.attributed_g < result.operational_g {
        v.push(format!(
            "attributed carbon {} below operational {}",
            result.attributed_g, result.operational_g
        ));
    }
    AuditReport {
        checked_events: result.events.len(),
        violations: v,
    }
}
