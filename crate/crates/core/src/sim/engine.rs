use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use super::policy::{select_machine, PolicyKind};
use super::state::{ClusterState, QueuedJob, RunningJob};
use super::SimError;
use crate::accounting::{self, AccountingParams, Execution, Method};
use crate::carbon::IntensityBook;
use crate::machine::{self, Machine, MachineId};
use crate::workload::{work_of, JobProfile};

/// What a policy needs to price a job on a machine.
#[derive(Debug, Clone, Copy)]
pub struct PricingContext<'a> {
    pub machines: &'a [Machine],
    pub book: &'a IntensityBook,
    pub method: Method,
    pub params: AccountingParams,
}

impl<'a> PricingContext<'a> {
    pub fn machine(&self, id: &MachineId) -> Result<&'a Machine, SimError> {
        machine::find(self.machines, id).ok_or_else(|| SimError::UnknownMachine(id.clone()))
    }

    pub fn execution(
        &self,
        profile: &JobProfile,
        id: &MachineId,
        start: f64,
    ) -> Result<Execution, SimError> {
        let est = profile
            .estimate(id)
            .ok_or_else(|| SimError::MissingEstimate {
                job: profile.job_id.clone(),
                machine: id.clone(),
            })?;
        Ok(Execution {
            job_id: profile.job_id.clone(),
            machine_id: id.clone(),
            duration_s: est.runtime_s,
            energy_j: est.energy_j,
            cores_used: profile.cores_requested,
            start_time: start,
        })
    }

    /// Price of running `profile` on `id` from `start` under the active method.
    pub fn price(&self, profile: &JobProfile, id: &MachineId, start: f64) -> Result<f64, SimError> {
        let m = self.machine(id)?;
        let exec = self.execution(profile, id, start)?;
        accounting::quote(
            self.method,
            &exec,
            m,
            self.book.get(&m.region_id).ok(),
            &self.params,
        )
        .map(|q| q.amount)
        .map_err(|source| SimError::Pricing {
            job: profile.job_id.clone(),
            source,
        })
    }

    /// `(operational_g, embodied_g)` of running `profile` on `id` from `start`.
    pub fn carbon(
        &self,
        profile: &JobProfile,
        id: &MachineId,
        start: f64,
    ) -> Result<(f64, f64), SimError> {
        let m = self.machine(id)?;
        let exec = self.execution(profile, id, start)?;
        let pricing = |source| SimError::Pricing {
            job: profile.job_id.clone(),
            source,
        };
        let ci = self.book.get(&m.region_id).map_err(|e| pricing(e.into()))?;
        let q = accounting::cost_cba(&exec, m, ci, &self.params).map_err(pricing)?;
        Ok((q.breakdown["operational_g"], q.breakdown["embodied_g"]))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum UserMode {
    /// Every job belongs to one simulated user.
    #[default]
    Single,
    /// Jobs keep the user ids from the trace.
    PerTrace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub method: Method,
    #[serde(default)]
    pub params: AccountingParams,
    /// Allocation in the method's units; `None` means unlimited.
    pub budget: Option<f64>,
    /// Absolute end of the simulation (epoch seconds); `None` runs to completion.
    pub horizon: Option<f64>,
    #[serde(default)]
    pub user_mode: UserMode,
}

impl SimConfig {
    pub fn new(method: Method) -> Self {
        SimConfig {
            method,
            params: AccountingParams::default(),
            budget: None,
            horizon: None,
            user_mode: UserMode::Single,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EventKind {
    Admit,
    Start,
    End,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub time: f64,
    pub kind: EventKind,
    pub job_id: String,
    pub user_id: String,
    pub machine: MachineId,
    pub cores: u32,
    /// Cores busy on `machine` right after the event.
    pub occupied_after: u64,
    /// Allocation spent right after the event.
    pub spent_after: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PlacementStatus {
    Completed,
    /// Started before the horizon but not finished.
    Running,
    /// Admitted but still queued at the horizon.
    Queued,
    Unplaceable,
    OverBudget,
    /// Arrived after the horizon.
    NotArrived,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub job_id: String,
    pub user_id: String,
    pub status: PlacementStatus,
    pub machine: Option<MachineId>,
    pub submit_time: f64,
    pub start_time: Option<f64>,
    pub end_time: Option<f64>,
    /// Price at selection time, debited from the allocation.
    pub admitted_quote: Option<f64>,
    /// Price recomputed at the actual start.
    pub charged: Option<f64>,
    pub runtime_s: Option<f64>,
    pub energy_j: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimelinePoint {
    pub time: f64,
    pub completed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub policy: PolicyKind,
    pub method: Method,
    pub budget: Option<f64>,
    pub jobs_total: u64,
    pub jobs_completed: u64,
    pub jobs_unplaceable: u64,
    pub jobs_over_budget: u64,
    pub spent: f64,
    pub charged: f64,
    pub work_core_h: f64,
    pub energy_kwh: f64,
    pub operational_g: f64,
    /// Operational plus attributed embodied carbon.
    pub attributed_g: f64,
    pub timeline: Vec<TimelinePoint>,
    /// Completed jobs per machine; every machine appears.
    pub per_machine: BTreeMap<MachineId, u64>,
    pub placements: Vec<Placement>,
    pub events: Vec<SimEvent>,
    pub end_time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Pending {
    // Ends sort before arrivals at the same instant.
    End { job: usize, machine: usize },
    Arrival { job: usize },
}

#[derive(Debug)]
struct Scheduled {
    time: f64,
    seq: u64,
    what: Pending,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    // Reversed so BinaryHeap pops the earliest event.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.what.discriminant().cmp(&self.what.discriminant()))
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

impl Pending {
    fn discriminant(&self) -> u8 {
        match self {
            Pending::End { .. } => 0,
            Pending::Arrival { .. } => 1,
        }
    }
}

fn validate_inputs(profiles: &[JobProfile], machines: &[Machine]) -> Result<(), SimError> {
    machine::validate_machines(machines).map_err(|e| SimError::Invalid(e.to_string()))?;
    let mut ids = std::collections::HashSet::new();
    for p in profiles {
        if !ids.insert(p.job_id.as_str()) {
            return Err(SimError::Invalid(format!(
                "duplicate job id `{}`",
                p.job_id
            )));
        }
        if !p.submit_time.is_finite() {
            return Err(SimError::Invalid(format!(
                "job `{}` has no submit time",
                p.job_id
            )));
        }
        for m in &p.eligible_machines {
            let machine =
                machine::find(machines, m).ok_or_else(|| SimError::UnknownMachine(m.clone()))?;
            if !machine.fits(p.cores_requested) {
                return Err(SimError::Invalid(format!(
                    "job `{}` lists `{m}` as eligible but needs {} cores",
                    p.job_id, p.cores_requested
                )));
            }
            match p.estimate(m) {
                Some(e) if e.runtime_s > 0.0 && e.energy_j > 0.0 => {}
                _ => {
                    return Err(SimError::MissingEstimate {
                        job: p.job_id.clone(),
                        machine: m.clone(),
                    })
                }
            }
        }
    }
    Ok(())
}

struct Run<'a> {
    profiles: &'a [JobProfile],
    ctx: PricingContext<'a>,
    state: ClusterState,
    heap: BinaryHeap<Scheduled>,
    seq: u64,
    spent: f64,
    placements: Vec<Placement>,
    events: Vec<SimEvent>,
    users: Vec<u32>,
}

impl<'a> Run<'a> {
    fn schedule(&mut self, time: f64, what: Pending) {
        self.seq += 1;
        self.heap.push(Scheduled {
            time,
            seq: self.seq,
            what,
        });
    }

    fn log(&mut self, time: f64, kind: EventKind, job: usize, machine: usize) {
        let ms = &self.state.machines[machine];
        let p = &self.profiles[job];
        self.events.push(SimEvent {
            time,
            kind,
            job_id: p.job_id.clone(),
            user_id: p.user_id.clone(),
            machine: ms.id.clone(),
            cores: p.cores_requested,
            occupied_after: ms.occupied(),
            spent_after: self.spent,
        });
    }

    /// Starts queue heads on `machine` while they fit.
    fn drain(&mut self, machine: usize, now: f64) -> Result<(), SimError> {
        while let Some(q) = self.state.machines[machine].pop_startable() {
            let end = now + q.runtime;
            self.state.machines[machine].running.push(RunningJob {
                job: q.job,
                cores: q.cores,
                end,
                user: q.user,
            });
            let id = self.state.machines[machine].id.clone();
            let charged = self.ctx.price(&self.profiles[q.job], &id, now)?;
            let pl = &mut self.placements[q.job];
            pl.start_time = Some(now);
            pl.charged = Some(charged);
            pl.status = PlacementStatus::Running;
            self.log(now, EventKind::Start, q.job, machine);
            self.schedule(
                end,
                Pending::End {
                    job: q.job,
                    machine,
                },
            );
        }
        Ok(())
    }

    fn arrive(
        &mut self,
        job: usize,
        now: f64,
        policy: &PolicyKind,
        budget: Option<f64>,
    ) -> Result<(), SimError> {
        let profile = &self.profiles[job];
        let user = self.users[job];
        let Some(sel) = select_machine(policy, profile, &self.state, Some(user), now, &self.ctx)?
        else {
            self.placements[job].status = PlacementStatus::Unplaceable;
            return Ok(());
        };
        if budget.is_some_and(|b| self.spent + sel.quote > b) {
            self.placements[job].status = PlacementStatus::OverBudget;
            self.placements[job].machine = Some(sel.machine);
            return Ok(());
        }
        self.spent += sel.quote;
        let est = *profile
            .estimate(&sel.machine)
            .expect("selected machines have estimates");
        let idx = self.state.index_of(&sel.machine)?;
        self.state.machines[idx].queue.push_back(QueuedJob {
            job,
            cores: profile.cores_requested,
            runtime: est.runtime_s,
            user,
        });
        let pl = &mut self.placements[job];
        pl.status = PlacementStatus::Queued;
        pl.machine = Some(sel.machine);
        pl.admitted_quote = Some(sel.quote);
        pl.runtime_s = Some(est.runtime_s);
        pl.energy_j = Some(est.energy_j);
        self.log(now, EventKind::Admit, job, idx);
        self.drain(idx, now)
    }

    fn finish(&mut self, job: usize, machine: usize, now: f64) -> Result<(), SimError> {
        let ms = &mut self.state.machines[machine];
        let pos = ms
            .running
            .iter()
            .position(|r| r.job == job)
            .expect("ending job is running");
        ms.running.swap_remove(pos);
        let pl = &mut self.placements[job];
        pl.end_time = Some(now);
        pl.status = PlacementStatus::Completed;
        self.log(now, EventKind::End, job, machine);
        self.drain(machine, now)
    }
}

/// Replays `profiles` on `machines` under one policy.
pub fn run(
    profiles: &[JobProfile],
    machines: &[Machine],
    policy: &PolicyKind,
    config: &SimConfig,
    book: &IntensityBook,
) -> Result<SimulationResult, SimError> {
    validate_inputs(profiles, machines)?;
    if let PolicyKind::Fixed(id) = policy {
        machine::find(machines, id).ok_or_else(|| SimError::UnknownMachine(id.clone()))?;
    }
    if let Some(b) = config.budget {
        if b.is_nan() || b < 0.0 {
            return Err(SimError::Invalid(format!("budget {b} must be >= 0")));
        }
    }

    let mut state = ClusterState::new(machines);
    let users = profiles
        .iter()
        .map(|p| match config.user_mode {
            UserMode::Single => state.user("user"),
            UserMode::PerTrace => state.user(&p.user_id),
        })
        .collect();
    let mut sim = Run {
        profiles,
        ctx: PricingContext {
            machines,
            book,
            method: config.method,
            params: config.params,
        },
        state,
        heap: BinaryHeap::new(),
        seq: 0,
        spent: 0.0,
        placements: profiles
            .iter()
            .map(|p| Placement {
                job_id: p.job_id.clone(),
                user_id: p.user_id.clone(),
                status: PlacementStatus::NotArrived,
                machine: None,
                submit_time: p.submit_time,
                start_time: None,
                end_time: None,
                admitted_quote: None,
                charged: None,
                runtime_s: None,
                energy_j: None,
            })
            .collect(),
        events: Vec::new(),
        users,
    };
    for (job, p) in profiles.iter().enumerate() {
        sim.schedule(p.submit_time, Pending::Arrival { job });
    }

    let mut timeline = Vec::new();
    let mut completed = 0u64;
    let mut clock = profiles
        .iter()
        .map(|p| p.submit_time)
        .min_by(f64::total_cmp)
        .unwrap_or(0.0);
    while let Some(ev) = sim.heap.pop() {
        if config.horizon.is_some_and(|h| ev.time > h) {
            break;
        }
        clock = ev.time;
        match ev.what {
            Pending::Arrival { job } => sim.arrive(job, ev.time, policy, config.budget)?,
            Pending::End { job, machine } => {
                sim.finish(job, machine, ev.time)?;
                completed += 1;
                timeline.push(TimelinePoint {
                    time: ev.time,
                    completed,
                });
            }
        }
    }

    let mut result = SimulationResult {
        policy: policy.clone(),
        method: config.method,
        budget: config.budget,
        jobs_total: profiles.len() as u64,
        jobs_completed: completed,
        jobs_unplaceable: 0,
        jobs_over_budget: 0,
        spent: sim.spent,
        charged: 0.0,
        work_core_h: 0.0,
        energy_kwh: 0.0,
        operational_g: 0.0,
        attributed_g: 0.0,
        timeline,
        per_machine: machines.iter().map(|m| (m.id.clone(), 0)).collect(),
        placements: Vec::new(),
        events: Vec::new(),
        end_time: config.horizon.map_or(clock, |h| h.max(clock)),
    };
    let mut energy_j = 0.0;
    for (job, pl) in sim.placements.iter().enumerate() {
        match pl.status {
            PlacementStatus::Unplaceable => result.jobs_unplaceable += 1,
            PlacementStatus::OverBudget => result.jobs_over_budget += 1,
            _ => {}
        }
        if let Some(c) = pl.charged {
            result.charged += c;
        }
        if pl.status != PlacementStatus::Completed {
            continue;
        }
        let profile = &profiles[job];
        let machine = pl.machine.as_ref().expect("completed jobs have a machine");
        let start = pl.start_time.expect("completed jobs started");
        *result.per_machine.get_mut(machine).expect("known machine") += 1;
        result.work_core_h += work_of(profile).map_err(|e| SimError::Invalid(e.to_string()))?;
        energy_j += pl.energy_j.unwrap_or(0.0);
        let (operational, embodied) = sim.ctx.carbon(profile, machine, start)?;
        result.operational_g += operational;
        result.attributed_g += operational + embodied;
    }
    result.energy_kwh = energy_j / accounting::JOULES_PER_KWH;
    result.placements = sim.placements;
    result.events = sim.events;
    Ok(result)
}
