use std::collections::{BTreeMap, HashMap, VecDeque};

use super::SimError;
use crate::machine::{Machine, MachineId};

#[derive(Debug, Clone, PartialEq)]
pub struct RunningJob {
    pub job: usize,
    pub cores: u32,
    pub end: f64,
    pub user: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueuedJob {
    pub job: usize,
    pub cores: u32,
    pub runtime: f64,
    pub user: u32,
}

#[derive(Debug, Clone)]
pub struct MachineState {
    pub id: MachineId,
    pub capacity: u64,
    pub running: Vec<RunningJob>,
    pub queue: VecDeque<QueuedJob>,
}

impl MachineState {
    pub fn occupied(&self) -> u64 {
        self.running.iter().map(|r| u64::from(r.cores)).sum()
    }

    pub fn user_running(&self, user: u32) -> bool {
        self.running.iter().any(|r| r.user == user)
    }

    fn can_start(&self, cores: u32, user: u32) -> bool {
        self.capacity - self.occupied() >= u64::from(cores) && !self.user_running(user)
    }

    /// Pops the queue head if it can start right now.
    pub(crate) fn pop_startable(&mut self) -> Option<QueuedJob> {
        let head = self.queue.front()?;
        if self.can_start(head.cores, head.user) {
            self.queue.pop_front()
        } else {
            None
        }
    }
}

/// Active reservation during a FIFO projection.
struct Slot {
    end: f64,
    cores: u32,
    user: Option<u32>,
}

/// Earliest instant at or after `from` when `cores` are free and `user` has
/// nothing running, given the reservations in `active`.
fn earliest_fit(
    active: &mut Vec<Slot>,
    capacity: u64,
    from: f64,
    cores: u32,
    user: Option<u32>,
) -> f64 {
    let mut t = from;
    loop {
        active.retain(|s| s.end > t);
        let occupied: u64 = active.iter().map(|s| u64::from(s.cores)).sum();
        let user_busy = user.is_some() && active.iter().any(|s| s.user == user);
        if capacity - occupied.min(capacity) >= u64::from(cores) && !user_busy {
            return t;
        }
        match active.iter().map(|s| s.end).min_by(f64::total_cmp) {
            Some(next) => t = next,
            None => return t,
        }
    }
}

/// Per-machine running sets and FIFO queues.
#[derive(Debug, Clone)]
pub struct ClusterState {
    pub machines: Vec<MachineState>,
    index: BTreeMap<MachineId, usize>,
    users: HashMap<String, u32>,
}

impl ClusterState {
    pub fn new(machines: &[Machine]) -> Self {
        ClusterState {
            machines: machines
                .iter()
                .map(|m| MachineState {
                    id: m.id.clone(),
                    capacity: m.total_cores(),
                    running: Vec::new(),
                    queue: VecDeque::new(),
                })
                .collect(),
            index: machines
                .iter()
                .enumerate()
                .map(|(i, m)| (m.id.clone(), i))
                .collect(),
            users: HashMap::new(),
        }
    }

    pub fn index_of(&self, id: &MachineId) -> Result<usize, SimError> {
        self.index
            .get(id)
            .copied()
            .ok_or_else(|| SimError::UnknownMachine(id.clone()))
    }

    pub fn machine(&self, id: &MachineId) -> Result<&MachineState, SimError> {
        Ok(&self.machines[self.index_of(id)?])
    }

    pub fn machine_mut(&mut self, id: &MachineId) -> Result<&mut MachineState, SimError> {
        let i = self.index_of(id)?;
        Ok(&mut self.machines[i])
    }

    /// Small integer handle for a user name.
    pub fn user(&mut self, name: &str) -> u32 {
        let next = self.users.len() as u32;
        *self.users.entry(name.to_string()).or_insert(next)
    }

    pub fn known_user(&self, name: &str) -> Option<u32> {
        self.users.get(name).copied()
    }

    /// Seconds from `now` until a job of `cores` (owned by `user`, if given)
    /// would start on `machine`, projecting the FIFO queue forward from the
    /// current running jobs' end times.
    pub fn estimate_wait(
        &self,
        machine: &MachineId,
        cores: u32,
        user: Option<u32>,
        now: f64,
    ) -> Result<f64, SimError> {
        let ms = self.machine(machine)?;
        if u64::from(cores) > ms.capacity {
            return Err(SimError::OverCapacity {
                machine: machine.clone(),
                cores,
                capacity: ms.capacity,
            });
        }
        let mut active: Vec<Slot> = ms
            .running
            .iter()
            .map(|r| Slot {
                end: r.end,
                cores: r.cores,
                user: Some(r.user),
            })
            .collect();
        let mut t = now;
        for q in &ms.queue {
            t = earliest_fit(&mut active, ms.capacity, t, q.cores, Some(q.user));
            active.push(Slot {
                end: t + q.runtime,
                cores: q.cores,
                user: Some(q.user),
            });
        }
        let start = earliest_fit(&mut active, ms.capacity, t, cores, user);
        Ok(start - now)
    }
}
