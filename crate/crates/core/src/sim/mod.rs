//! Discrete-event replay of a job workload across several machines.
//!
//! Each machine runs a plain FIFO queue without backfilling. A user holds
//! at most one running job per machine. Jobs are priced when a policy picks
//! their machine and admitted only while the allocation covers the quote;
//! once started they run to completion on that machine.

mod audit;
mod compare;
mod engine;
mod policy;
mod state;

use thiserror::Error;

pub use audit::{audit, AuditReport};
pub use compare::{compare_policies, hourly_cheapest, BudgetRule, PolicyRun};
pub use engine::{
    run, EventKind, Placement, PlacementStatus, PricingContext, SimConfig, SimEvent,
    SimulationResult, TimelinePoint, UserMode,
};
pub use policy::{select_machine, PolicyKind, Selection};
pub use state::{ClusterState, QueuedJob, RunningJob};

use crate::accounting::AccountingError;
use crate::machine::MachineId;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("unknown machine `{0}`")]
    UnknownMachine(MachineId),
    #[error("{cores} cores requested but machine `{machine}` has {capacity}")]
    OverCapacity {
        machine: MachineId,
        cores: u32,
        capacity: u64,
    },
    #[error("job `{job}` has no estimate for machine `{machine}`")]
    MissingEstimate { job: String, machine: MachineId },
    #[error("pricing job `{job}`: {source}")]
    Pricing {
        job: String,
        #[source]
        source: AccountingError,
    },
    #[error("invalid simulation input: {0}")]
    Invalid(String),
}
