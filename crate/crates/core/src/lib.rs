//! Impact-based accounting for heterogeneous HPC allocations.
//!
//! The crate prices job executions under five accounting methods (core-time,
//! energy, peak-performance-weighted core-time, energy-based and carbon-based
//! accounting), extrapolates a single-machine job trace onto several machines,
//! replays the resulting workload through a discrete-event multi-machine
//! simulator under a set of user placement policies, and hosts a small HTTP
//! service for an interactive scheduling game.

pub mod accounting;
pub mod carbon;
pub mod config;
pub mod game;
pub mod machine;
pub mod report;
pub mod sim;
pub mod workload;

pub use accounting::{
    cost_cba, cost_eba, cost_energy, cost_peak, cost_runtime, quote_all, AccountingError,
    AccountingParams, CostQuote, Execution, IntensityMode, Method,
};
pub use carbon::{
    CarbonError, CarbonIntensitySeries, DepreciationMethod, DepreciationSchedule, IntensityBook,
};
pub use machine::{Machine, MachineError, MachineId};
