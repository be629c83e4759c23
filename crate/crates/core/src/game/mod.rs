//! Session service for the interactive scheduling game.
//!
//! Players drag jobs onto machines within a time and allocation limit. Each
//! session is assigned one of three versions that differ only in how costs
//! are computed and whether energy figures are shown.

mod fixture;
mod http;
mod service;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fixture::{FixtureShape, GameFixture, DEFAULT_INITIAL_WINDOW, DEFAULT_MIN_DURATION_S};
pub use http::{router, serve};
pub use service::{
    BoardJob, BoardMachine, BoardOption, BoardView, Clock, ExportFilter, ExportJobStat,
    ExportVersionStat, Exported, FinishView, GameService, ManualClock, PlacementOutcome,
    PlacementRecord, PlacementView, SessionCreated, SessionSummary, SystemClock,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GameVersion {
    /// Core-time cost, no energy shown.
    V1,
    /// Core-time cost, energy shown.
    V2,
    /// Energy-based cost, energy shown.
    V3,
}

impl GameVersion {
    pub const ALL: [GameVersion; 3] = [GameVersion::V1, GameVersion::V2, GameVersion::V3];

    pub fn shows_energy(self) -> bool {
        self != GameVersion::V1
    }
}

impl fmt::Display for GameVersion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for GameVersion {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "V1" => Ok(GameVersion::V1),
            "V2" => Ok(GameVersion::V2),
            "V3" => Ok(GameVersion::V3),
            _ => Err(format!("unknown game version `{s}`")),
        }
    }
}

#[derive(Debug, Error)]
pub enum GameError {
    #[error("no session `{0}`")]
    UnknownSession(String),
    #[error("no job `{0}` in this game")]
    UnknownJob(String),
    #[error("job `{0}` has not arrived yet")]
    JobNotVisible(String),
    #[error("no machine `{0}` in this game")]
    UnknownMachine(String),
    #[error("job `{0}` was already placed")]
    AlreadyPlaced(String),
    #[error("job `{job}` needs {cores} cores, more than `{machine}` offers")]
    Ineligible {
        job: String,
        machine: String,
        cores: u32,
    },
    #[error("quote {quote} exceeds the remaining allocation {remaining}")]
    InsufficientAllocation { quote: f64, remaining: f64 },
    #[error("the session deadline has passed")]
    DeadlinePassed,
    #[error("session `{0}` is already finished")]
    Finished(String),
    #[error("invalid game fixture: {0}")]
    Fixture(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("results store: {0}")]
    Store(String),
}

impl GameError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            GameError::UnknownSession(_) => "unknown_session",
            GameError::UnknownJob(_) => "unknown_job",
            GameError::JobNotVisible(_) => "job_not_visible",
            GameError::UnknownMachine(_) => "unknown_machine",
            GameError::AlreadyPlaced(_) => "already_placed",
            GameError::Ineligible { .. } => "ineligible_machine",
            GameError::InsufficientAllocation { .. } => "insufficient_allocation",
            GameError::DeadlinePassed => "deadline_passed",
            GameError::Finished(_) => "session_finished",
            GameError::Fixture(_) => "invalid_fixture",
            GameError::BadRequest(_) => "bad_request",
            GameError::Store(_) => "store_error",
        }
    }
}
