use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicI64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GameError, GameFixture, GameVersion};
use crate::workload::{derive_seed, Priority};

/// Wall-clock source, injectable so tests control session durations.
pub trait Clock: Send + Sync {
    fn now_ms(&self) -> i64;
}

#[derive(Debug, Default)]
pub struct SystemClock;

impl Clock for SystemClock {
    fn now_ms(&self) -> i64 {
        chrono::Utc::now().timestamp_millis()
    }
}

#[derive(Debug, Default)]
pub struct ManualClock(AtomicI64);

impl ManualClock {
    pub fn new(start_ms: i64) -> Self {
        ManualClock(AtomicI64::new(start_ms))
    }

    pub fn advance_ms(&self, ms: i64) {
        self.0.fetch_add(ms, Ordering::SeqCst);
    }
}

impl Clock for ManualClock {
    fn now_ms(&self) -> i64 {
        self.0.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementRecord {
    pub job_id: String,
    pub machine_id: String,
    pub quote: f64,
    pub runtime_s: f64,
    pub energy_j: f64,
    /// Simulated clock before and after the placement.
    pub clock_before_s: f64,
    pub clock_after_s: f64,
    pub placed_at_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Session {
    session_id: String,
    participant_id: String,
    version: GameVersion,
    /// 1 for a participant's first session.
    ordinal: u32,
    budget: f64,
    spent: f64,
    remaining: f64,
    clock_s: f64,
    /// Jobs revealed so far, as a prefix length of the fixture's job list.
    revealed: usize,
    placements: Vec<PlacementRecord>,
    created_at_ms: i64,
    finished: bool,
}

impl Session {
    fn is_placed(&self, job_id: &str) -> bool {
        self.placements.iter().any(|p| p.job_id == job_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardMachine {
    pub machine_id: String,
    pub name: String,
    pub cores: u64,
}

/// Cost and time of one job on one machine; `energy_j` only in versions
/// that show it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardOption {
    pub machine_id: String,
    pub time_s: f64,
    pub cost: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub energy_j: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardJob {
    pub job_id: String,
    pub cores: u32,
    pub priority: Priority,
    /// Machines the job fits on, in fixture order.
    pub options: Vec<BoardOption>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoardView {
    pub session_id: String,
    pub version: GameVersion,
    pub budget: f64,
    pub spent: f64,
    pub remaining_allocation: f64,
    pub clock_s: f64,
    pub deadline_s: f64,
    pub time_remaining_s: f64,
    pub finished: bool,
    pub machines: Vec<BoardMachine>,
    /// Revealed jobs not yet placed.
    pub jobs: Vec<BoardJob>,
    pub placed: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
    pub participant_id: String,
    pub version: GameVersion,
    pub board: BoardView,
}

/// A placement as shown to the player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementView {
    pub job_id: String,
    pub machine_id: String,
    pub quote: f64,
    pub time_s: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub energy_j: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementOutcome {
    pub placement: PlacementView,
    pub board: BoardView,
}

/// End-of-game result as shown to the player.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinishView {
    pub session_id: String,
    pub version: GameVersion,
    pub jobs_completed: u64,
    pub total_charged: f64,
    pub remaining_allocation: f64,
    pub duration_s: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub total_energy_j: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub participant_id: String,
    pub version: GameVersion,
    pub ordinal: u32,
    pub jobs_completed: u64,
    pub total_energy_j: f64,
    pub total_charged: f64,
    pub budget: f64,
    pub remaining_allocation: f64,
    pub duration_s: f64,
    /// Shorter than the fixture's minimum duration.
    pub too_short: bool,
    /// Jobs revealed during the session, in arrival order.
    pub seen_jobs: Vec<String>,
    pub placements: Vec<PlacementRecord>,
}

impl SessionSummary {
    /// The player-facing part, without energy for versions that hide it.
    pub fn view(&self) -> FinishView {
        FinishView {
            session_id: self.session_id.clone(),
            version: self.version,
            jobs_completed: self.jobs_completed,
            total_charged: self.total_charged,
            remaining_allocation: self.remaining_allocation,
            duration_s: self.duration_s,
            total_energy_j: self.version.shows_energy().then_some(self.total_energy_j),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExportFilter {
    pub version: Option<GameVersion>,
    pub participant_id: Option<String>,
    /// Skip sessions flagged as too short.
    #[serde(default)]
    pub exclude_short: bool,
    /// Skip each participant's first session.
    #[serde(default)]
    pub exclude_first: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportJobStat {
    pub job_id: String,
    pub version: GameVersion,
    pub saw: u64,
    pub completed: u64,
    /// Mean energy over the sessions that ran the job.
    pub mean_energy_j: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportVersionStat {
    pub version: GameVersion,
    pub sessions: u64,
    pub mean_energy_j: f64,
    pub mean_jobs_completed: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Exported {
    pub sessions: Vec<SessionSummary>,
    pub versions: Vec<ExportVersionStat>,
    pub jobs: Vec<ExportJobStat>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum LogEntry {
    Created {
        session: Session,
    },
    Placed {
        session_id: String,
        placement: PlacementRecord,
    },
    Finished {
        summary: SessionSummary,
    },
}

/// Game sessions with an optional append-only JSON-lines log.
pub struct GameService {
    fixture: Arc<GameFixture>,
    clock: Arc<dyn Clock>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    /// Versions of each participant's sessions, in creation order.
    history: Mutex<HashMap<String, Vec<GameVersion>>>,
    finished: Mutex<Vec<SessionSummary>>,
    log: Option<Mutex<File>>,
}

impl std::fmt::Debug for GameService {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("GameService")
            .field("sessions", &self.sessions.read().len())
            .finish_non_exhaustive()
    }
}

impl GameService {
    /// In-memory service.
    pub fn new(fixture: GameFixture, clock: Arc<dyn Clock>) -> Result<Self, GameError> {
        fixture.validate()?;
        Ok(GameService {
            fixture: Arc::new(fixture),
            clock,
            sessions: RwLock::new(HashMap::new()),
            history: Mutex::new(HashMap::new()),
            finished: Mutex::new(Vec::new()),
            log: None,
        })
    }

    /// Service backed by the log at `path`, replaying whatever it holds.
    pub fn open(
        fixture: GameFixture,
        clock: Arc<dyn Clock>,
        path: impl AsRef<Path>,
    ) -> Result<Self, GameError> {
        let path = path.as_ref();
        let mut svc = Self::new(fixture, clock)?;
        if path.exists() {
            svc.replay(path)?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| store_err(path, e))?;
        svc.log = Some(Mutex::new(file));
        Ok(svc)
    }

    pub fn fixture(&self) -> &GameFixture {
        &self.fixture
    }

    fn replay(&mut self, path: &Path) -> Result<(), GameError> {
        let reader = BufReader::new(File::open(path).map_err(|e| store_err(path, e))?);
        let mut sessions: HashMap<String, Session> = HashMap::new();
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| store_err(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: LogEntry = serde_json::from_str(&line)
                .map_err(|e| GameError::Store(format!("{} line {}: {e}", path.display(), n + 1)))?;
            match entry {
                LogEntry::Created { session } => {
                    self.history
                        .get_mut()
                        .entry(session.participant_id.clone())
                        .or_default()
                        .push(session.version);
                    sessions.insert(session.session_id.clone(), session);
                }
                LogEntry::Placed {
                    session_id,
                    placement,
                } => {
                    let s = sessions.get_mut(&session_id).ok_or_else(|| {
                        GameError::Store(format!("line {}: unknown session {session_id}", n + 1))
                    })?;
                    apply_placement(s, placement, self.fixture.jobs.len());
                }
                LogEntry::Finished { summary } => {
                    if let Some(s) = sessions.get_mut(&summary.session_id) {
                        s.finished = true;
                    }
                    self.finished.get_mut().push(summary);
                }
            }
        }
        *self.sessions.get_mut() = sessions
            .into_iter()
            .map(|(k, v)| (k, Arc::new(Mutex::new(v))))
            .collect();
        Ok(())
    }

    fn append(&self, entry: &LogEntry) -> Result<(), GameError> {
        let Some(log) = &self.log else {
            return Ok(());
        };
        let mut line = serde_json::to_string(entry).map_err(|e| GameError::Store(e.to_string()))?;
        line.push('\n');
        let mut f = log.lock();
        f.write_all(line.as_bytes())
            .and_then(|_| f.flush())
            .map_err(|e| GameError::Store(e.to_string()))
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, GameError> {
        self.sessions
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| GameError::UnknownSession(id.to_string()))
    }

    /// Version for a participant's next session: drawn at random, except
    /// that a second session repeats the first one's version.
    fn assign_version(&self, participant: &str, previous: &[GameVersion]) -> GameVersion {
        if previous.len() == 1 {
            return previous[0];
        }
        let key = format!("version|{participant}|{}", previous.len());
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.fixture.seed, &key));
        GameVersion::ALL[rng.random_range(0..GameVersion::ALL.len())]
    }

    pub fn create_session(&self, participant_id: &str) -> Result<SessionCreated, GameError> {
        if participant_id.trim().is_empty() {
            return Err(GameError::BadRequest(
                "participant_id must not be empty".into(),
            ));
        }
        let mut history = self.history.lock();
        let previous = history.entry(participant_id.to_string()).or_default();
        let version = self.assign_version(participant_id, previous);
        let budget = self.fixture.budget_for(version)?;
        let session = Session {
            session_id: uuid::Uuid::new_v4().to_string(),
            participant_id: participant_id.to_string(),
            version,
            ordinal: previous.len() as u32 + 1,
            budget,
            spent: 0.0,
            remaining: budget,
            clock_s: 0.0,
            revealed: self.fixture.initial_window.min(self.fixture.jobs.len()),
            placements: Vec::new(),
            created_at_ms: self.clock.now_ms(),
            finished: false,
        };
        self.append(&LogEntry::Created {
            session: session.clone(),
        })?;
        previous.push(version);
        let board = self.board_of(&session)?;
        let created = SessionCreated {
            session_id: session.session_id.clone(),
            participant_id: session.participant_id.clone(),
            version,
            board,
        };
        self.sessions
            .write()
            .insert(session.session_id.clone(), Arc::new(Mutex::new(session)));
        Ok(created)
    }

    pub fn board(&self, session_id: &str) -> Result<BoardView, GameError> {
        let s = self.session(session_id)?;
        let s = s.lock();
        self.board_of(&s)
    }

    fn board_of(&self, s: &Session) -> Result<BoardView, GameError> {
        let f = &self.fixture;
        let mut jobs = Vec::new();
        for job in f.jobs[..s.revealed]
            .iter()
            .filter(|j| !s.is_placed(&j.job_id))
        {
            let mut options = Vec::new();
            for m in &f.machines {
                if !(m.fits(job.cores_requested) && job.is_eligible(&m.id)) {
                    continue;
                }
                let est = job.estimate(&m.id).expect("validated fixture");
                options.push(BoardOption {
                    machine_id: m.id.to_string(),
                    time_s: est.runtime_s,
                    cost: f.cost(s.version, job, m)?,
                    energy_j: s.version.shows_energy().then_some(est.energy_j),
                });
            }
            jobs.push(BoardJob {
                job_id: job.job_id.clone(),
                cores: job.cores_requested,
                priority: job.priority,
                options,
            });
        }
        Ok(BoardView {
            session_id: s.session_id.clone(),
            version: s.version,
            budget: s.budget,
            spent: s.spent,
            remaining_allocation: s.remaining,
            clock_s: s.clock_s,
            deadline_s: f.deadline_s,
            time_remaining_s: (f.deadline_s - s.clock_s).max(0.0),
            finished: s.finished,
            machines: f
                .machines
                .iter()
                .map(|m| BoardMachine {
                    machine_id: m.id.to_string(),
                    name: m.name.clone(),
                    cores: m.total_cores(),
                })
                .collect(),
            jobs,
            placed: s.placements.iter().map(|p| p.job_id.clone()).collect(),
        })
    }

    /// Places a job. On any error the session is left untouched.
    pub fn place_job(
        &self,
        session_id: &str,
        job_id: &str,
        machine_id: &str,
    ) -> Result<PlacementOutcome, GameError> {
        let f = &self.fixture;
        let handle = self.session(session_id)?;
        let mut s = handle.lock();
        if s.finished {
            return Err(GameError::Finished(session_id.to_string()));
        }
        let (idx, job) = f
            .job(job_id)
            .ok_or_else(|| GameError::UnknownJob(job_id.to_string()))?;
        if s.is_placed(job_id) {
            return Err(GameError::AlreadyPlaced(job_id.to_string()));
        }
        if idx >= s.revealed {
            return Err(GameError::JobNotVisible(job_id.to_string()));
        }
        let m = f
            .machine(machine_id)
            .ok_or_else(|| GameError::UnknownMachine(machine_id.to_string()))?;
        if !(m.fits(job.cores_requested) && job.is_eligible(&m.id)) {
            return Err(GameError::Ineligible {
                job: job_id.to_string(),
                machine: machine_id.to_string(),
                cores: job.cores_requested,
            });
        }
        if s.clock_s >= f.deadline_s {
            return Err(GameError::DeadlinePassed);
        }
        let quote = f.cost(s.version, job, m)?;
        if quote > s.remaining {
            return Err(GameError::InsufficientAllocation {
                quote,
                remaining: s.remaining,
            });
        }
        let est = job.estimate(&m.id).expect("validated fixture");
        let placement = PlacementRecord {
            job_id: job_id.to_string(),
            machine_id: machine_id.to_string(),
            quote,
            runtime_s: est.runtime_s,
            energy_j: est.energy_j,
            clock_before_s: s.clock_s,
            clock_after_s: s.clock_s + f.clock_fraction * est.runtime_s,
            placed_at_ms: self.clock.now_ms(),
        };
        self.append(&LogEntry::Placed {
            session_id: session_id.to_string(),
            placement: placement.clone(),
        })?;
        let view = PlacementView {
            job_id: placement.job_id.clone(),
            machine_id: placement.machine_id.clone(),
            quote,
            time_s: placement.runtime_s,
            energy_j: s.version.shows_energy().then_some(placement.energy_j),
        };
        apply_placement(&mut s, placement, f.jobs.len());
        Ok(PlacementOutcome {
            placement: view,
            board: self.board_of(&s)?,
        })
    }

    pub fn finish_session(&self, session_id: &str) -> Result<SessionSummary, GameError> {
        let handle = self.session(session_id)?;
        let mut s = handle.lock();
        if s.finished {
            return Err(GameError::Finished(session_id.to_string()));
        }
        let duration_s = (self.clock.now_ms() - s.created_at_ms) as f64 / 1000.0;
        let summary = SessionSummary {
            session_id: s.session_id.clone(),
            participant_id: s.participant_id.clone(),
            version: s.version,
            ordinal: s.ordinal,
            jobs_completed: s.placements.len() as u64,
            total_energy_j: s.placements.iter().map(|p| p.energy_j).sum(),
            total_charged: s.placements.iter().map(|p| p.quote).sum(),
            budget: s.budget,
            remaining_allocation: s.remaining,
            duration_s,
            too_short: duration_s < self.fixture.min_duration_s,
            seen_jobs: self.fixture.jobs[..s.revealed]
                .iter()
                .map(|j| j.job_id.clone())
                .collect(),
            placements: s.placements.clone(),
        };
        self.append(&LogEntry::Finished {
            summary: summary.clone(),
        })?;
        s.finished = true;
        self.finished.lock().push(summary.clone());
        Ok(summary)
    }

    /// Finished sessions matching `filter`, with per-version and per-job
    /// aggregates over them.
    pub fn export(&self, filter: &ExportFilter) -> Exported {
        let sessions: Vec<SessionSummary> = self
            .finished
            .lock()
            .iter()
            .filter(|s| filter.version.is_none_or(|v| v == s.version))
            .filter(|s| {
                filter
                    .participant_id
                    .as_ref()
                    .is_none_or(|p| *p == s.participant_id)
            })
            .filter(|s| !(filter.exclude_short && s.too_short))
            .filter(|s| !(filter.exclude_first && s.ordinal == 1))
            .cloned()
            .collect();

        let mut versions = Vec::new();
        for v in GameVersion::ALL {
            let of: Vec<&SessionSummary> = sessions.iter().filter(|s| s.version == v).collect();
            if of.is_empty() {
                continue;
            }
            let n = of.len() as f64;
            versions.push(ExportVersionStat {
                version: v,
                sessions: of.len() as u64,
                mean_energy_j: of.iter().map(|s| s.total_energy_j).sum::<f64>() / n,
                mean_jobs_completed: of.iter().map(|s| s.jobs_completed as f64).sum::<f64>() / n,
            });
        }

        // (version, job) -> (saw, completed, energy sum)
        let mut acc: BTreeMap<(GameVersion, usize), (u64, u64, f64)> = BTreeMap::new();
        let order: HashMap<&str, usize> = self
            .fixture
            .jobs
            .iter()
            .enumerate()
            .map(|(i, j)| (j.job_id.as_str(), i))
            .collect();
        for s in &sessions {
            for j in &s.seen_jobs {
                if let Some(&i) = order.get(j.as_str()) {
                    acc.entry((s.version, i)).or_default().0 += 1;
                }
            }
            for p in &s.placements {
                if let Some(&i) = order.get(p.job_id.as_str()) {
                    let e = acc.entry((s.version, i)).or_default();
                    e.1 += 1;
                    e.2 += p.energy_j;
                }
            }
        }
        let jobs = acc
            .into_iter()
            .map(|((version, i), (saw, completed, energy))| ExportJobStat {
                job_id: self.fixture.jobs[i].job_id.clone(),
                version,
                saw,
                completed,
                mean_energy_j: (completed > 0).then(|| energy / completed as f64),
            })
            .collect();
        Exported {
            sessions,
            versions,
            jobs,
        }
    }
}

fn apply_placement(s: &mut Session, p: PlacementRecord, total_jobs: usize) {
    s.spent += p.quote;
    s.remaining -= p.quote;
    s.clock_s = p.clock_after_s;
    s.revealed = (s.revealed + 1).min(total_jobs);
    s.placements.push(p);
}

fn store_err(path: &Path, e: std::io::Error) -> GameError {
    GameError::Store(format!("{}: {e}", PathBuf::from(path).display()))
}
