//! One labeling session: a FIFO query queue shared between the algorithm
//! thread, which blocks on each comparison, and the HTTP handlers.

use std::collections::{HashMap, VecDeque};
use std::fs::File;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{SystemTime, UNIX_EPOCH};

use pbrl_core::mdp::{LayeredMdp, Trajectory};
use pbrl_core::preference::{HumanError, HumanOracle, Winner};
use serde::{Deserialize, Serialize};

use crate::view::TrajectoryView;
use crate::ServiceError;

pub const API_SCHEMA_VERSION: u32 = 1;

pub fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl From<Side> for Winner {
    fn from(s: Side) -> Self {
        match s {
            Side::Left => Winner::First,
            Side::Right => Winner::Second,
        }
    }
}

impl From<Winner> for Side {
    fn from(w: Winner) -> Self {
        match w {
            Winner::First => Side::Left,
            Winner::Second => Side::Right,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum QueryState {
    Pending,
    Answered { winner: Side },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendingQuery {
    pub schema_version: u32,
    pub query_id: String,
    pub session_id: String,
    /// Position in the session's comparison stream, from 0.
    pub seq: u64,
    pub left: TrajectoryView,
    pub right: TrajectoryView,
    pub created_at_ms: u64,
    #[serde(flatten)]
    pub state: QueryState,
}

/// One line of the JSON-lines label log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub schema_version: u32,
    pub session_id: String,
    pub query_id: String,
    pub seq: u64,
    pub winner: Side,
    pub timestamp_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunState {
    Running,
    Finished { policy_hash: String, comparisons: u64, env_steps: u64, episodes: u64 },
    Failed { error: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionStatus {
    pub schema_version: u32,
    pub session_id: String,
    pub name: String,
    pub answered: u64,
    pub pending: u64,
    /// Fraction of the comparison bound used so far; 1 once the run ends.
    pub policy_progress: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_comparisons: Option<u64>,
    /// Answers taken from a replayed log rather than the labeler.
    pub replayed: u64,
    pub closed: bool,
    pub run: RunState,
}

struct Inner {
    queue: VecDeque<PendingQuery>,
    answered: HashMap<String, Side>,
    replay: VecDeque<Winner>,
    replayed: u64,
    next_seq: u64,
    log: Option<File>,
    closed: bool,
    run: RunState,
}

pub struct Session {
    id: String,
    name: String,
    mdp: Arc<LayeredMdp>,
    expected_comparisons: Option<u64>,
    log_path: Option<PathBuf>,
    inner: Mutex<Inner>,
    changed: Condvar,
}

impl Session {
    pub(crate) fn new(
        id: String,
        name: String,
        mdp: Arc<LayeredMdp>,
        expected_comparisons: Option<u64>,
        log_path: Option<PathBuf>,
        replay: Vec<Winner>,
    ) -> Result<Self, ServiceError> {
        let log = match &log_path {
            Some(p) => Some(
                std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(p)
                    .map_err(|e| ServiceError::Io(format!("{}: {e}", p.display())))?,
            ),
            None => None,
        };
        Ok(Self {
            id,
            name,
            mdp,
            expected_comparisons,
            log_path,
            inner: Mutex::new(Inner {
                queue: VecDeque::new(),
                answered: HashMap::new(),
                replay: replay.into(),
                replayed: 0,
                next_seq: 0,
                log,
                closed: false,
                run: RunState::Running,
            }),
            changed: Condvar::new(),
        })
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn mdp(&self) -> &LayeredMdp {
        &self.mdp
    }

    pub fn log_path(&self) -> Option<&PathBuf> {
        self.log_path.as_ref()
    }

    /// Oldest unanswered query.
    pub fn next(&self) -> Option<PendingQuery> {
        self.lock().queue.front().cloned()
    }

    pub fn status(&self) -> SessionStatus {
        let g = self.lock();
        let answered = g.answered.len() as u64;
        let progress = match (&g.run, self.expected_comparisons) {
            (RunState::Finished { .. }, _) => Some(1.0),
            (_, Some(n)) if n > 0 => Some(((answered + g.replayed) as f64 / n as f64).min(1.0)),
            _ => None,
        };
        SessionStatus {
            schema_version: API_SCHEMA_VERSION,
            session_id: self.id.clone(),
            name: self.name.clone(),
            answered,
            pending: g.queue.len() as u64,
            policy_progress: progress,
            expected_comparisons: self.expected_comparisons,
            replayed: g.replayed,
            closed: g.closed,
            run: g.run.clone(),
        }
    }

    pub(crate) fn knows(&self, query_id: &str) -> bool {
        let g = self.lock();
        g.answered.contains_key(query_id) || g.queue.iter().any(|q| q.query_id == query_id)
    }

    /// Records the answer to `query_id` and wakes the algorithm.
    pub fn answer(&self, query_id: &str, side: Side) -> Result<PendingQuery, ServiceError> {
        let mut g = self.lock();
        if g.answered.contains_key(query_id) {
            return Err(ServiceError::AlreadyAnswered(query_id.into()));
        }
        let Some(pos) = g.queue.iter().position(|q| q.query_id == query_id) else {
            return Err(ServiceError::UnknownQuery(query_id.into()));
        };
        let seq = g.queue[pos].seq;
        if let Some(log) = g.log.as_mut() {
            let rec = LabelRecord {
                schema_version: API_SCHEMA_VERSION,
                session_id: self.id.clone(),
                query_id: query_id.into(),
                seq,
                winner: side,
                timestamp_ms: now_ms(),
            };
            let line = serde_json::to_string(&rec).expect("label records serialize");
            writeln!(log, "{line}").and_then(|_| log.flush()).map_err(|e| ServiceError::Io(e.to_string()))?;
        }
        let mut q = g.queue.remove(pos).expect("position is in range");
        q.state = QueryState::Answered { winner: side };
        g.answered.insert(query_id.into(), side);
        drop(g);
        self.changed.notify_all();
        Ok(q)
    }

    /// Fails any waiting comparison; the label log stays valid for resuming.
    pub fn close(&self) {
        self.lock().closed = true;
        self.changed.notify_all();
    }

    pub(crate) fn set_run(&self, run: RunState) {
        self.lock().run = run;
        self.changed.notify_all();
    }

    /// Blocks until the run leaves the running state.
    pub fn wait_finished(&self, timeout: std::time::Duration) -> RunState {
        let g = self.lock();
        let (g, _) = self
            .changed
            .wait_timeout_while(g, timeout, |g| g.run == RunState::Running)
            .unwrap_or_else(|e| e.into_inner());
        g.run.clone()
    }

    fn ask_blocking(&self, left: &Trajectory, right: &Trajectory) -> Result<Winner, HumanError> {
        let mut g = self.lock();
        if let Some(w) = g.replay.pop_front() {
            g.replayed += 1;
            g.next_seq += 1;
            return Ok(w);
        }
        if g.closed {
            return Err(HumanError::SessionClosed { answered: g.answered.len() as u64 + g.replayed });
        }
        let seq = g.next_seq;
        g.next_seq += 1;
        let query_id = format!("{}-q{seq}", self.id);
        g.queue.push_back(PendingQuery {
            schema_version: API_SCHEMA_VERSION,
            query_id: query_id.clone(),
            session_id: self.id.clone(),
            seq,
            left: TrajectoryView::render(&self.mdp, left),
            right: TrajectoryView::render(&self.mdp, right),
            created_at_ms: now_ms(),
            state: QueryState::Pending,
        });
        self.changed.notify_all();
        loop {
            if let Some(&side) = g.answered.get(&query_id) {
                return Ok(side.into());
            }
            if g.closed {
                g.queue.retain(|q| q.query_id != query_id);
                return Err(HumanError::SessionClosed { answered: g.answered.len() as u64 + g.replayed });
            }
            g = self.changed.wait(g).unwrap_or_else(|e| e.into_inner());
        }
    }
}

/// The algorithm-side handle of a session.
pub struct SessionOracle(pub Arc<Session>);

impl HumanOracle for SessionOracle {
    fn ask(&self, left: &Trajectory, right: &Trajectory) -> Result<Winner, HumanError> {
        self.0.ask_blocking(left, right)
    }
}
