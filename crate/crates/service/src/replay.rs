//! Label-log reading and an oracle that answers from a recorded log.

use std::path::Path;
use std::sync::Mutex;

use pbrl_core::mdp::Trajectory;
use pbrl_core::preference::{HumanError, HumanOracle, Winner};

use crate::session::LabelRecord;
use crate::ServiceError;

pub fn read_label_log(path: &Path) -> Result<Vec<LabelRecord>, ServiceError> {
    let text = std::fs::read_to_string(path).map_err(|e| ServiceError::Io(format!("{}: {e}", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| ServiceError::BadLog(format!("line {}: {e}", i + 1))))
        .collect()
}

/// Winners of `session_id`'s records in stream order.
pub fn session_winners(records: &[LabelRecord], session_id: &str) -> Result<Vec<Winner>, ServiceError> {
    let mut mine: Vec<&LabelRecord> = records.iter().filter(|r| r.session_id == session_id).collect();
    mine.sort_by_key(|r| r.seq);
    for (i, r) in mine.iter().enumerate() {
        if r.seq != i as u64 {
            return Err(ServiceError::BadLog(format!("session {session_id} is missing answer {i}")));
        }
    }
    Ok(mine.iter().map(|r| r.winner.into()).collect())
}

/// Replays recorded answers in order; fails once they run out.
pub struct LogReplay {
    answers: Mutex<std::vec::IntoIter<Winner>>,
    used: Mutex<u64>,
}

impl LogReplay {
    pub fn new(answers: Vec<Winner>) -> Self {
        Self { answers: Mutex::new(answers.into_iter()), used: Mutex::new(0) }
    }

    pub fn from_log(path: &Path, session_id: &str) -> Result<Self, ServiceError> {
        Ok(Self::new(session_winners(&read_label_log(path)?, session_id)?))
    }
}

impl HumanOracle for LogReplay {
    fn ask(&self, _left: &Trajectory, _right: &Trajectory) -> Result<Winner, HumanError> {
        let mut used = self.used.lock().unwrap_or_else(|e| e.into_inner());
        match self.answers.lock().unwrap_or_else(|e| e.into_inner()).next() {
            Some(w) => {
                *used += 1;
                Ok(w)
            }
            None => Err(HumanError::SessionClosed { answered: *used }),
        }
    }
}
