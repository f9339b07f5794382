//! Per-episode run log used for replay and counter audits.

use serde::{Deserialize, Serialize};

use crate::mdp::StateId;
use crate::preference::Winner;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpisodeKind {
    /// Navigation toward a target, possibly followed by a duel rollout.
    Explore,
    /// Reach-probability estimation rollout.
    Estimate,
    /// Navigation with a frozen policy, possibly followed by a duel rollout.
    Duel,
    /// Simulator rollout started directly at the duel state.
    Simulate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub index: u64,
    pub kind: EpisodeKind,
    pub target: StateId,
    /// Short digest of the navigation policy, when one was used.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy_hash: Option<u64>,
    /// State occupied at the target layer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reached: Option<StateId>,
    pub steps: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub query: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<Winner>,
}

/// Totals recomputed from a ledger.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerTotals {
    pub env_steps: u64,
    pub comparisons: u64,
    pub episodes: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLedger {
    pub entries: Vec<EpisodeRecord>,
}

impl EpisodeLedger {
    pub fn push(&mut self, mut record: EpisodeRecord) {
        record.index = self.entries.len() as u64;
        self.entries.push(record);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn totals(&self) -> LedgerTotals {
        LedgerTotals {
            env_steps: self.entries.iter().map(|e| e.steps).sum(),
            comparisons: self.entries.iter().filter(|e| e.outcome.is_some()).count() as u64,
            episodes: self.entries.len() as u64,
        }
    }

    /// Comparison outcomes in the order they were made.
    pub fn outcomes(&self) -> Vec<Winner> {
        self.entries.iter().filter_map(|e| e.outcome).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("ledgers always serialize")
    }
}
