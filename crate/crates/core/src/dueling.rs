//! Incremental PAC dueling-bandit engines.
//!
//! A [`DuelingSession`] proposes a pair of arms, consumes the outcome of
//! comparing them, and eventually reports a best arm. Two engines are
//! provided: a single-elimination [Knockout](DuelingConfig::Knockout)
//! tournament with a fixed comparison budget, and an anytime
//! [Beat-the-Mean](DuelingConfig::BeatTheMean) elimination scheme.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use crate::preference::Winner;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "engine", rename_all = "snake_case")]
pub enum DuelingConfig {
    /// `gamma` scales the confidence radius; `budget` caps comparisons.
    BeatTheMean {
        delta: f64,
        gamma: f64,
        #[serde(default)]
        budget: Option<u64>,
    },
    Knockout { epsilon: f64, delta: f64 },
}

impl DuelingConfig {
    pub fn validate(&self) -> Result<(), DuelingError> {
        let unit = |name: &str, x: f64| {
            if x > 0.0 && x < 1.0 {
                Ok(())
            } else {
                Err(DuelingError::InvalidConfig(format!("{name} must lie in (0, 1), got {x}")))
            }
        };
        match *self {
            Self::BeatTheMean { delta, gamma, budget } => {
                unit("delta", delta)?;
                if !(gamma > 0.0 && gamma.is_finite()) {
                    return Err(DuelingError::InvalidConfig(format!("gamma must be positive, got {gamma}")));
                }
                if budget == Some(0) {
                    return Err(DuelingError::InvalidConfig("budget must be positive".into()));
                }
                Ok(())
            }
            Self::Knockout { epsilon, delta } => {
                unit("epsilon", epsilon)?;
                unit("delta", delta)
            }
        }
    }

    /// Same engine with a different confidence level.
    pub fn with_delta(self, delta: f64) -> Self {
        match self {
            Self::BeatTheMean { gamma, budget, .. } => Self::BeatTheMean { delta, gamma, budget },
            Self::Knockout { epsilon, .. } => Self::Knockout { epsilon, delta },
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::BeatTheMean { .. } => "beat_the_mean",
            Self::Knockout { .. } => "knockout",
        }
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum DuelingError {
    #[error("invalid dueling configuration: {0}")]
    InvalidConfig(String),
    #[error("a session needs at least one arm")]
    NoArms,
    #[error("no query is pending")]
    NoPendingQuery,
    #[error("the knockout tournament has not finished")]
    Unfinished,
    #[error("malformed session snapshot: {0}")]
    Snapshot(String),
}

/// Comparisons and wins credited to one arm.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmStats {
    pub comparisons: u64,
    pub wins: u64,
}

/// Per-round comparison count for Knockout: `⌈(2/ε_r²) ln(2/δ_r)⌉`.
pub fn knockout_duel_length(epsilon_r: f64, delta_r: f64) -> u64 {
    ((2.0 / (epsilon_r * epsilon_r)) * (2.0 / delta_r).ln()).ceil() as u64
}

/// Number of rounds `⌈log₂ K⌉`.
pub fn knockout_rounds(arm_count: usize) -> usize {
    let mut rounds = 0;
    while (1usize << rounds) < arm_count {
        rounds += 1;
    }
    rounds
}

/// `(ε_r, m_r)` for rounds `r = 1..=R`.
pub fn knockout_schedule(epsilon: f64, delta: f64, arm_count: usize) -> Vec<(f64, u64)> {
    let rounds = knockout_rounds(arm_count);
    let delta_r = delta / arm_count as f64;
    (1..=rounds)
        .map(|r| {
            let eps_r = epsilon * 0.5f64.powi((rounds - r + 1) as i32);
            (eps_r, knockout_duel_length(eps_r, delta_r))
        })
        .collect()
}

/// Worst-case comparisons of a Knockout tournament: every duel plus a tiebreak
/// when its length is even.
pub fn knockout_budget(epsilon: f64, delta: f64, arm_count: usize) -> u64 {
    let mut alive = arm_count;
    let mut total = 0u64;
    for (_, m) in knockout_schedule(epsilon, delta, arm_count) {
        let duels = (alive / 2) as u64;
        total = total.saturating_add(duels.saturating_mul(m + u64::from(m % 2 == 0)));
        alive = alive.div_ceil(2);
    }
    total
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct KnockoutState {
    schedule: Vec<(f64, u64)>,
    round: usize,
    bracket: Vec<usize>,
    advancing: Vec<usize>,
    /// index of the current duel's first arm in `bracket`
    cursor: usize,
    duel_played: u64,
    duel_first_wins: u64,
    budget: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct BeatTheMeanState {
    active: Vec<bool>,
    /// `pair_wins[b][o]`: wins of b over o among comparisons of the pair
    pair_wins: Vec<Vec<u64>>,
    pair_counts: Vec<Vec<u64>>,
    cursor: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Engine {
    Knockout(KnockoutState),
    BeatTheMean(BeatTheMeanState),
}

/// Incremental state of one dueling-bandit run. Serializes to a JSON
/// snapshot that resumes with an identical query sequence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DuelingSession {
    config: DuelingConfig,
    arm_count: usize,
    stats: Vec<ArmStats>,
    engine: Engine,
    pending: Option<(usize, usize)>,
    finished: bool,
    best: Option<usize>,
    comparisons_used: u64,
    rng: ChaCha8Rng,
}

impl DuelingSession {
    pub fn new(config: DuelingConfig, arm_count: usize, seed: u64) -> Result<Self, DuelingError> {
        config.validate()?;
        if arm_count == 0 {
            return Err(DuelingError::NoArms);
        }
        let engine = match config {
            DuelingConfig::Knockout { epsilon, delta } => Engine::Knockout(KnockoutState {
                schedule: knockout_schedule(epsilon, delta, arm_count),
                round: 0,
                bracket: (0..arm_count).collect(),
                advancing: Vec::new(),
                cursor: 0,
                duel_played: 0,
                duel_first_wins: 0,
                budget: knockout_budget(epsilon, delta, arm_count),
            }),
            DuelingConfig::BeatTheMean { .. } => Engine::BeatTheMean(BeatTheMeanState {
                active: vec![true; arm_count],
                pair_wins: vec![vec![0; arm_count]; arm_count],
                pair_counts: vec![vec![0; arm_count]; arm_count],
                cursor: 0,
            }),
        };
        let mut session = Self {
            config,
            arm_count,
            stats: vec![ArmStats::default(); arm_count],
            engine,
            pending: None,
            finished: false,
            best: None,
            comparisons_used: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        if arm_count == 1 {
            session.finish(0);
        } else {
            session.refresh_pending();
        }
        Ok(session)
    }

    pub fn config(&self) -> &DuelingConfig {
        &self.config
    }

    pub fn arm_count(&self) -> usize {
        self.arm_count
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    pub fn comparisons_used(&self) -> u64 {
        self.comparisons_used
    }

    pub fn arm_stats(&self) -> &[ArmStats] {
        &self.stats
    }

    /// Comparison cap: the precomputed Knockout budget, or the configured
    /// Beat-the-Mean budget.
    pub fn budget(&self) -> Option<u64> {
        match (&self.engine, self.config) {
            (Engine::Knockout(k), _) => Some(k.budget),
            (_, DuelingConfig::BeatTheMean { budget, .. }) => budget,
            _ => None,
        }
    }

    pub fn active_arms(&self) -> Vec<usize> {
        if let Some(best) = self.best.filter(|_| self.finished) {
            return vec![best];
        }
        match &self.engine {
            Engine::Knockout(k) => {
                let mut arms: Vec<usize> = k.advancing.clone();
                arms.extend_from_slice(&k.bracket[k.cursor.min(k.bracket.len())..]);
                arms.sort_unstable();
                arms
            }
            Engine::BeatTheMean(b) => (0..self.arm_count).filter(|&i| b.active[i]).collect(),
        }
    }

    /// The pair to compare next, or `None` once finished. Stable until
    /// [`report_outcome`](Self::report_outcome) is called.
    pub fn next_query(&self) -> Option<(usize, usize)> {
        self.pending
    }

    pub fn report_outcome(&mut self, winner: Winner) -> Result<(), DuelingError> {
        let (a, b) = self.pending.take().ok_or(DuelingError::NoPendingQuery)?;
        let (w, l) = match winner {
            Winner::First => (a, b),
            Winner::Second => (b, a),
        };
        self.comparisons_used += 1;
        self.stats[a].comparisons += 1;
        self.stats[b].comparisons += 1;
        self.stats[w].wins += 1;
        match &mut self.engine {
            Engine::Knockout(k) => {
                k.duel_played += 1;
                if winner == Winner::First {
                    k.duel_first_wins += 1;
                }
                let m = k.schedule[k.round].1;
                let played = k.duel_played;
                let first = k.duel_first_wins;
                let decided = played > m || (played == m && 2 * first != m);
                if decided {
                    let survivor = if 2 * first > played { a } else { b };
                    k.advancing.push(survivor);
                    k.cursor += 2;
                    k.duel_played = 0;
                    k.duel_first_wins = 0;
                }
            }
            Engine::BeatTheMean(s) => {
                s.pair_counts[w][l] += 1;
                s.pair_counts[l][w] += 1;
                s.pair_wins[w][l] += 1;
                self.eliminate();
            }
        }
        if !self.finished {
            self.refresh_pending();
        }
        Ok(())
    }

    /// The session's answer. Knockout requires a finished tournament;
    /// Beat-the-Mean answers at any time with the active arm of highest
    /// empirical score (ties toward the lowest index).
    pub fn best_arm(&self) -> Result<usize, DuelingError> {
        if let Some(best) = self.best {
            return Ok(best);
        }
        match &self.engine {
            Engine::Knockout(_) => Err(DuelingError::Unfinished),
            Engine::BeatTheMean(s) => Ok(btm_leader(s, self.arm_count)),
        }
    }

    /// Ends an anytime session at its current best arm. Sessions that never
    /// received a comparison, and unfinished tournaments, keep running.
    /// Returns whether the session is finished afterwards.
    pub fn conclude(&mut self) -> bool {
        if !self.finished && self.comparisons_used > 0 {
            if let Engine::BeatTheMean(s) = &self.engine {
                let best = btm_leader(s, self.arm_count);
                self.finish(best);
            }
        }
        self.finished
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("session snapshots always serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, DuelingError> {
        serde_json::from_str(text).map_err(|e| DuelingError::Snapshot(e.to_string()))
    }

    fn finish(&mut self, best: usize) {
        self.finished = true;
        self.best = Some(best);
        self.pending = None;
    }

    fn eliminate(&mut self) {
        let DuelingConfig::BeatTheMean { delta, gamma, budget } = self.config else {
            unreachable!()
        };
        let Engine::BeatTheMean(s) = &self.engine else { unreachable!() };
        let k = self.arm_count;
        let active: Vec<usize> = (0..k).filter(|&i| s.active[i]).collect();
        let scored: Vec<(usize, f64, u64)> = active
            .iter()
            .map(|&b| {
                let (w, n) = btm_totals(s, b);
                (b, if n == 0 { 0.5 } else { w as f64 / n as f64 }, n)
            })
            .collect();
        let n_max = budget.unwrap_or_else(|| scored.iter().map(|x| x.2).max().unwrap_or(1)).max(1);
        let log_term = (2.0 * k as f64 * n_max as f64 / delta).ln();
        let radius = |n: u64| gamma * (log_term / n as f64).sqrt();
        let mut eliminated = None;
        if scored.iter().all(|x| x.2 > 0) {
            let worst = scored.iter().min_by(|x, y| x.1.total_cmp(&y.1)).unwrap();
            let leader = scored.iter().max_by(|x, y| x.1.total_cmp(&y.1)).unwrap();
            if worst.1 + radius(worst.2) < leader.1 - radius(leader.2) {
                eliminated = Some(worst.0);
            }
        }
        let Engine::BeatTheMean(s) = &mut self.engine else { unreachable!() };
        if let Some(b) = eliminated {
            s.active[b] = false;
        }
        let remaining: Vec<usize> = (0..k).filter(|&i| s.active[i]).collect();
        if remaining.len() == 1 {
            self.finish(remaining[0]);
        } else if budget.is_some_and(|cap| self.comparisons_used >= cap) {
            let best = btm_leader(s, k);
            self.finish(best);
        }
    }

    fn refresh_pending(&mut self) {
        let k = self.arm_count;
        match &mut self.engine {
            Engine::Knockout(state) => loop {
                if state.cursor + 1 < state.bracket.len() {
                    self.pending = Some((state.bracket[state.cursor], state.bracket[state.cursor + 1]));
                    return;
                }
                if state.cursor < state.bracket.len() {
                    let bye = state.bracket[state.cursor];
                    state.advancing.push(bye);
                }
                let next = std::mem::take(&mut state.advancing);
                state.round += 1;
                state.cursor = 0;
                if next.len() == 1 {
                    self.finish(next[0]);
                    return;
                }
                state.bracket = next;
            },
            Engine::BeatTheMean(s) => {
                let mut b = s.cursor % k;
                while !s.active[b] {
                    b = (b + 1) % k;
                }
                s.cursor = b + 1;
                let others: Vec<usize> = (0..k).filter(|&o| o != b && s.active[o]).collect();
                let o = others[self.rng.random_range(0..others.len())];
                self.pending = Some((b, o));
            }
        }
    }
}

/// Wins and comparisons of `b` against currently active opponents.
fn btm_totals(s: &BeatTheMeanState, b: usize) -> (u64, u64) {
    let mut w = 0;
    let mut n = 0;
    for o in 0..s.active.len() {
        if s.active[o] && o != b {
            w += s.pair_wins[b][o];
            n += s.pair_counts[b][o];
        }
    }
    (w, n)
}

fn btm_leader(s: &BeatTheMeanState, k: usize) -> usize {
    let mut best = None;
    let mut best_score = f64::NEG_INFINITY;
    for b in (0..k).filter(|&b| s.active[b]) {
        let (w, n) = btm_totals(s, b);
        let score = if n == 0 { 0.5 } else { w as f64 / n as f64 };
        if score > best_score {
            best = Some(b);
            best_score = score;
        }
    }
    best.expect("at least one active arm")
}
