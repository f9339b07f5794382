//! Preference-based policy search: PPS (with a simulator), PEPS with a
//! target accuracy or a per-state episode budget, the two-phase PEPS2, and
//! fixed-budget PEPS.
//!
//! Learners here see only the environment handles and comparison outcomes;
//! nothing in this module reads rewards.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dueling::{DuelingConfig, DuelingError, DuelingSession};
use crate::env::{Environment, Simulator};
use crate::explorer::{estimate_reach, Navigator, NavigatorConfig, NavigatorError, NavigatorState, ReachEstimate};
use crate::ledger::{EpisodeKind, EpisodeLedger, EpisodeRecord};
use crate::mdp::{splice, NonstationaryPolicy, StateId, Trajectory};
use crate::preference::{Oracle, PreferenceError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum AlgoVariant {
    /// Simulator-based policy search; `n2` caps queries per state.
    Pps { epsilon1: f64, n2: u64 },
    /// Stops each state's loop once a duel at accuracy `C₀ε/(2H)` finishes.
    PepsTarget { epsilon: f64, c0: f64, n0: u64 },
    /// Runs all `n0` episodes per state with an anytime duel.
    PepsBudget { n0: u64 },
    Peps2 { epsilon: f64, alpha: f64, n0: u64, n1: u64, n2: u64 },
    /// Total episode budget `n`, split evenly across states.
    PepsFixed { n: u64 },
}

impl AlgoVariant {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Pps { .. } => "pps",
            Self::PepsTarget { .. } => "peps_target",
            Self::PepsBudget { .. } => "peps_budget",
            Self::Peps2 { .. } => "peps2",
            Self::PepsFixed { .. } => "peps_fixed",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EngineKind {
    Knockout,
    BeatTheMean,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgoConfig {
    pub variant: AlgoVariant,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Dueling engine; defaults to Knockout for accuracy-driven variants and
    /// Beat-the-Mean for budget-driven ones.
    #[serde(default)]
    pub engine: Option<EngineKind>,
    #[serde(default = "default_gamma")]
    pub btm_gamma: f64,
    #[serde(default)]
    pub navigator: NavigatorConfig,
    #[serde(default)]
    pub seed: u64,
}

fn default_delta() -> f64 {
    0.1
}

fn default_gamma() -> f64 {
    0.5
}

impl AlgoConfig {
    pub fn new(variant: AlgoVariant, seed: u64) -> Self {
        Self {
            variant,
            delta: default_delta(),
            engine: None,
            btm_gamma: default_gamma(),
            navigator: NavigatorConfig::default(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), AlgoError> {
        let bad = |m: String| Err(AlgoError::InvalidConfig(m));
        let unit = |name: &str, x: f64| {
            if x > 0.0 && x < 1.0 {
                Ok(())
            } else {
                Err(AlgoError::InvalidConfig(format!("{name} must lie in (0, 1), got {x}")))
            }
        };
        unit("delta", self.delta)?;
        if !(self.btm_gamma > 0.0 && self.btm_gamma.is_finite()) {
            return bad(format!("btm_gamma must be positive, got {}", self.btm_gamma));
        }
        self.navigator.validate()?;
        match self.variant {
            AlgoVariant::Pps { epsilon1, .. } => unit("epsilon1", epsilon1)?,
            AlgoVariant::PepsTarget { epsilon, c0, .. } => {
                unit("epsilon", epsilon)?;
                if !(c0 > 0.0 && c0 <= 1.0) {
                    return bad(format!("c0 must lie in (0, 1], got {c0}"));
                }
            }
            AlgoVariant::Peps2 { epsilon, alpha, n1, .. } => {
                unit("epsilon", epsilon)?;
                if !(alpha >= 1.0 && alpha.is_finite()) {
                    return bad(format!("alpha must be at least 1, got {alpha}"));
                }
                if n1 == 0 {
                    return bad("n1 must be positive".into());
                }
            }
            AlgoVariant::PepsBudget { .. } | AlgoVariant::PepsFixed { .. } => {
                if self.engine == Some(EngineKind::Knockout) {
                    return bad(format!("{} needs an anytime dueling engine", self.variant.label()));
                }
            }
        }
        Ok(())
    }

    fn session_config(&self, epsilon: Option<f64>, delta: f64) -> DuelingConfig {
        let knockout = match (self.engine, epsilon) {
            (Some(EngineKind::Knockout), _) => true,
            (Some(EngineKind::BeatTheMean), _) => false,
            (None, e) => e.is_some(),
        };
        match epsilon {
            Some(epsilon) if knockout => DuelingConfig::Knockout { epsilon, delta },
            _ => DuelingConfig::BeatTheMean {
                delta,
                gamma: self.btm_gamma,
                budget: None,
            },
        }
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum AlgoError {
    #[error("invalid algorithm configuration: {0}")]
    InvalidConfig(String),
    #[error("budget {budget} is below the {states} non-terminating states")]
    BudgetTooSmall { budget: u64, states: usize },
    #[error("this algorithm needs {0} access")]
    WrongAccess(&'static str),
    #[error(transparent)]
    Dueling(#[from] DuelingError),
    #[error(transparent)]
    Navigator(#[from] NavigatorError),
    #[error(transparent)]
    Preference(#[from] PreferenceError),
}

/// Dueling outcome at one state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateDuel {
    pub state: StateId,
    pub comparisons: u64,
    pub finished: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunCounters {
    /// SC_s
    pub env_steps: u64,
    /// SC_p
    pub comparisons: u64,
    pub episodes: u64,
    pub duels: Vec<StateDuel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub policy: NonstationaryPolicy,
    pub initial_policy: NonstationaryPolicy,
    pub counters: RunCounters,
    pub ledger: EpisodeLedger,
    /// PEPS2 reach estimates, by state.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reach: Vec<(StateId, ReachEstimate)>,
}

/// `ε / (4 (μ̂ S H^{α-1})^{1/α})`.
pub fn peps2_state_accuracy(epsilon: f64, mu_hat: f64, states: usize, horizon: usize, alpha: f64) -> f64 {
    epsilon / (4.0 * (mu_hat * states as f64 * (horizon as f64).powf(alpha - 1.0)).powf(1.0 / alpha))
}

/// Session accuracies at or above 1/2 carry no information; larger values
/// are capped so every session stays constructible.
const MAX_SESSION_EPSILON: f64 = 0.5;

struct Run<'o, 'm> {
    oracle: &'o mut Oracle<'m>,
    rng: ChaCha8Rng,
    ledger: EpisodeLedger,
    duels: Vec<StateDuel>,
    policy: NonstationaryPolicy,
    initial_policy: NonstationaryPolicy,
    comparisons_at_start: u64,
}

impl<'o, 'm> Run<'o, 'm> {
    fn start(oracle: &'o mut Oracle<'m>, config: &AlgoConfig, layer_sizes: &[usize], action_count: usize) -> Result<Self, AlgoError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let policy = NonstationaryPolicy::uniform_random(layer_sizes, action_count, &mut rng);
        let comparisons_at_start = oracle.comparisons();
        Ok(Self {
            oracle,
            rng,
            ledger: EpisodeLedger::default(),
            duels: Vec::new(),
            initial_policy: policy.clone(),
            policy,
            comparisons_at_start,
        })
    }

    fn session(&mut self, config: DuelingConfig, arms: usize) -> Result<DuelingSession, AlgoError> {
        let seed = self.rng.random::<u64>();
        Ok(DuelingSession::new(config, arms, seed)?)
    }

    /// Rolls out the pending query's next action from the current state of
    /// `env` and, once two trajectories are buffered, compares them.
    fn duel_rollout(
        &mut self,
        env: &mut Environment<'_>,
        layer: usize,
        session: &mut DuelingSession,
        buffer: &mut Option<Trajectory>,
        record: &mut EpisodeRecord,
    ) -> Result<(), AlgoError> {
        let Some((a, b)) = session.next_query() else {
            return Ok(());
        };
        let action = if buffer.is_none() { a } else { b };
        let continuation = splice(action, &self.policy, layer);
        let tau = env.finish_episode(&continuation, &mut self.rng);
        record.steps += tau.len() as u64;
        record.query = Some((a, b));
        record.action = Some(action);
        match buffer.take() {
            None => *buffer = Some(tau),
            Some(first) => {
                let winner = self.oracle.compare(&first, &tau)?;
                session.report_outcome(winner)?;
                record.outcome = Some(winner);
            }
        }
        Ok(())
    }

    fn settle(&mut self, state: StateId, session: &DuelingSession) -> Result<(), AlgoError> {
        if session.is_finished() {
            self.policy.set_action(state, session.best_arm()?);
        }
        self.duels.push(StateDuel {
            state,
            comparisons: session.comparisons_used(),
            finished: session.is_finished(),
        });
        Ok(())
    }

    fn finish(self, env_steps: u64) -> RunOutput {
        let comparisons = self.oracle.comparisons() - self.comparisons_at_start;
        RunOutput {
            counters: RunCounters {
                env_steps,
                comparisons,
                episodes: self.ledger.len() as u64,
                duels: self.duels,
            },
            policy: self.policy,
            initial_policy: self.initial_policy,
            ledger: self.ledger,
            reach: Vec::new(),
        }
    }
}

fn record(kind: EpisodeKind, target: StateId) -> EpisodeRecord {
    EpisodeRecord {
        index: 0,
        kind,
        target,
        policy_hash: None,
        reached: None,
        steps: 0,
        query: None,
        action: None,
        outcome: None,
    }
}

/// States visited as targets, last layer first. Layer-0 states other than
/// `s0` are never reached from the start and are skipped.
fn targets(layer_sizes: &[usize], start: StateId, skip_unreachable_start_layer: bool) -> Vec<StateId> {
    let mut out = Vec::new();
    for h in (0..layer_sizes.len()).rev() {
        for s in 0..layer_sizes[h] {
            let st = StateId::new(h, s);
            if skip_unreachable_start_layer && h == 0 && st != start {
                continue;
            }
            out.push(st);
        }
    }
    out
}

/// Preference-based policy search with generative access.
pub fn pps(sim: &mut Simulator<'_>, oracle: &mut Oracle<'_>, config: &AlgoConfig) -> Result<RunOutput, AlgoError> {
    let AlgoVariant::Pps { epsilon1, n2 } = config.variant else {
        return Err(AlgoError::WrongAccess("episodic"));
    };
    let steps0 = sim.steps();
    let layer_sizes = sim.layer_sizes().to_vec();
    let a_count = sim.action_count();
    let s_count = sim.state_count();
    let mut run = Run::start(oracle, config, &layer_sizes, a_count)?;
    let duel_config = config.session_config(Some(epsilon1), config.delta / s_count as f64);
    for state in targets(&layer_sizes, sim.start_state(), false) {
        let mut session = run.session(duel_config, a_count)?;
        for _ in 0..n2 {
            let Some((a, b)) = session.next_query() else { break };
            let mut pair = Vec::with_capacity(2);
            for (i, action) in [a, b].into_iter().enumerate() {
                let continuation = splice(action, &run.policy, state.layer);
                let tau = sim.rollout_from(state, &continuation, &mut run.rng);
                let mut rec = record(EpisodeKind::Simulate, state);
                rec.steps = tau.len() as u64;
                rec.query = Some((a, b));
                rec.action = Some(action);
                rec.reached = Some(state);
                pair.push(tau);
                if i == 1 {
                    let winner = run.oracle.compare(&pair[0], &pair[1])?;
                    session.report_outcome(winner)?;
                    rec.outcome = Some(winner);
                }
                run.ledger.push(rec);
            }
        }
        run.settle(state, &session)?;
    }
    Ok(run.finish(sim.steps() - steps0))
}

/// Exploration plus per-state dueling, without a simulator.
pub fn peps(env: &mut Environment<'_>, oracle: &mut Oracle<'_>, config: &AlgoConfig) -> Result<RunOutput, AlgoError> {
    let s_count = env.state_count();
    let horizon = env.horizon();
    let (n0, duel_config, early_stop) = match config.variant {
        AlgoVariant::PepsTarget { epsilon, c0, n0 } => (
            n0,
            config.session_config(Some(c0 * epsilon / (2.0 * horizon as f64)), config.delta / (4.0 * s_count as f64)),
            true,
        ),
        AlgoVariant::PepsBudget { n0 } => (n0, config.session_config(None, config.delta / (4.0 * s_count as f64)), false),
        AlgoVariant::Pps { .. } => return Err(AlgoError::WrongAccess("simulator")),
        _ => return Err(AlgoError::InvalidConfig("peps runs the target and budget variants".into())),
    };
    let steps0 = env.steps();
    let layer_sizes = env.layer_sizes().to_vec();
    let a_count = env.action_count();
    let mut run = Run::start(oracle, config, &layer_sizes, a_count)?;
    for target in targets(&layer_sizes, env.start_state(), true) {
        let mut nav = NavigatorState::for_env(target, env, config.navigator, n0)?;
        let mut session = run.session(duel_config, a_count)?;
        let mut buffer = None;
        for _ in 0..n0 {
            // a finished duel at s0 leaves nothing to navigate or roll out
            if session.is_finished() && (early_stop || target.layer == 0) {
                break;
            }
            let pi = nav.propose_policy(&mut run.rng);
            let path = env.navigate(&pi, target.layer, &mut run.rng);
            nav.observe(&path)?;
            let mut rec = record(EpisodeKind::Explore, target);
            rec.policy_hash = Some(pi.short_digest());
            rec.steps = path.actions.len() as u64;
            rec.reached = Some(path.end_state());
            if path.end_state() == target {
                run.duel_rollout(env, target.layer, &mut session, &mut buffer, &mut rec)?;
            }
            run.ledger.push(rec);
        }
        if !early_stop {
            session.conclude();
        }
        run.settle(target, &session)?;
    }
    Ok(run.finish(env.steps() - steps0))
}

/// Two-phase variant: learn and freeze a navigation policy per state,
/// estimate its reach probability, then duel with per-state accuracies.
pub fn peps2(env: &mut Environment<'_>, oracle: &mut Oracle<'_>, config: &AlgoConfig) -> Result<RunOutput, AlgoError> {
    let AlgoVariant::Peps2 { epsilon, alpha, n0, n1, n2 } = config.variant else {
        return Err(AlgoError::InvalidConfig("peps2 needs the peps2 variant".into()));
    };
    let steps0 = env.steps();
    let layer_sizes = env.layer_sizes().to_vec();
    let a_count = env.action_count();
    let s_count = env.state_count();
    let horizon = env.horizon();
    let delta_s = config.delta / (4.0 * s_count as f64);
    let mut run = Run::start(oracle, config, &layer_sizes, a_count)?;
    let order = targets(&layer_sizes, env.start_state(), true);

    let mut frozen = Vec::with_capacity(order.len());
    for &target in order.iter().rev() {
        if target.layer == 0 {
            // every episode starts at s0, so nothing needs learning or estimating
            let pi = NonstationaryPolicy::constant(&layer_sizes, 0);
            frozen.push((target, pi, ReachEstimate::from_counts(n1, n1, s_count, config.delta)));
            continue;
        }
        let mut nav = NavigatorState::for_env(target, env, config.navigator, n0)?;
        for _ in 0..n0 {
            let pi = nav.propose_policy(&mut run.rng);
            let path = env.navigate(&pi, target.layer, &mut run.rng);
            nav.observe(&path)?;
            let mut rec = record(EpisodeKind::Explore, target);
            rec.policy_hash = Some(pi.short_digest());
            rec.steps = path.actions.len() as u64;
            rec.reached = Some(path.end_state());
            run.ledger.push(rec);
        }
        let pi = nav.frozen_policy();
        let steps_before = env.steps();
        let estimate = estimate_reach(env, &pi, target, n1, config.delta, &mut run.rng);
        let hash = pi.short_digest();
        let per_rollout = (env.steps() - steps_before) / n1;
        for _ in 0..n1 {
            let mut rec = record(EpisodeKind::Estimate, target);
            rec.policy_hash = Some(hash);
            rec.steps = per_rollout;
            run.ledger.push(rec);
        }
        frozen.push((target, pi, estimate));
    }
    frozen.reverse();

    for (target, pi, estimate) in &frozen {
        let eps_s = peps2_state_accuracy(epsilon, estimate.mu_hat, s_count, horizon, alpha).min(MAX_SESSION_EPSILON);
        let mut session = run.session(config.session_config(Some(eps_s), delta_s), a_count)?;
        let mut buffer = None;
        let hash = pi.short_digest();
        for _ in 0..n2 {
            if session.is_finished() {
                break;
            }
            let path = env.navigate(pi, target.layer, &mut run.rng);
            let mut rec = record(EpisodeKind::Duel, *target);
            rec.policy_hash = Some(hash);
            rec.steps = path.actions.len() as u64;
            rec.reached = Some(path.end_state());
            if path.end_state() == *target {
                run.duel_rollout(env, target.layer, &mut session, &mut buffer, &mut rec)?;
            }
            run.ledger.push(rec);
        }
        run.settle(*target, &session)?;
    }
    let mut out = run.finish(env.steps() - steps0);
    out.reach = frozen.iter().map(|(t, _, e)| (*t, *e)).collect();
    Ok(out)
}

/// Fixed total budget: `⌊N/S⌋` episodes per target, duelling at whichever
/// state is occupied at the target layer.
pub fn peps_fixed_budget(env: &mut Environment<'_>, oracle: &mut Oracle<'_>, config: &AlgoConfig) -> Result<RunOutput, AlgoError> {
    let AlgoVariant::PepsFixed { n } = config.variant else {
        return Err(AlgoError::InvalidConfig("peps_fixed_budget needs the peps_fixed variant".into()));
    };
    let s_count = env.state_count();
    if n < s_count as u64 {
        return Err(AlgoError::BudgetTooSmall { budget: n, states: s_count });
    }
    let n0 = n / s_count as u64;
    let steps0 = env.steps();
    let layer_sizes = env.layer_sizes().to_vec();
    let a_count = env.action_count();
    let mut run = Run::start(oracle, config, &layer_sizes, a_count)?;
    let duel_config = config.session_config(None, config.delta / (4.0 * s_count as f64));
    let mut sessions: Vec<Vec<DuelingSession>> = Vec::with_capacity(layer_sizes.len());
    for &size in &layer_sizes {
        let mut row = Vec::with_capacity(size);
        for _ in 0..size {
            row.push(run.session(duel_config, a_count)?);
        }
        sessions.push(row);
    }
    let mut buffers: Vec<Vec<Option<Trajectory>>> = layer_sizes.iter().map(|&k| vec![None; k]).collect();

    for target in targets(&layer_sizes, env.start_state(), false) {
        let mut nav = NavigatorState::for_env(target, env, config.navigator, n0)?;
        for _ in 0..n0 {
            let pi = nav.propose_policy(&mut run.rng);
            let path = env.navigate(&pi, target.layer, &mut run.rng);
            nav.observe(&path)?;
            let occupied = path.end_state();
            let mut rec = record(EpisodeKind::Explore, target);
            rec.policy_hash = Some(pi.short_digest());
            rec.steps = path.actions.len() as u64;
            rec.reached = Some(occupied);
            let session = &mut sessions[occupied.layer][occupied.index];
            let buffer = &mut buffers[occupied.layer][occupied.index];
            if session.next_query().is_some() {
                run.duel_rollout(env, occupied.layer, session, buffer, &mut rec)?;
            } else {
                let tau = env.finish_episode(&run.policy, &mut run.rng);
                rec.steps += tau.len() as u64;
            }
            if rec.outcome.is_some() {
                let best = session.best_arm()?;
                run.policy.set_action(occupied, best);
            }
            run.ledger.push(rec);
        }
    }
    for (h, row) in sessions.iter().enumerate() {
        for (s, session) in row.iter().enumerate() {
            run.duels.push(StateDuel {
                state: StateId::new(h, s),
                comparisons: session.comparisons_used(),
                finished: session.is_finished(),
            });
        }
    }
    Ok(run.finish(env.steps() - steps0))
}

/// Runs `config` against `mdp` with the access its variant calls for.
pub fn run_algorithm(
    mdp: &crate::mdp::LayeredMdp,
    oracle: &mut Oracle<'_>,
    config: &AlgoConfig,
) -> Result<RunOutput, AlgoError> {
    match config.variant {
        AlgoVariant::Pps { .. } => pps(&mut Simulator::new(mdp), oracle, config),
        AlgoVariant::PepsTarget { .. } | AlgoVariant::PepsBudget { .. } => peps(&mut Environment::new(mdp), oracle, config),
        AlgoVariant::Peps2 { .. } => peps2(&mut Environment::new(mdp), oracle, config),
        AlgoVariant::PepsFixed { .. } => peps_fixed_budget(&mut Environment::new(mdp), oracle, config),
    }
}
