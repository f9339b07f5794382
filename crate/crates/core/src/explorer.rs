//! Target-state navigation on the indicator reward `1{s = target}`.
//!
//! [`NavigatorState`] is an optimistic tabular Q-learner with a Hoeffding
//! bonus. The [`Navigator`] trait is the seam the algorithms use, so other
//! exploration engines can be plugged in.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::mdp::{NonstationaryPolicy, PathPrefix, StateId};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NavigatorConfig {
    #[serde(alias = "lr")]
    pub learning_rate: f64,
    pub ucb_ratio: f64,
    #[serde(alias = "explore_prob")]
    pub random_explore_prob: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_delta() -> f64 {
    0.1
}

impl Default for NavigatorConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            ucb_ratio: 0.1,
            random_explore_prob: 0.05,
            delta: 0.1,
        }
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum NavigatorError {
    #[error("invalid navigator configuration: {0}")]
    InvalidConfig(String),
    #[error("path ends at layer {got}, before the target layer {target}")]
    TooShort { got: usize, target: usize },
}

impl NavigatorConfig {
    pub fn validate(&self) -> Result<(), NavigatorError> {
        let bad = |m: String| Err(NavigatorError::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad(format!("learning_rate must lie in (0, 1], got {}", self.learning_rate));
        }
        if !(self.ucb_ratio >= 0.0 && self.ucb_ratio.is_finite()) {
            return bad(format!("ucb_ratio must be nonnegative, got {}", self.ucb_ratio));
        }
        if !(0.0..1.0).contains(&self.random_explore_prob) && self.random_explore_prob != 1.0 {
            return bad(format!("random_explore_prob must lie in [0, 1], got {}", self.random_explore_prob));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta must lie in (0, 1), got {}", self.delta));
        }
        Ok(())
    }
}

/// An exploration engine that learns to reach one target state.
pub trait Navigator {
    fn target(&self) -> StateId;
    fn propose_policy(&mut self, rng: &mut dyn rand::RngCore) -> NonstationaryPolicy;
    fn observe(&mut self, path: &PathPrefix) -> Result<(), NavigatorError>;
    /// Deterministic policy to replay once learning is over.
    fn frozen_policy(&self) -> NonstationaryPolicy;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NavigatorState {
    target: StateId,
    config: NavigatorConfig,
    layer_sizes: Vec<usize>,
    action_count: usize,
    /// `q[h][s][a]` for layers below the target
    q: Vec<Vec<Vec<f64>>>,
    counts: Vec<Vec<Vec<u64>>>,
    log_term: f64,
    episodes_run: u64,
}

impl NavigatorState {
    /// `episode_budget` is the planned number of episodes; it sets the
    /// horizon of the confidence bonus.
    pub fn new(
        target: StateId,
        layer_sizes: &[usize],
        action_count: usize,
        config: NavigatorConfig,
        episode_budget: u64,
    ) -> Result<Self, NavigatorError> {
        config.validate()?;
        let below = &layer_sizes[..target.layer];
        let state_count: usize = layer_sizes.iter().sum();
        let log_term = ((state_count * action_count) as f64 * episode_budget.max(1) as f64 / config.delta).ln();
        Ok(Self {
            target,
            config,
            layer_sizes: layer_sizes.to_vec(),
            action_count,
            q: below.iter().map(|&n| vec![vec![1.0; action_count]; n]).collect(),
            counts: below.iter().map(|&n| vec![vec![0; action_count]; n]).collect(),
            log_term,
            episodes_run: 0,
        })
    }

    pub fn for_env(target: StateId, env: &Environment<'_>, config: NavigatorConfig, episode_budget: u64) -> Result<Self, NavigatorError> {
        Self::new(target, env.layer_sizes(), env.action_count(), config, episode_budget)
    }

    pub fn episodes_run(&self) -> u64 {
        self.episodes_run
    }

    pub fn q_value(&self, state: StateId, action: usize) -> f64 {
        self.q[state.layer][state.index][action]
    }

    pub fn visit_count(&self, state: StateId, action: usize) -> u64 {
        self.counts[state.layer][state.index][action]
    }

    fn value(&self, layer: usize, index: usize) -> f64 {
        if layer >= self.target.layer {
            return 0.0;
        }
        self.q[layer][index].iter().copied().fold(0.0, f64::max)
    }

    fn greedy(&self, layer: usize, index: usize, rng: &mut dyn rand::RngCore) -> usize {
        let row = &self.q[layer][index];
        let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ties: Vec<usize> = (0..row.len()).filter(|&a| row[a] == best).collect();
        if ties.len() == 1 {
            ties[0]
        } else {
            ties[rng.random_range(0..ties.len())]
        }
    }
}

impl Navigator for NavigatorState {
    fn target(&self) -> StateId {
        self.target
    }

    /// Greedy in the optimistic Q (random among ties), with each state's
    /// action independently replaced by a uniform one.
    fn propose_policy(&mut self, rng: &mut dyn rand::RngCore) -> NonstationaryPolicy {
        let a_count = self.action_count;
        let actions = self
            .layer_sizes
            .iter()
            .enumerate()
            .map(|(h, &n)| {
                (0..n)
                    .map(|s| {
                        if h >= self.target.layer {
                            0
                        } else if self.config.random_explore_prob > 0.0 && rng.random::<f64>() < self.config.random_explore_prob {
                            rng.random_range(0..a_count)
                        } else {
                            self.greedy(h, s, rng)
                        }
                    })
                    .collect()
            })
            .collect();
        NonstationaryPolicy::from_actions(actions)
    }

    /// Updates along the path back to front, so a hit at the target
    /// propagates to the start in one episode.
    fn observe(&mut self, path: &PathPrefix) -> Result<(), NavigatorError> {
        let target_layer = self.target.layer;
        if path.end_layer() < target_layer {
            return Err(NavigatorError::TooShort {
                got: path.end_layer(),
                target: target_layer,
            });
        }
        let lr = self.config.learning_rate;
        for h in (0..target_layer).rev() {
            let (s, a, next) = (path.states[h], path.actions[h], path.states[h + 1]);
            self.counts[h][s][a] += 1;
            let n = self.counts[h][s][a] as f64;
            let bonus = self.config.ucb_ratio * (self.log_term / n).sqrt();
            let r_syn = if h + 1 == target_layer && next == self.target.index { 1.0 } else { 0.0 };
            let target = r_syn + self.value(h + 1, next) + bonus;
            let q = &mut self.q[h][s][a];
            *q = ((1.0 - lr) * *q + lr * target).clamp(0.0, 1.0);
        }
        self.episodes_run += 1;
        Ok(())
    }

    /// Greedy policy with ties toward the lowest action.
    fn frozen_policy(&self) -> NonstationaryPolicy {
        let actions = self
            .layer_sizes
            .iter()
            .enumerate()
            .map(|(h, &n)| {
                (0..n)
                    .map(|s| {
                        if h >= self.target.layer {
                            return 0;
                        }
                        let row = &self.q[h][s];
                        let mut best = 0;
                        for a in 1..row.len() {
                            if row[a] > row[best] {
                                best = a;
                            }
                        }
                        best
                    })
                    .collect()
            })
            .collect();
        NonstationaryPolicy::from_actions(actions)
    }
}

/// Optimistic estimate of the probability of reaching a target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReachEstimate {
    pub mu_hat: f64,
    pub hits: u64,
    pub samples: u64,
}

impl ReachEstimate {
    /// `μ̂ = min{1, 2R̂/N₁ + 2√(ln(4S/δ)/N₁)}`.
    pub fn from_counts(hits: u64, samples: u64, state_count: usize, delta: f64) -> Self {
        let n = samples as f64;
        let mu_hat = (2.0 * hits as f64 / n + 2.0 * ((4.0 * state_count as f64 / delta).ln() / n).sqrt()).min(1.0);
        Self { mu_hat, hits, samples }
    }
}

/// Rolls `policy` to the target layer `samples` times and counts hits.
/// Each rollout costs `target.layer` environment steps.
pub fn estimate_reach<R: Rng + ?Sized>(
    env: &mut Environment<'_>,
    policy: &NonstationaryPolicy,
    target: StateId,
    samples: u64,
    delta: f64,
    rng: &mut R,
) -> ReachEstimate {
    assert!(samples >= 1, "reach estimation needs at least one rollout");
    let mut hits = 0;
    for _ in 0..samples {
        if env.navigate(policy, target.layer, rng).end_state() == target {
            hits += 1;
        }
    }
    ReachEstimate::from_counts(hits, samples, env.state_count(), delta)
}
