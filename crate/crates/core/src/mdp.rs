//! Layered tabular MDPs: the model, its generators, rollouts and exact
//! dynamic-programming evaluation.
//!
//! States are addressed by [`StateId`] = (layer, index within layer). Layer
//! `h` transitions only into layer `h + 1`; the last layer transitions into an
//! implicit terminal sink, so a trajectory from layer `h` has `H - h` steps.

use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Gamma};
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Version tag written into every serialized environment.
pub const MDP_SCHEMA_VERSION: u32 = 1;

const ROW_SUM_TOLERANCE: f64 = 1e-12;
const PLACEMENT_RETRY_CAP: usize = 10_000;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MdpError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("block placement infeasible after {attempts} attempts ({blocks} blocks on a {size}x{size} grid)")]
    InfeasiblePlacement { size: usize, blocks: usize, attempts: usize },
    #[error("malformed model: {0}")]
    Malformed(String),
    #[error("state {0} is not part of the model")]
    UnknownState(StateId),
}

/// A state, identified by its layer and its position inside the layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateId {
    pub layer: usize,
    pub index: usize,
}

impl StateId {
    pub fn new(layer: usize, index: usize) -> Self {
        Self { layer, index }
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(h={}, s={})", self.layer, self.index)
    }
}

/// Cell geometry for GridWorld environments, kept for rendering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridLayout {
    pub size: usize,
    /// Block cells as `(x, y)`, x to the right and y downwards.
    pub blocks: Vec<(usize, usize)>,
    pub block_reward: f64,
}

impl GridLayout {
    /// Grid cell of a layered state.
    pub fn cell(&self, state: StateId) -> (usize, usize) {
        let x = state.layer.saturating_sub(self.size - 1) + state.index;
        (x, state.layer - x)
    }
}

/// Where an environment came from; enough to regenerate it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub seed: Option<u64>,
    #[serde(default)]
    pub params: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridLayout>,
}

/// Reward normalisation for random layered MDPs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardNormalization {
    /// Shift and scale so the minimum reward is 0 and the mean reward is 1.
    #[default]
    MinZeroMeanOne,
    /// Shift and scale into [0, 1] (minimum 0, maximum 1).
    MinZeroMaxOne,
}

/// Finite-horizon MDP whose states are partitioned into `H` layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpFile", into = "MdpFile")]
pub struct LayeredMdp {
    action_count: usize,
    layer_sizes: Vec<usize>,
    /// `[h][s][a]` -> distribution over layer `h + 1` (empty for the last layer).
    transitions: Vec<Vec<Vec<Vec<f64>>>>,
    /// `[h][s][a]`
    rewards: Vec<Vec<Vec<f64>>>,
    start_state: usize,
    provenance: Provenance,
}

/// On-disk JSON layout of a [`LayeredMdp`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MdpFile {
    pub schema_version: u32,
    pub horizon: usize,
    pub action_count: usize,
    pub layer_sizes: Vec<usize>,
    pub start_state: usize,
    pub transitions: Vec<Vec<Vec<Vec<f64>>>>,
    pub rewards: Vec<Vec<Vec<f64>>>,
    pub provenance: Provenance,
}

impl From<LayeredMdp> for MdpFile {
    fn from(m: LayeredMdp) -> Self {
        MdpFile {
            schema_version: MDP_SCHEMA_VERSION,
            horizon: m.layer_sizes.len(),
            action_count: m.action_count,
            layer_sizes: m.layer_sizes,
            start_state: m.start_state,
            transitions: m.transitions,
            rewards: m.rewards,
            provenance: m.provenance,
        }
    }
}

impl TryFrom<MdpFile> for LayeredMdp {
    type Error = MdpError;

    fn try_from(f: MdpFile) -> Result<Self, MdpError> {
        if f.schema_version != MDP_SCHEMA_VERSION {
            return Err(MdpError::Malformed(format!(
                "unsupported schema version {}",
                f.schema_version
            )));
        }
        if f.horizon != f.layer_sizes.len() {
            return Err(MdpError::Malformed("horizon does not match layer count".into()));
        }
        LayeredMdp::new(
            f.action_count,
            f.layer_sizes,
            f.transitions,
            f.rewards,
            f.start_state,
            f.provenance,
        )
    }
}

impl LayeredMdp {
    /// Builds a model, checking every structural invariant.
    pub fn new(
        action_count: usize,
        layer_sizes: Vec<usize>,
        transitions: Vec<Vec<Vec<Vec<f64>>>>,
        rewards: Vec<Vec<Vec<f64>>>,
        start_state: usize,
        provenance: Provenance,
    ) -> Result<Self, MdpError> {
        let horizon = layer_sizes.len();
        if horizon == 0 || action_count == 0 {
            return Err(MdpError::Malformed("horizon and action count must be positive".into()));
        }
        if layer_sizes.contains(&0) {
            return Err(MdpError::Malformed("every layer needs at least one state".into()));
        }
        if start_state >= layer_sizes[0] {
            return Err(MdpError::Malformed("start state outside layer 0".into()));
        }
        if transitions.len() != horizon || rewards.len() != horizon {
            return Err(MdpError::Malformed("per-layer tables must have one entry per layer".into()));
        }
        for h in 0..horizon {
            let next = layer_sizes.get(h + 1).copied().unwrap_or(0);
            if transitions[h].len() != layer_sizes[h] || rewards[h].len() != layer_sizes[h] {
                return Err(MdpError::Malformed(format!("layer {h}: wrong state count")));
            }
            for s in 0..layer_sizes[h] {
                if transitions[h][s].len() != action_count || rewards[h][s].len() != action_count {
                    return Err(MdpError::Malformed(format!("state ({h},{s}): wrong action count")));
                }
                for (a, row) in transitions[h][s].iter().enumerate() {
                    if row.len() != next {
                        return Err(MdpError::Malformed(format!(
                            "row ({h},{s},{a}) has {} entries, expected {next}",
                            row.len()
                        )));
                    }
                    if next > 0 {
                        if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
                            return Err(MdpError::Malformed(format!("row ({h},{s},{a}) has negative mass")));
                        }
                        let total: f64 = row.iter().sum();
                        if (total - 1.0).abs() > ROW_SUM_TOLERANCE {
                            return Err(MdpError::Malformed(format!(
                                "row ({h},{s},{a}) sums to {total}"
                            )));
                        }
                    }
                    if !rewards[h][s][a].is_finite() {
                        return Err(MdpError::Malformed(format!("reward ({h},{s},{a}) is not finite")));
                    }
                }
            }
        }
        Ok(Self {
            action_count,
            layer_sizes,
            transitions,
            rewards,
            start_state,
            provenance,
        })
    }

    pub fn horizon(&self) -> usize {
        self.layer_sizes.len()
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    /// Number of non-terminating states (all states of all layers).
    pub fn state_count(&self) -> usize {
        self.layer_sizes.iter().sum()
    }

    pub fn start_state(&self) -> StateId {
        StateId::new(0, self.start_state)
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn contains(&self, state: StateId) -> bool {
        state.layer < self.horizon() && state.index < self.layer_sizes[state.layer]
    }

    /// All states, layer by layer.
    pub fn states(&self) -> impl Iterator<Item = StateId> + '_ {
        self.layer_sizes
            .iter()
            .enumerate()
            .flat_map(|(h, &n)| (0..n).map(move |s| StateId::new(h, s)))
    }

    /// Next-layer distribution for `(state, action)`; empty from the last layer.
    pub fn transition(&self, state: StateId, action: usize) -> &[f64] {
        &self.transitions[state.layer][state.index][action]
    }

    pub fn reward(&self, state: StateId, action: usize) -> f64 {
        self.rewards[state.layer][state.index][action]
    }

    /// Total hidden reward of a (partial) trajectory.
    pub fn trajectory_reward(&self, trajectory: &Trajectory) -> f64 {
        trajectory
            .states()
            .zip(trajectory.steps.iter())
            .map(|(s, step)| self.reward(s, step.action))
            .sum()
    }

    /// Samples the successor of `(state, action)`; `None` when leaving the last layer.
    pub fn sample_next<R: Rng + ?Sized>(&self, state: StateId, action: usize, rng: &mut R) -> Option<StateId> {
        let row = self.transition(state, action);
        if row.is_empty() {
            return None;
        }
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (j, &p) in row.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last_positive = j;
                if u < acc {
                    return Some(StateId::new(state.layer + 1, j));
                }
            }
        }
        Some(StateId::new(state.layer + 1, last_positive))
    }

    /// Largest trajectory-reward gap between any two partial trajectories
    /// sharing a start layer, over positive-probability paths.
    pub fn max_reward_gap(&self) -> f64 {
        let horizon = self.horizon();
        let mut best_hi = vec![Vec::new(); horizon];
        let mut best_lo = vec![Vec::new(); horizon];
        for h in (0..horizon).rev() {
            let mut hi = vec![f64::NEG_INFINITY; self.layer_sizes[h]];
            let mut lo = vec![f64::INFINITY; self.layer_sizes[h]];
            for s in 0..self.layer_sizes[h] {
                for a in 0..self.action_count {
                    let r = self.rewards[h][s][a];
                    let (cont_hi, cont_lo) = if h + 1 == horizon {
                        (0.0, 0.0)
                    } else {
                        let row = &self.transitions[h][s][a];
                        let mut ch = f64::NEG_INFINITY;
                        let mut cl = f64::INFINITY;
                        for (j, &p) in row.iter().enumerate() {
                            if p > 0.0 {
                                ch = ch.max(best_hi[h + 1][j]);
                                cl = cl.min(best_lo[h + 1][j]);
                            }
                        }
                        (ch, cl)
                    };
                    hi[s] = hi[s].max(r + cont_hi);
                    lo[s] = lo[s].min(r + cont_lo);
                }
            }
            best_hi[h] = hi;
            best_lo[h] = lo;
        }
        (0..horizon)
            .map(|h| {
                let hi = best_hi[h].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lo = best_lo[h].iter().cloned().fold(f64::INFINITY, f64::min);
                hi - lo
            })
            .fold(0.0, f64::max)
    }

    /// Canonical JSON form.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self, MdpError> {
        serde_json::from_str(text).map_err(|e| MdpError::Malformed(e.to_string()))
    }
}

/// One `(state, action)` pair of a trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Step {
    pub state: usize,
    pub action: usize,
}

/// A (partial) trajectory starting at `start_layer`; step `i` is in layer
/// `start_layer + i`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Trajectory {
    pub start_layer: usize,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> + '_ {
        self.steps
            .iter()
            .enumerate()
            .map(move |(i, s)| StateId::new(self.start_layer + i, s.state))
    }

    pub fn first_state(&self) -> Option<StateId> {
        self.states().next()
    }
}

/// States and actions from layer 0 up to (and including the arrival at) some layer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathPrefix {
    /// `states[t]` is the state index occupied at layer `t`.
    pub states: Vec<usize>,
    /// `actions[t]` was taken at layer `t`; one fewer than `states`.
    pub actions: Vec<usize>,
}

impl PathPrefix {
    /// The last layer reached.
    pub fn end_layer(&self) -> usize {
        self.states.len() - 1
    }

    pub fn end_state(&self) -> StateId {
        StateId::new(self.end_layer(), *self.states.last().expect("prefix has a start state"))
    }
}

/// A deterministic non-stationary policy: one action per state of every layer.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NonstationaryPolicy {
    actions: Vec<Vec<usize>>,
}

impl NonstationaryPolicy {
    pub fn from_actions(actions: Vec<Vec<usize>>) -> Self {
        Self { actions }
    }

    pub fn constant(layer_sizes: &[usize], action: usize) -> Self {
        Self {
            actions: layer_sizes.iter().map(|&n| vec![action; n]).collect(),
        }
    }

    pub fn uniform_random<R: Rng + ?Sized>(layer_sizes: &[usize], action_count: usize, rng: &mut R) -> Self {
        Self {
            actions: layer_sizes
                .iter()
                .map(|&n| (0..n).map(|_| rng.random_range(0..action_count)).collect())
                .collect(),
        }
    }

    pub fn action(&self, state: StateId) -> usize {
        self.actions[state.layer][state.index]
    }

    pub fn set_action(&mut self, state: StateId, action: usize) {
        self.actions[state.layer][state.index] = action;
    }

    pub fn layer(&self, layer: usize) -> &[usize] {
        &self.actions[layer]
    }

    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn actions(&self) -> &[Vec<usize>] {
        &self.actions
    }

    /// Total over the given shape with all actions in range.
    pub fn is_valid_for(&self, mdp: &LayeredMdp) -> bool {
        self.actions.len() == mdp.horizon()
            && self
                .actions
                .iter()
                .zip(mdp.layer_sizes())
                .all(|(row, &n)| row.len() == n && row.iter().all(|&a| a < mdp.action_count()))
    }

    /// Hex SHA-256 over the action table.
    pub fn digest(&self) -> String {
        hex::encode(self.digest_bytes())
    }

    /// First eight bytes of [`Self::digest`] as an integer.
    pub fn short_digest(&self) -> u64 {
        let bytes = self.digest_bytes();
        u64::from_be_bytes(bytes[..8].try_into().expect("sha256 has 32 bytes"))
    }

    fn digest_bytes(&self) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for row in &self.actions {
            hasher.update((row.len() as u64).to_le_bytes());
            for &a in row {
                hasher.update((a as u64).to_le_bytes());
            }
        }
        hasher.finalize().into()
    }
}

/// `action` at every state of `layer`, `policy` elsewhere.
pub fn splice(action: usize, policy: &NonstationaryPolicy, layer: usize) -> NonstationaryPolicy {
    let mut out = policy.clone();
    out.actions[layer].iter_mut().for_each(|a| *a = action);
    out
}

/// Samples a trajectory from `start` under `policy` until the episode ends.
pub fn rollout<R: Rng + ?Sized>(
    mdp: &LayeredMdp,
    policy: &NonstationaryPolicy,
    start: StateId,
    rng: &mut R,
) -> Trajectory {
    let mut steps = Vec::with_capacity(mdp.horizon() - start.layer);
    let mut current = Some(start);
    while let Some(state) = current {
        let action = policy.action(state);
        steps.push(Step { state: state.index, action });
        current = mdp.sample_next(state, action, rng);
    }
    Trajectory {
        start_layer: start.layer,
        steps,
    }
}

/// Exact `v^π_h(s)` for every state; `values[h][s]`.
pub fn policy_values(mdp: &LayeredMdp, policy: &NonstationaryPolicy) -> Vec<Vec<f64>> {
    let horizon = mdp.horizon();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); horizon];
    for h in (0..horizon).rev() {
        values[h] = (0..mdp.layer_sizes[h])
            .map(|s| {
                let state = StateId::new(h, s);
                let a = policy.action(state);
                mdp.reward(state, a) + continuation(mdp, &values, state, a)
            })
            .collect();
    }
    values
}

fn continuation(mdp: &LayeredMdp, values: &[Vec<f64>], state: StateId, action: usize) -> f64 {
    let row = mdp.transition(state, action);
    if row.is_empty() {
        return 0.0;
    }
    row.iter().zip(&values[state.layer + 1]).map(|(p, v)| p * v).sum()
}

/// Exact expected return of `policy` from `state`.
pub fn policy_value(mdp: &LayeredMdp, policy: &NonstationaryPolicy, state: StateId) -> f64 {
    policy_values(mdp, policy)[state.layer][state.index]
}

/// Backward-induction optimal policy and `v*(s0)`. Ties go to the lowest action.
pub fn optimal_policy(mdp: &LayeredMdp) -> (NonstationaryPolicy, f64) {
    let (policy, values) = optimal_values(mdp);
    let start = mdp.start_state();
    (policy, values[0][start.index])
}

/// Optimal policy together with `v*_h(s)` for every state.
pub fn optimal_values(mdp: &LayeredMdp) -> (NonstationaryPolicy, Vec<Vec<f64>>) {
    let horizon = mdp.horizon();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); horizon];
    let mut actions: Vec<Vec<usize>> = vec![Vec::new(); horizon];
    for h in (0..horizon).rev() {
        let mut layer_values = Vec::with_capacity(mdp.layer_sizes[h]);
        let mut layer_actions = Vec::with_capacity(mdp.layer_sizes[h]);
        for s in 0..mdp.layer_sizes[h] {
            let state = StateId::new(h, s);
            let mut best = (0, f64::NEG_INFINITY);
            for a in 0..mdp.action_count {
                let q = mdp.reward(state, a) + continuation(mdp, &values, state, a);
                if q > best.1 {
                    best = (a, q);
                }
            }
            layer_actions.push(best.0);
            layer_values.push(best.1);
        }
        values[h] = layer_values;
        actions[h] = layer_actions;
    }
    (NonstationaryPolicy::from_actions(actions), values)
}

/// Maximum probability, over all policies, of occupying `target`.
pub fn max_reach(mdp: &LayeredMdp, target: StateId) -> Result<f64, MdpError> {
    if !mdp.contains(target) {
        return Err(MdpError::UnknownState(target));
    }
    let mut reach: Vec<f64> = (0..mdp.layer_sizes[target.layer])
        .map(|s| if s == target.index { 1.0 } else { 0.0 })
        .collect();
    for h in (0..target.layer).rev() {
        reach = (0..mdp.layer_sizes[h])
            .map(|s| {
                let state = StateId::new(h, s);
                (0..mdp.action_count)
                    .map(|a| {
                        mdp.transition(state, a)
                            .iter()
                            .zip(&reach)
                            .map(|(p, g)| p * g)
                            .sum::<f64>()
                    })
                    .fold(0.0, f64::max)
            })
            .collect();
    }
    Ok(reach[mdp.start_state])
}

/// State-occupancy distribution of `policy` per layer, starting from `s0`.
pub fn occupancy(mdp: &LayeredMdp, policy: &NonstationaryPolicy) -> Vec<Vec<f64>> {
    let horizon = mdp.horizon();
    let mut dist = Vec::with_capacity(horizon);
    let mut current = vec![0.0; mdp.layer_sizes[0]];
    current[mdp.start_state] = 1.0;
    for h in 0..horizon {
        let mut next = vec![0.0; mdp.layer_sizes.get(h + 1).copied().unwrap_or(0)];
        for (s, &mass) in current.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            let state = StateId::new(h, s);
            for (j, p) in mdp.transition(state, policy.action(state)).iter().enumerate() {
                next[j] += mass * p;
            }
        }
        dist.push(std::mem::replace(&mut current, next));
    }
    dist
}

/// Diagonal GridWorld: start at the top-left cell, move right or down until
/// the bottom-right corner. Layer `h` holds the cells with `x + y = h`; the
/// terminal corner itself is the sink. Action 0 = right, 1 = down; an action
/// that would leave the grid is replaced by the only legal one.
pub fn make_gridworld(grid_size: usize, n_blocks: usize, block_reward: f64, seed: u64) -> Result<LayeredMdp, MdpError> {
    if grid_size < 2 {
        return Err(MdpError::InvalidParameter("grid_size must be at least 2".into()));
    }
    if !block_reward.is_finite() {
        return Err(MdpError::InvalidParameter("block_reward must be finite".into()));
    }
    let n = grid_size;
    let eligible: Vec<(usize, usize)> = (0..n)
        .flat_map(|y| (0..n).map(move |x| (x, y)))
        .filter(|&c| c != (0, 0) && c != (n - 1, n - 1))
        .collect();
    if n_blocks > eligible.len() {
        return Err(MdpError::InvalidParameter(format!(
            "{n_blocks} blocks do not fit in {} eligible cells",
            eligible.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let blocks = place_blocks(n, n_blocks, &eligible, &mut rng)?;

    let horizon = 2 * (n - 1);
    let layer_sizes: Vec<usize> = (0..horizon).map(|h| diagonal(n, h).len()).collect();
    let mut transitions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    for h in 0..horizon {
        let cells = diagonal(n, h);
        let next_cells = if h + 1 < horizon { diagonal(n, h + 1) } else { Vec::new() };
        let mut layer_t = Vec::with_capacity(cells.len());
        let mut layer_r = Vec::with_capacity(cells.len());
        for &(x, y) in &cells {
            let r = if blocks.contains(&(x, y)) { block_reward } else { 0.0 };
            let right_legal = x + 1 < n;
            let down_legal = y + 1 < n;
            let mut rows = Vec::with_capacity(2);
            for action in 0..2 {
                let moves_right = match action {
                    0 => right_legal,
                    _ => !down_legal,
                };
                let dest = if moves_right { (x + 1, y) } else { (x, y + 1) };
                let mut row = vec![0.0; next_cells.len()];
                if let Some(j) = next_cells.iter().position(|&c| c == dest) {
                    row[j] = 1.0;
                }
                rows.push(row);
            }
            layer_t.push(rows);
            layer_r.push(vec![r; 2]);
        }
        transitions.push(layer_t);
        rewards.push(layer_r);
    }
    let provenance = Provenance {
        generator: "gridworld".into(),
        seed: Some(seed),
        params: serde_json::json!({
            "grid_size": grid_size,
            "n_blocks": n_blocks,
            "block_reward": block_reward,
        }),
        grid: Some(GridLayout {
            size: n,
            blocks: blocks.clone(),
            block_reward,
        }),
    };
    LayeredMdp::new(2, layer_sizes, transitions, rewards, 0, provenance)
}

/// Cells with `x + y = h`, ordered by increasing `x`.
fn diagonal(n: usize, h: usize) -> Vec<(usize, usize)> {
    let lo = h.saturating_sub(n - 1);
    let hi = h.min(n - 1);
    (lo..=hi).map(|x| (x, h - x)).collect()
}

/// Rejection-samples block cells until the best monotone path collects
/// exactly `n_blocks - 1` of them (for two or more blocks).
fn place_blocks<R: Rng + ?Sized>(
    n: usize,
    n_blocks: usize,
    eligible: &[(usize, usize)],
    rng: &mut R,
) -> Result<Vec<(usize, usize)>, MdpError> {
    for _ in 0..PLACEMENT_RETRY_CAP {
        let picks = rand::seq::index::sample(rng, eligible.len(), n_blocks);
        let mut blocks: Vec<(usize, usize)> = picks.iter().map(|i| eligible[i]).collect();
        blocks.sort_by_key(|&(x, y)| (y, x));
        if n_blocks < 2 || max_blocks_on_path(n, &blocks) == n_blocks - 1 {
            return Ok(blocks);
        }
    }
    Err(MdpError::InfeasiblePlacement {
        size: n,
        blocks: n_blocks,
        attempts: PLACEMENT_RETRY_CAP,
    })
}

fn max_blocks_on_path(n: usize, blocks: &[(usize, usize)]) -> usize {
    let mut best = vec![vec![0usize; n]; n];
    for y in 0..n {
        for x in 0..n {
            let here = usize::from(blocks.contains(&(x, y)));
            let from_left = if x > 0 { best[y][x - 1] } else { 0 };
            let from_up = if y > 0 { best[y - 1][x] } else { 0 };
            best[y][x] = here + from_left.max(from_up);
        }
    }
    best[n - 1][n - 1]
}

/// Parameters of [`make_random_mdp`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomMdpParams {
    pub n_layers: usize,
    pub states_per_layer: usize,
    pub n_actions: usize,
    pub dirichlet_param: f64,
    pub exp_scale: f64,
    #[serde(default)]
    pub normalization: RewardNormalization,
}

impl Default for RandomMdpParams {
    fn default() -> Self {
        Self {
            n_layers: 5,
            states_per_layer: 4,
            n_actions: 4,
            dirichlet_param: 0.1,
            exp_scale: 5.0,
            normalization: RewardNormalization::MinZeroMeanOne,
        }
    }
}

/// Random layered MDP: Dirichlet transition rows, exponential rewards
/// normalised per [`RewardNormalization`]. The start state is state 0 of layer 0.
pub fn make_random_mdp(params: &RandomMdpParams, seed: u64) -> Result<LayeredMdp, MdpError> {
    let RandomMdpParams {
        n_layers,
        states_per_layer,
        n_actions,
        dirichlet_param,
        exp_scale,
        normalization,
    } = *params;
    if n_layers == 0 || states_per_layer == 0 || n_actions == 0 {
        return Err(MdpError::InvalidParameter("layer, state and action counts must be positive".into()));
    }
    if !(dirichlet_param.is_finite() && dirichlet_param > 0.0 && exp_scale.is_finite() && exp_scale > 0.0) {
        return Err(MdpError::InvalidParameter("dirichlet_param and exp_scale must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gamma = Gamma::new(dirichlet_param, 1.0).map_err(|e| MdpError::InvalidParameter(e.to_string()))?;
    let exp = Exp::new(1.0 / exp_scale).map_err(|e| MdpError::InvalidParameter(e.to_string()))?;

    let mut transitions = Vec::with_capacity(n_layers);
    let mut raw_rewards = Vec::with_capacity(n_layers);
    for h in 0..n_layers {
        let next = if h + 1 < n_layers { states_per_layer } else { 0 };
        let mut layer_t = Vec::with_capacity(states_per_layer);
        let mut layer_r = Vec::with_capacity(states_per_layer);
        for _ in 0..states_per_layer {
            let mut rows = Vec::with_capacity(n_actions);
            let mut rs = Vec::with_capacity(n_actions);
            for _ in 0..n_actions {
                rows.push(if next == 0 { Vec::new() } else { dirichlet_row(&gamma, next, &mut rng) });
                rs.push(exp.sample(&mut rng));
            }
            layer_t.push(rows);
            layer_r.push(rs);
        }
        transitions.push(layer_t);
        raw_rewards.push(layer_r);
    }

    let flat: Vec<f64> = raw_rewards.iter().flatten().flatten().copied().collect();
    let min = flat.iter().cloned().fold(f64::INFINITY, f64::min);
    let scale = match normalization {
        RewardNormalization::MinZeroMeanOne => flat.iter().map(|r| r - min).sum::<f64>() / flat.len() as f64,
        RewardNormalization::MinZeroMaxOne => flat.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - min,
    };
    let rewards = raw_rewards
        .into_iter()
        .map(|layer| {
            layer
                .into_iter()
                .map(|rs| {
                    rs.into_iter()
                        .map(|r| if scale > 0.0 { (r - min) / scale } else { 0.0 })
                        .collect()
                })
                .collect()
        })
        .collect();

    let provenance = Provenance {
        generator: "random_mdp".into(),
        seed: Some(seed),
        params: serde_json::to_value(params).expect("params serialize"),
        grid: None,
    };
    LayeredMdp::new(
        n_actions,
        vec![states_per_layer; n_layers],
        transitions,
        rewards,
        0,
        provenance,
    )
}

fn dirichlet_row<R: Rng + ?Sized>(gamma: &Gamma<f64>, len: usize, rng: &mut R) -> Vec<f64> {
    let mut row: Vec<f64> = (0..len).map(|_| gamma.sample(rng)).collect();
    let total: f64 = row.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        // every coordinate underflowed: the small-concentration limit is a vertex
        let j = rng.random_range(0..len);
        row.iter_mut().enumerate().for_each(|(i, p)| *p = if i == j { 1.0 } else { 0.0 });
        return row;
    }
    row.iter_mut().for_each(|p| *p /= total);
    row
}

/// The six-state, three-action, two-step MDP whose deterministic trajectory
/// preferences form a cycle over the three start actions.
///
/// Layer 1 states are `s1..s5` at indices `0..5`.
pub fn make_counterexample() -> LayeredMdp {
    let to = |probs: [f64; 5]| probs.to_vec();
    let transitions = vec![
        vec![vec![
            to([0.2, 0.8, 0.0, 0.0, 0.0]),
            to([0.0, 0.0, 1.0, 0.0, 0.0]),
            to([0.0, 0.0, 0.0, 0.6, 0.4]),
        ]],
        vec![vec![Vec::new(); 3]; 5],
    ];
    let layer1 = [1.0, 0.01, 0.02, 0.5, 0.0];
    let rewards = vec![vec![vec![0.0; 3]], layer1.iter().map(|&r| vec![r; 3]).collect()];
    let provenance = Provenance {
        generator: "counterexample".into(),
        seed: None,
        params: serde_json::Value::Null,
        grid: None,
    };
    LayeredMdp::new(3, vec![1, 5], transitions, rewards, 0, provenance).expect("counterexample is well formed")
}

/// Shape of a small random MDP used for exhaustive checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TinyShape {
    pub layers: usize,
    pub states_per_layer: usize,
    pub actions: usize,
    /// One-hot transition rows.
    pub deterministic: bool,
}

/// Small random MDP with uniform `[0, 1]` rewards and uniform random
/// transition rows (or one-hot rows when `deterministic`).
pub fn make_tiny_mdp(shape: TinyShape, seed: u64) -> Result<LayeredMdp, MdpError> {
    let TinyShape {
        layers,
        states_per_layer,
        actions,
        deterministic,
    } = shape;
    if layers == 0 || states_per_layer == 0 || actions == 0 {
        return Err(MdpError::InvalidParameter("tiny MDP dimensions must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transitions = Vec::with_capacity(layers);
    let mut rewards = Vec::with_capacity(layers);
    for h in 0..layers {
        let next = if h + 1 < layers { states_per_layer } else { 0 };
        let mut lt = Vec::new();
        let mut lr = Vec::new();
        for _ in 0..states_per_layer {
            let mut rows = Vec::new();
            let mut rs = Vec::new();
            for _ in 0..actions {
                let row = if next == 0 {
                    Vec::new()
                } else if deterministic {
                    let j = rng.random_range(0..next);
                    (0..next).map(|i| if i == j { 1.0 } else { 0.0 }).collect()
                } else {
                    let raw: Vec<f64> = (0..next).map(|_| rng.random::<f64>() + 1e-3).collect();
                    let total: f64 = raw.iter().sum();
                    raw.iter().map(|p| p / total).collect()
                };
                rows.push(row);
                rs.push(rng.random::<f64>());
            }
            lt.push(rows);
            lr.push(rs);
        }
        transitions.push(lt);
        rewards.push(lr);
    }
    let provenance = Provenance {
        generator: "tiny".into(),
        seed: Some(seed),
        params: serde_json::to_value(shape).expect("shape serializes"),
        grid: None,
    };
    LayeredMdp::new(actions, vec![states_per_layer; layers], transitions, rewards, 0, provenance)
}
