//! Preference models over (partial) trajectories.
//!
//! Simulated models score trajectories with the hidden reward of the
//! ground-truth MDP and map the reward gap through a link function. The
//! [`PreferenceModel::Human`] variant forwards each comparison to an attached
//! [`HumanOracle`] instead.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::mdp::{LayeredMdp, NonstationaryPolicy, Step, StateId, Trajectory};

/// Outcome of one comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Winner {
    First,
    Second,
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum HumanError {
    #[error("labeling session closed after {answered} answers")]
    SessionClosed { answered: u64 },
    #[error("labeling transport failed: {0}")]
    Transport(String),
}

/// A live labeler. Implementations block until the comparison is answered.
pub trait HumanOracle: Send + Sync {
    fn ask(&self, left: &Trajectory, right: &Trajectory) -> Result<Winner, HumanError>;
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum PreferenceError {
    #[error("trajectories start at different layers ({0} vs {1})")]
    MismatchedStartLayers(usize, usize),
    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),
    #[error("linear link slope {slope} times max reward gap {gap} exceeds 1/2")]
    SlopeTooLarge { slope: f64, gap: f64 },
    #[error("the human model has no closed-form preference probability")]
    NoExactProbability,
    #[error("the human model has no attached labeling session")]
    NoHumanAttached,
    #[error(transparent)]
    Human(#[from] HumanError),
    #[error("enumeration limit exceeded: {0}")]
    EnumerationLimit(String),
}

#[derive(Clone)]
pub enum PreferenceModel {
    /// `Pr[τ1 ≻ τ2] = 1 / (1 + exp(-(r(τ1) - r(τ2)) / c))`.
    Btl { c: f64 },
    /// `Pr[τ1 ≻ τ2] = 1/2 + slope · (r(τ1) - r(τ2))`.
    LinearLink { slope: f64 },
    /// The higher reward always wins; ties are a fair coin.
    Deterministic,
    Human(Arc<dyn HumanOracle>),
}

impl fmt::Debug for PreferenceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Btl { c } => write!(f, "Btl {{ c: {c} }}"),
            Self::LinearLink { slope } => write!(f, "LinearLink {{ slope: {slope} }}"),
            Self::Deterministic => write!(f, "Deterministic"),
            Self::Human(_) => write!(f, "Human"),
        }
    }
}

impl PreferenceModel {
    pub fn label(&self) -> &'static str {
        match self {
            Self::Btl { .. } => "btl",
            Self::LinearLink { .. } => "linear",
            Self::Deterministic => "deterministic",
            Self::Human(_) => "human",
        }
    }

    /// `c` for BTL, the slope for the linear link.
    pub fn parameter(&self) -> Option<f64> {
        match self {
            Self::Btl { c } => Some(*c),
            Self::LinearLink { slope } => Some(*slope),
            _ => None,
        }
    }

    /// Checks parameters, and for the linear link that probabilities stay
    /// inside `[0, 1]` on every pair of trajectories of `mdp`.
    pub fn validate(&self, mdp: &LayeredMdp) -> Result<(), PreferenceError> {
        match *self {
            Self::Btl { c } if !(c > 0.0 && c.is_finite()) => {
                Err(PreferenceError::InvalidParameter(format!("BTL temperature must be positive, got {c}")))
            }
            Self::LinearLink { slope } => {
                if !(slope > 0.0 && slope.is_finite()) {
                    return Err(PreferenceError::InvalidParameter(format!(
                        "linear slope must be positive, got {slope}"
                    )));
                }
                let gap = mdp.max_reward_gap();
                if slope * gap > 0.5 {
                    return Err(PreferenceError::SlopeTooLarge { slope, gap });
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Win probability of the first trajectory for a reward gap
    /// `r(τ1) - r(τ2)`. Computed on `|gap|` and mirrored, so
    /// `link(g) + link(-g) == 1` exactly.
    pub fn link(&self, gap: f64) -> Result<f64, PreferenceError> {
        let magnitude = gap.abs();
        let upper = match *self {
            Self::Btl { c } => 1.0 / (1.0 + (-magnitude / c).exp()),
            Self::LinearLink { slope } => 0.5 + slope * magnitude,
            Self::Deterministic => {
                if magnitude > 0.0 {
                    1.0
                } else {
                    0.5
                }
            }
            Self::Human(_) => return Err(PreferenceError::NoExactProbability),
        };
        if upper > 1.0 {
            return Err(PreferenceError::SlopeTooLarge {
                slope: self.parameter().unwrap_or(f64::NAN),
                gap: magnitude,
            });
        }
        Ok(if gap >= 0.0 { upper } else { 1.0 - upper })
    }
}

/// Configuration form of a preference model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum PreferenceSpec {
    Btl { c: f64 },
    Linear { slope: f64 },
    Deterministic,
    Human,
}

impl PreferenceSpec {
    pub fn build(&self, human: Option<Arc<dyn HumanOracle>>) -> Result<PreferenceModel, PreferenceError> {
        Ok(match *self {
            Self::Btl { c } => PreferenceModel::Btl { c },
            Self::Linear { slope } => PreferenceModel::LinearLink { slope },
            Self::Deterministic => PreferenceModel::Deterministic,
            Self::Human => PreferenceModel::Human(human.ok_or(PreferenceError::NoHumanAttached)?),
        })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Btl { .. } => "btl",
            Self::Linear { .. } => "linear",
            Self::Deterministic => "deterministic",
            Self::Human => "human",
        }
    }

    pub fn parameter(&self) -> Option<f64> {
        match *self {
            Self::Btl { c } => Some(c),
            Self::Linear { slope } => Some(slope),
            _ => None,
        }
    }
}

/// Exact probability that `first` is preferred to `second`.
pub fn pref_prob(
    model: &PreferenceModel,
    mdp: &LayeredMdp,
    first: &Trajectory,
    second: &Trajectory,
) -> Result<f64, PreferenceError> {
    if first.start_layer != second.start_layer {
        return Err(PreferenceError::MismatchedStartLayers(first.start_layer, second.start_layer));
    }
    model.link(mdp.trajectory_reward(first) - mdp.trajectory_reward(second))
}

/// One sampled comparison. Consumes exactly one uniform draw from `rng` for
/// simulated models and none for the human model.
pub fn sample_comparison<R: Rng + ?Sized>(
    model: &PreferenceModel,
    mdp: &LayeredMdp,
    first: &Trajectory,
    second: &Trajectory,
    rng: &mut R,
) -> Result<Winner, PreferenceError> {
    if let PreferenceModel::Human(labeler) = model {
        if first.start_layer != second.start_layer {
            return Err(PreferenceError::MismatchedStartLayers(first.start_layer, second.start_layer));
        }
        return Ok(labeler.ask(first, second)?);
    }
    let p = pref_prob(model, mdp, first, second)?;
    let u: f64 = rng.random();
    Ok(if u < p { Winner::First } else { Winner::Second })
}

/// Learner-facing comparison oracle: holds the ground truth privately and
/// counts every comparison it answers.
pub struct Oracle<'a> {
    model: PreferenceModel,
    mdp: &'a LayeredMdp,
    rng: ChaCha8Rng,
    comparisons: u64,
}

impl<'a> Oracle<'a> {
    /// `seed` drives the comparison noise only, independent of any learner randomness.
    pub fn new(model: PreferenceModel, mdp: &'a LayeredMdp, seed: u64) -> Result<Self, PreferenceError> {
        model.validate(mdp)?;
        Ok(Self {
            model,
            mdp,
            rng: ChaCha8Rng::seed_from_u64(seed),
            comparisons: 0,
        })
    }

    pub fn compare(&mut self, first: &Trajectory, second: &Trajectory) -> Result<Winner, PreferenceError> {
        let w = sample_comparison(&self.model, self.mdp, first, second, &mut self.rng)?;
        self.comparisons += 1;
        Ok(w)
    }

    /// Comparisons answered so far (SC_p).
    pub fn comparisons(&self) -> u64 {
        self.comparisons
    }

    pub fn model(&self) -> &PreferenceModel {
        &self.model
    }
}

/// `φ_s(π1, π2) = Pr[τ_h(π1, s) ≻ τ_h(π2, s)] - 1/2` at one state.
#[derive(Clone, Debug, PartialEq)]
pub struct PrefProbe {
    pub phi: f64,
    pub state: StateId,
    pub first: NonstationaryPolicy,
    pub second: NonstationaryPolicy,
}

/// Caps on the exhaustive enumerations below.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnumerationLimits {
    pub max_trajectory_pairs: usize,
    pub max_policies_per_state: usize,
}

impl Default for EnumerationLimits {
    fn default() -> Self {
        Self {
            max_trajectory_pairs: 1_000_000,
            max_policies_per_state: 100_000,
        }
    }
}

/// Every positive-probability trajectory of `policy` from `start`, with its probability.
pub fn trajectory_distribution(
    mdp: &LayeredMdp,
    policy: &NonstationaryPolicy,
    start: StateId,
    max_trajectories: usize,
) -> Result<Vec<(Trajectory, f64)>, PreferenceError> {
    let mut out = Vec::new();
    let mut stack = vec![(start, Vec::<Step>::new(), 1.0)];
    while let Some((state, mut steps, prob)) = stack.pop() {
        let action = policy.action(state);
        steps.push(Step { state: state.index, action });
        let row = mdp.transition(state, action);
        if row.is_empty() {
            if out.len() == max_trajectories {
                return Err(PreferenceError::EnumerationLimit(format!(
                    "more than {max_trajectories} trajectories from {start}"
                )));
            }
            out.push((
                Trajectory {
                    start_layer: start.layer,
                    steps,
                },
                prob,
            ));
            continue;
        }
        for (j, &p) in row.iter().enumerate().rev() {
            if p > 0.0 {
                stack.push((StateId::new(state.layer + 1, j), steps.clone(), prob * p));
            }
        }
    }
    Ok(out)
}

/// Exact policy preference at `state` by enumerating independent trajectory pairs.
pub fn policy_pref_exact(
    model: &PreferenceModel,
    mdp: &LayeredMdp,
    state: StateId,
    first: &NonstationaryPolicy,
    second: &NonstationaryPolicy,
    limits: EnumerationLimits,
) -> Result<PrefProbe, PreferenceError> {
    let cap = limits.max_trajectory_pairs;
    let d1 = trajectory_distribution(mdp, first, state, cap)?;
    let d2 = trajectory_distribution(mdp, second, state, cap)?;
    if d1.len().saturating_mul(d2.len()) > cap {
        return Err(PreferenceError::EnumerationLimit(format!(
            "{} x {} trajectory pairs exceed {cap}",
            d1.len(),
            d2.len()
        )));
    }
    let mut win = 0.0;
    for (t1, p1) in &d1 {
        for (t2, p2) in &d2 {
            win += p1 * p2 * pref_prob(model, mdp, t1, t2)?;
        }
    }
    Ok(PrefProbe {
        phi: (win - 0.5).clamp(-0.5, 0.5),
        state,
        first: first.clone(),
        second: second.clone(),
    })
}

/// Two policies at a state where the better one is not preferred.
#[derive(Clone, Debug, PartialEq)]
pub struct PairWitness {
    pub state: StateId,
    pub better: NonstationaryPolicy,
    pub worse: NonstationaryPolicy,
    pub value_gap: f64,
    pub phi: f64,
}

/// Three policies at a state, with `phis = [φ(p0,p1), φ(p1,p2), φ(p0,p2)]`
/// for SST/STI witnesses and `[φ(p0,p1), φ(p1,p2), φ(p2,p0)]` for cycles.
#[derive(Clone, Debug, PartialEq)]
pub struct TripleWitness {
    pub state: StateId,
    pub policies: [NonstationaryPolicy; 3],
    pub phis: [f64; 3],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PropertyReport {
    /// Largest `C0` with `φ_s ≥ C0 · Δv` over all checked pairs with `Δv > 0`;
    /// `None` when no such pair exists.
    pub gap_ratio_c0: Option<f64>,
    pub gap_ratio_violations: usize,
    pub gap_ratio_witnesses: Vec<PairWitness>,
    pub sst_violations: usize,
    pub sst_witnesses: Vec<TripleWitness>,
    pub sti_violations: usize,
    pub sti_witnesses: Vec<TripleWitness>,
    /// Preference cycles `φ(p0,p1), φ(p1,p2), φ(p2,p0) < 0`.
    pub cycles: Vec<TripleWitness>,
    pub states_checked: usize,
    pub policy_classes: usize,
}

impl PropertyReport {
    pub fn passes(&self) -> bool {
        self.gap_ratio_violations == 0 && self.sst_violations == 0 && self.sti_violations == 0
    }
}

const VALUE_TOL: f64 = 1e-9;
const PHI_TOL: f64 = 1e-12;
const MAX_WITNESSES: usize = 16;

struct PolicyClass {
    policy: NonstationaryPolicy,
    /// (trajectory reward, probability), merged by identical reward
    returns: Vec<(f64, f64)>,
    value: f64,
}

/// Enumerates every state and every deterministic policy over the states
/// reachable from it, and checks the value-gap lower bound (a positive
/// `C0`), SST and STI on the induced policy preferences. Policies with identical return distributions are
/// merged, since every simulated link depends on rewards only.
pub fn check_properties(
    model: &PreferenceModel,
    mdp: &LayeredMdp,
    limits: EnumerationLimits,
) -> Result<PropertyReport, PreferenceError> {
    if matches!(model, PreferenceModel::Human(_)) {
        return Err(PreferenceError::NoExactProbability);
    }
    let mut report = PropertyReport::default();
    let mut c0 = f64::INFINITY;
    for state in mdp.states() {
        let classes = policy_classes(mdp, state, limits)?;
        report.states_checked += 1;
        report.policy_classes += classes.len();
        let n = classes.len();
        let mut phi = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let mut win = 0.0;
                for &(r1, p1) in &classes[i].returns {
                    for &(r2, p2) in &classes[j].returns {
                        win += p1 * p2 * model.link(r1 - r2)?;
                    }
                }
                let p = (win - 0.5).clamp(-0.5, 0.5);
                phi[i][j] = p;
                phi[j][i] = -p;
            }
        }

        for i in 0..n {
            for j in 0..n {
                let gap = classes[i].value - classes[j].value;
                if gap <= VALUE_TOL {
                    continue;
                }
                let p = phi[i][j];
                if p <= 0.0 {
                    report.gap_ratio_violations += 1;
                    if report.gap_ratio_witnesses.len() < MAX_WITNESSES {
                        report.gap_ratio_witnesses.push(PairWitness {
                            state,
                            better: classes[i].policy.clone(),
                            worse: classes[j].policy.clone(),
                            value_gap: gap,
                            phi: p,
                        });
                    }
                }
                c0 = c0.min(p / gap);
            }
        }

        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| classes[b].value.total_cmp(&classes[a].value));
        for x in 0..n {
            let i = order[x];
            for y in (x + 1)..n {
                let j = order[y];
                if classes[i].value - classes[j].value <= VALUE_TOL {
                    continue;
                }
                for &k in &order[(y + 1)..] {
                    if classes[j].value - classes[k].value <= VALUE_TOL {
                        continue;
                    }
                    let (p12, p23, p13) = (phi[i][j], phi[j][k], phi[i][k]);
                    let witness = || TripleWitness {
                        state,
                        policies: [
                            classes[i].policy.clone(),
                            classes[j].policy.clone(),
                            classes[k].policy.clone(),
                        ],
                        phis: [p12, p23, p13],
                    };
                    if p13 < p12.max(p23) - PHI_TOL {
                        report.sst_violations += 1;
                        if report.sst_witnesses.len() < MAX_WITNESSES {
                            report.sst_witnesses.push(witness());
                        }
                    }
                    if p13 > p12 + p23 + PHI_TOL {
                        report.sti_violations += 1;
                        if report.sti_witnesses.len() < MAX_WITNESSES {
                            report.sti_witnesses.push(witness());
                        }
                    }
                }
            }
        }

        'cycles: for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    if report.cycles.len() >= MAX_WITNESSES {
                        break 'cycles;
                    }
                    // canonical rotation: i is the smallest index
                    if i < j && i < k && j != k && phi[i][j] < 0.0 && phi[j][k] < 0.0 && phi[k][i] < 0.0 {
                        report.cycles.push(TripleWitness {
                            state,
                            policies: [
                                classes[i].policy.clone(),
                                classes[j].policy.clone(),
                                classes[k].policy.clone(),
                            ],
                            phis: [phi[i][j], phi[j][k], phi[k][i]],
                        });
                    }
                }
            }
        }
    }
    report.gap_ratio_c0 = c0.is_finite().then_some(c0);
    Ok(report)
}

/// States reachable (under some action sequence) from `state`, including itself.
fn reachable_from(mdp: &LayeredMdp, state: StateId) -> Vec<StateId> {
    let mut out = vec![state];
    let mut frontier = vec![state.index];
    for h in state.layer..mdp.horizon() - 1 {
        let mut next = vec![false; mdp.layer_sizes()[h + 1]];
        for &s in &frontier {
            for a in 0..mdp.action_count() {
                for (j, &p) in mdp.transition(StateId::new(h, s), a).iter().enumerate() {
                    if p > 0.0 {
                        next[j] = true;
                    }
                }
            }
        }
        frontier = next.iter().enumerate().filter(|(_, &r)| r).map(|(j, _)| j).collect();
        out.extend(frontier.iter().map(|&j| StateId::new(h + 1, j)));
    }
    out
}

fn policy_classes(mdp: &LayeredMdp, state: StateId, limits: EnumerationLimits) -> Result<Vec<PolicyClass>, PreferenceError> {
    let reachable = reachable_from(mdp, state);
    let a = mdp.action_count();
    let total = (0..reachable.len()).try_fold(1usize, |acc, _| acc.checked_mul(a));
    let total = match total {
        Some(t) if t <= limits.max_policies_per_state => t,
        _ => {
            return Err(PreferenceError::EnumerationLimit(format!(
                "{a}^{} policies at {state} exceed {}",
                reachable.len(),
                limits.max_policies_per_state
            )))
        }
    };
    let mut classes: Vec<PolicyClass> = Vec::new();
    let mut seen: HashMap<Vec<(u64, u64)>, usize> = HashMap::new();
    let mut policy = NonstationaryPolicy::constant(mdp.layer_sizes(), 0);
    for code in 0..total {
        let mut rest = code;
        for &st in &reachable {
            policy.set_action(st, rest % a);
            rest /= a;
        }
        let dist = trajectory_distribution(mdp, &policy, state, limits.max_trajectory_pairs)?;
        let mut returns: Vec<(f64, f64)> = dist.iter().map(|(t, p)| (mdp.trajectory_reward(t), *p)).collect();
        returns.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(returns.len());
        for (r, p) in returns {
            match merged.last_mut() {
                Some(last) if last.0.to_bits() == r.to_bits() => last.1 += p,
                _ => merged.push((r, p)),
            }
        }
        let key: Vec<(u64, u64)> = merged.iter().map(|(r, p)| (r.to_bits(), p.to_bits())).collect();
        if seen.contains_key(&key) {
            continue;
        }
        seen.insert(key, classes.len());
        let value = merged.iter().map(|(r, p)| r * p).sum();
        classes.push(PolicyClass {
            policy: policy.clone(),
            returns: merged,
            value,
        });
    }
    Ok(classes)
}
