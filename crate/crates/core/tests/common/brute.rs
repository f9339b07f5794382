//! Exhaustive-enumeration reference implementations. They only use the raw
//! transition and reward tables, never the crate's dynamic programming.

#![allow(dead_code)]

use pbrl_core::mdp::{LayeredMdp, NonstationaryPolicy, StateId, TinyShape};

/// Every positive-probability state path from `start` under `policy`, as
/// (visited states, probability).
pub fn paths(mdp: &LayeredMdp, policy: &NonstationaryPolicy, start: StateId) -> Vec<(Vec<StateId>, f64)> {
    fn go(mdp: &LayeredMdp, policy: &NonstationaryPolicy, prefix: &mut Vec<StateId>, prob: f64, out: &mut Vec<(Vec<StateId>, f64)>) {
        let here = *prefix.last().unwrap();
        let row = mdp.transition(here, policy.action(here));
        if row.is_empty() {
            out.push((prefix.clone(), prob));
            return;
        }
        for (j, &p) in row.iter().enumerate() {
            if p > 0.0 {
                prefix.push(StateId::new(here.layer + 1, j));
                go(mdp, policy, prefix, prob * p, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(mdp, policy, &mut vec![start], 1.0, &mut out);
    out
}

pub fn path_reward(mdp: &LayeredMdp, policy: &NonstationaryPolicy, path: &[StateId]) -> f64 {
    path.iter().map(|&s| mdp.reward(s, policy.action(s))).sum()
}

pub fn value(mdp: &LayeredMdp, policy: &NonstationaryPolicy, start: StateId) -> f64 {
    paths(mdp, policy, start)
        .iter()
        .map(|(p, prob)| prob * path_reward(mdp, policy, p))
        .sum()
}

pub fn reach(mdp: &LayeredMdp, policy: &NonstationaryPolicy, target: StateId) -> f64 {
    paths(mdp, policy, mdp.start_state())
        .iter()
        .filter(|(p, _)| p.get(target.layer) == Some(&target))
        .map(|(_, prob)| prob)
        .sum()
}

/// All deterministic non-stationary policies of `mdp`.
pub fn all_policies(mdp: &LayeredMdp) -> Vec<NonstationaryPolicy> {
    let sizes = mdp.layer_sizes().to_vec();
    let total_states: usize = sizes.iter().sum();
    let a = mdp.action_count();
    let count = a.pow(total_states as u32);
    (0..count)
        .map(|mut code| {
            let actions = sizes
                .iter()
                .map(|&n| {
                    (0..n)
                        .map(|_| {
                            let x = code % a;
                            code /= a;
                            x
                        })
                        .collect()
                })
                .collect();
            NonstationaryPolicy::from_actions(actions)
        })
        .collect()
}

pub fn best_value(mdp: &LayeredMdp) -> f64 {
    all_policies(mdp)
        .iter()
        .map(|p| value(mdp, p, mdp.start_state()))
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn best_reach(mdp: &LayeredMdp, target: StateId) -> f64 {
    all_policies(mdp)
        .iter()
        .map(|p| reach(mdp, p, target))
        .fold(0.0, f64::max)
}

/// Distribution of the layer-`h` state under `policy`, by enumeration.
pub fn layer_distribution(mdp: &LayeredMdp, policy: &NonstationaryPolicy, h: usize) -> Vec<f64> {
    let mut d = vec![0.0; mdp.layer_sizes()[h]];
    for (p, prob) in paths(mdp, policy, mdp.start_state()) {
        d[p[h].index] += prob;
    }
    d
}

/// Shape number `i` of a battery cycling through small sizes.
pub fn tiny_shape(i: u64, max_actions: usize, deterministic: bool) -> TinyShape {
    let layers = 1 + (i % 3) as usize;
    let states_per_layer = 1 + ((i / 3) % 3) as usize;
    let actions = 1 + ((i / 9) as usize % max_actions);
    TinyShape {
        layers,
        states_per_layer,
        actions,
        deterministic,
    }
}
