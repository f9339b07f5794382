//! Learner-facing environment handles.
//!
//! An [`Environment`] exposes episodic access from `s0` (reset / step /
//! current state) plus the public shape of the state space. It never exposes
//! rewards. A [`Simulator`] additionally allows resetting to any state.

use std::ops::{Deref, DerefMut};

use rand::Rng;

use crate::mdp::{LayeredMdp, NonstationaryPolicy, PathPrefix, Step, StateId, Trajectory};

pub struct Environment<'a> {
    mdp: &'a LayeredMdp,
    position: Option<StateId>,
    steps: u64,
}

impl<'a> Environment<'a> {
    pub fn new(mdp: &'a LayeredMdp) -> Self {
        Self {
            mdp,
            position: Some(mdp.start_state()),
            steps: 0,
        }
    }

    pub fn horizon(&self) -> usize {
        self.mdp.horizon()
    }

    pub fn action_count(&self) -> usize {
        self.mdp.action_count()
    }

    pub fn layer_sizes(&self) -> &[usize] {
        self.mdp.layer_sizes()
    }

    pub fn state_count(&self) -> usize {
        self.mdp.state_count()
    }

    pub fn start_state(&self) -> StateId {
        self.mdp.start_state()
    }

    /// Environment steps taken so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Starts a new episode at `s0`.
    pub fn reset(&mut self) -> StateId {
        let s0 = self.mdp.start_state();
        self.position = Some(s0);
        s0
    }

    /// Current state, or `None` once the episode has ended.
    pub fn state(&self) -> Option<StateId> {
        self.position
    }

    /// Takes one action from the current state. Returns the next state, or
    /// `None` when the episode ends. Stepping a finished episode is a no-op.
    pub fn step<R: Rng + ?Sized>(&mut self, action: usize, rng: &mut R) -> Option<StateId> {
        let state = self.position?;
        self.steps += 1;
        self.position = self.mdp.sample_next(state, action, rng);
        self.position
    }

    /// Resets and follows `policy` until `layer` is reached.
    pub fn navigate<R: Rng + ?Sized>(&mut self, policy: &NonstationaryPolicy, layer: usize, rng: &mut R) -> PathPrefix {
        let mut state = self.reset();
        let mut states = vec![state.index];
        let mut actions = Vec::with_capacity(layer);
        while state.layer < layer {
            let a = policy.action(state);
            actions.push(a);
            state = self.step(a, rng).expect("navigation target lies inside the horizon");
            states.push(state.index);
        }
        PathPrefix { states, actions }
    }

    /// Follows `policy` from the current state to the end of the episode.
    pub fn finish_episode<R: Rng + ?Sized>(&mut self, policy: &NonstationaryPolicy, rng: &mut R) -> Trajectory {
        let start_layer = self.position.map(|s| s.layer).unwrap_or(self.horizon());
        let mut steps = Vec::with_capacity(self.horizon() - start_layer);
        while let Some(state) = self.position {
            let a = policy.action(state);
            steps.push(Step { state: state.index, action: a });
            self.step(a, rng);
        }
        Trajectory { start_layer, steps }
    }
}

/// Generative access: an environment that can be reset to any state.
pub struct Simulator<'a> {
    env: Environment<'a>,
}

impl<'a> Simulator<'a> {
    pub fn new(mdp: &'a LayeredMdp) -> Self {
        Self { env: Environment::new(mdp) }
    }

    pub fn reset_to(&mut self, state: StateId) {
        assert!(self.env.mdp.contains(state), "state {state} outside the model");
        self.env.position = Some(state);
    }

    /// Rolls `policy` out from `state` to the end of the episode.
    pub fn rollout_from<R: Rng + ?Sized>(&mut self, state: StateId, policy: &NonstationaryPolicy, rng: &mut R) -> Trajectory {
        self.reset_to(state);
        self.env.finish_episode(policy, rng)
    }
}

impl<'a> Deref for Simulator<'a> {
    type Target = Environment<'a>;

    fn deref(&self) -> &Self::Target {
        &self.env
    }
}

impl DerefMut for Simulator<'_> {
    fn deref_mut(&mut self) -> &mut Self::Target {
        &mut self.env
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{make_counterexample, make_gridworld};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn step_counting() {
        let mdp = make_gridworld(4, 3, 1.0 / 3.0, 0).unwrap();
        let mut env = Environment::new(&mdp);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pi = NonstationaryPolicy::constant(mdp.layer_sizes(), 1);
        let prefix = env.navigate(&pi, 3, &mut rng);
        assert_eq!(prefix.end_layer(), 3);
        assert_eq!(prefix.actions.len(), 3);
        assert_eq!(env.steps(), 3);
        let tail = env.finish_episode(&pi, &mut rng);
        assert_eq!(tail.start_layer, 3);
        assert_eq!(tail.len(), 3);
        assert_eq!(env.steps(), 6);
        assert_eq!(env.state(), None);
        assert_eq!(env.step(0, &mut rng), None);
        assert_eq!(env.steps(), 6);
    }

    #[test]
    fn simulator_rollouts_cost_remaining_layers() {
        let mdp = make_counterexample();
        let mut sim = Simulator::new(&mdp);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pi = NonstationaryPolicy::constant(mdp.layer_sizes(), 0);
        let t = sim.rollout_from(StateId::new(1, 3), &pi, &mut rng);
        assert_eq!(t.len(), 1);
        assert_eq!(sim.steps(), 1);
        let t = sim.rollout_from(StateId::new(0, 0), &pi, &mut rng);
        assert_eq!(t.len(), 2);
        assert_eq!(sim.steps(), 3);
    }
}
