use rand::RngCore;

use super::{check_horizon, one_hot, Action, ActionSpace, Environment, StepResult};
use crate::error::{Error, Result};
use crate::oracle::TabularMdp;

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

/// Deterministic chain of `n` states. The agent starts at state 0; moving right
/// from state `n-2` reaches the goal, pays 1 and ends the episode.
#[derive(Debug, Clone)]
pub struct ChainMdp {
    n_states: usize,
    horizon: usize,
    state: usize,
    t: usize,
}

impl ChainMdp {
    pub fn new(n_states: usize, horizon: usize) -> Result<Self> {
        if n_states < 2 {
            return Err(Error::InvalidArgument(format!("chain needs at least 2 states, got {n_states}")));
        }
        check_horizon(horizon)?;
        Ok(Self {
            n_states,
            horizon,
            state: 0,
            t: 0,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    fn next(&self, s: usize, a: usize) -> usize {
        match a {
            LEFT => s.saturating_sub(1),
            _ => (s + 1).min(self.n_states - 1),
        }
    }

    fn goal(&self) -> usize {
        self.n_states - 1
    }
}

impl Environment for ChainMdp {
    fn name(&self) -> &'static str {
        "chain_mdp"
    }

    fn state_dim(&self) -> usize {
        self.n_states
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(2)
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset(&mut self, _rng: &mut dyn RngCore) -> Vec<f64> {
        self.state = 0;
        self.t = 0;
        one_hot(0, self.n_states)
    }

    fn step(&mut self, action: &Action, _rng: &mut dyn RngCore) -> Result<StepResult> {
        let a = match action {
            Action::Discrete(a) if *a <= RIGHT => *a,
            other => return Err(Error::InvalidArgument(format!("chain action {other:?}"))),
        };
        self.state = self.next(self.state, a);
        self.t += 1;
        let at_goal = self.state == self.goal();
        Ok(StepResult {
            next_state: one_hot(self.state, self.n_states),
            dense_reward: if at_goal { 1.0 } else { 0.0 },
            done: at_goal || self.t >= self.horizon,
        })
    }

    fn tabular(&self) -> Option<TabularMdp> {
        let (n, na) = (self.n_states, 2);
        let mut transitions = vec![0.0; n * na * n];
        let mut rewards = vec![0.0; n * na * n];
        for s in 0..n {
            for a in 0..na {
                let s2 = self.next(s, a);
                transitions[(s * na + a) * n + s2] = 1.0;
                if s2 == self.goal() {
                    rewards[(s * na + a) * n + s2] = 1.0;
                }
            }
        }
        let mut terminal = vec![false; n];
        terminal[self.goal()] = true;
        Some(TabularMdp {
            n_states: n,
            n_actions: na,
            horizon: self.horizon,
            transitions,
            rewards,
            initial: one_hot(0, n),
            terminal,
        })
    }

    fn optimal_return(&self) -> Option<f64> {
        Some(if self.n_states - 1 <= self.horizon { 1.0 } else { 0.0 })
    }
}
