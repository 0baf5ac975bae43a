use rand::RngCore;

use super::{check_horizon, one_hot, Action, ActionSpace, Environment, StepResult};
use crate::error::{Error, Result};
use crate::oracle::TabularMdp;

/// `size × size` grid; start at the top-left cell, +1 and episode end at the
/// bottom-right cell. Actions: 0 up, 1 down, 2 left, 3 right. Moves into a wall
/// leave the agent in place.
#[derive(Debug, Clone)]
pub struct SparseGridworld {
    size: usize,
    horizon: usize,
    cell: usize,
    t: usize,
}

impl SparseGridworld {
    pub fn new(size: usize, horizon: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidArgument(format!("grid size must be at least 2, got {size}")));
        }
        check_horizon(horizon)?;
        Ok(Self {
            size,
            horizon,
            cell: 0,
            t: 0,
        })
    }

    fn n_cells(&self) -> usize {
        self.size * self.size
    }

    fn goal(&self) -> usize {
        self.n_cells() - 1
    }

    fn next(&self, cell: usize, a: usize) -> usize {
        let (r, c) = (cell / self.size, cell % self.size);
        let (r, c) = match a {
            0 => (r.saturating_sub(1), c),
            1 => ((r + 1).min(self.size - 1), c),
            2 => (r, c.saturating_sub(1)),
            _ => (r, (c + 1).min(self.size - 1)),
        };
        r * self.size + c
    }
}

impl Environment for SparseGridworld {
    fn name(&self) -> &'static str {
        "sparse_gridworld"
    }

    fn state_dim(&self) -> usize {
        self.n_cells()
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete(4)
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset(&mut self, _rng: &mut dyn RngCore) -> Vec<f64> {
        self.cell = 0;
        self.t = 0;
        one_hot(0, self.n_cells())
    }

    fn step(&mut self, action: &Action, _rng: &mut dyn RngCore) -> Result<StepResult> {
        let a = match action {
            Action::Discrete(a) if *a < 4 => *a,
            other => return Err(Error::InvalidArgument(format!("gridworld action {other:?}"))),
        };
        self.cell = self.next(self.cell, a);
        self.t += 1;
        let at_goal = self.cell == self.goal();
        Ok(StepResult {
            next_state: one_hot(self.cell, self.n_cells()),
            dense_reward: if at_goal { 1.0 } else { 0.0 },
            done: at_goal || self.t >= self.horizon,
        })
    }

    fn tabular(&self) -> Option<TabularMdp> {
        let (n, na) = (self.n_cells(), 4);
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
        Some(if 2 * (self.size - 1) <= self.horizon { 1.0 } else { 0.0 })
    }
}
