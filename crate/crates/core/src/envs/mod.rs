//! Desk-scale episodic environments.
//!
//! Every environment produces a dense per-step reward internally; agents only
//! ever see it through [`EpisodicWrapper`], which reveals the accumulated sum
//! once, at the final step.

mod chain;
mod gridworld;
mod point_mass;

pub use chain::ChainMdp;
pub use gridworld::SparseGridworld;
pub use point_mass::PointMass;

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::TabularMdp;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActionSpace {
    Discrete(usize),
    /// Continuous action vector of the given dimension.
    Continuous(usize),
}

impl ActionSpace {
    /// Width of the action features stored in a trajectory.
    pub fn feature_dim(&self) -> usize {
        match *self {
            ActionSpace::Discrete(n) | ActionSpace::Continuous(n) => n,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    /// One-hot encoding for discrete actions, the raw vector for continuous ones.
    pub fn features(&self, space: ActionSpace) -> Vec<f64> {
        match (self, space) {
            (Action::Discrete(i), ActionSpace::Discrete(n)) => {
                let mut v = vec![0.0; n];
                v[*i] = 1.0;
                v
            }
            (Action::Continuous(a), _) => a.clone(),
            (Action::Discrete(i), ActionSpace::Continuous(_)) => vec![*i as f64],
        }
    }

    /// Inverse of [`Action::features`].
    pub fn from_features(features: &[f64], space: ActionSpace) -> Self {
        match space {
            ActionSpace::Discrete(_) => {
                let mut best = 0;
                for (i, &x) in features.iter().enumerate() {
                    if x > features[best] {
                        best = i;
                    }
                }
                Action::Discrete(best)
            }
            ActionSpace::Continuous(_) => Action::Continuous(features.to_vec()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: Vec<f64>,
    /// Hidden from agents by [`EpisodicWrapper`].
    pub dense_reward: f64,
    pub done: bool,
}

/// An episodic MDP with a fixed horizon.
pub trait Environment: Send {
    fn name(&self) -> &'static str;
    fn state_dim(&self) -> usize;
    fn action_space(&self) -> ActionSpace;
    fn horizon(&self) -> usize;
    fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64>;
    fn step(&mut self, action: &Action, rng: &mut dyn RngCore) -> Result<StepResult>;

    /// Full transition table, for environments small enough to enumerate.
    fn tabular(&self) -> Option<TabularMdp> {
        None
    }

    /// Best achievable episodic return, when known in closed form.
    fn optimal_return(&self) -> Option<f64> {
        None
    }
}

/// Reward seen by the agent at each step.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodicStep {
    pub next_state: Vec<f64>,
    /// Zero before the final step; the episodic return on the final step.
    pub reward: f64,
    pub done: bool,
}

/// Hides dense rewards until the episode ends.
pub struct EpisodicWrapper {
    inner: Box<dyn Environment>,
    accumulated: f64,
}

impl EpisodicWrapper {
    pub fn new(inner: Box<dyn Environment>) -> Self {
        Self { inner, accumulated: 0.0 }
    }

    pub fn inner(&self) -> &dyn Environment {
        self.inner.as_ref()
    }

    pub fn reset(&mut self, rng: &mut dyn RngCore) -> Vec<f64> {
        self.accumulated = 0.0;
        self.inner.reset(rng)
    }

    pub fn step(&mut self, action: &Action, rng: &mut dyn RngCore) -> Result<EpisodicStep> {
        let r = self.inner.step(action, rng)?;
        if !r.dense_reward.is_finite() {
            return Err(Error::NonFinite("dense reward".into()));
        }
        self.accumulated += r.dense_reward;
        Ok(EpisodicStep {
            next_state: r.next_state,
            reward: if r.done { self.accumulated } else { 0.0 },
            done: r.done,
        })
    }

    /// Sum of hidden dense rewards so far in the current episode.
    pub fn accumulated_return(&self) -> f64 {
        self.accumulated
    }
}

/// Environment parameters as they appear in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvSpec {
    ChainMdp { n_states: usize, horizon: usize },
    SparseGridworld { size: usize, horizon: usize },
    PointMass { horizon: usize },
}

impl EnvSpec {
    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match *self {
            EnvSpec::ChainMdp { n_states, horizon } => Box::new(ChainMdp::new(n_states, horizon)?),
            EnvSpec::SparseGridworld { size, horizon } => Box::new(SparseGridworld::new(size, horizon)?),
            EnvSpec::PointMass { horizon } => Box::new(PointMass::new(horizon)?),
        })
    }
}

pub(crate) fn one_hot(i: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[i] = 1.0;
    v
}

pub(crate) fn check_horizon(horizon: usize) -> Result<()> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    Ok(())
}
