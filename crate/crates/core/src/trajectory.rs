//! Trajectories, interval sets and reward decompositions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An agent-visible rollout: `T` (state, action) pairs plus the terminal episodic return.
///
/// Discrete actions are stored one-hot so that every trajectory is a plain
/// `T × (d_s + d_a)` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub episodic_return: f64,
}

impl Trajectory {
    pub fn new(states: Vec<Vec<f64>>, actions: Vec<Vec<f64>>, episodic_return: f64) -> Result<Self> {
        let t = Self {
            states,
            actions,
            episodic_return,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.is_empty() {
            return Err(Error::InvalidArgument("trajectory has no steps".into()));
        }
        if self.states.len() != self.actions.len() {
            return Err(Error::LengthMismatch {
                context: "trajectory actions",
                expected: self.states.len(),
                actual: self.actions.len(),
            });
        }
        if !self.episodic_return.is_finite() {
            return Err(Error::NonFinite("episodic return".into()));
        }
        let ds = self.states[0].len();
        let da = self.actions[0].len();
        if self.states.iter().any(|s| s.len() != ds) || self.actions.iter().any(|a| a.len() != da) {
            return Err(Error::InvalidArgument("ragged state or action rows".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.states[0].len()
    }

    pub fn action_dim(&self) -> usize {
        self.actions[0].len()
    }

    /// Row `t` of the `[s_t, a_t]` input matrix.
    pub fn input_row(&self, t: usize) -> Vec<f64> {
        let mut row = self.states[t].clone();
        row.extend_from_slice(&self.actions[t]);
        row
    }

    /// Index of a one-hot (or argmax) discrete action at step `t`.
    pub fn action_index(&self, t: usize) -> usize {
        let a = &self.actions[t];
        let mut best = 0;
        for (i, &x) in a.iter().enumerate() {
            if x > a[best] {
                best = i;
            }
        }
        best
    }
}

/// How the interval set is built from a trajectory of length `T`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalKind {
    /// `{{0}, {1}, …, {T-1}}`
    Singletons,
    /// `{{0}, {0,1}, …, {0..T-1}}`
    Prefixes,
}

/// A single interval; both kinds are indexed by their maximum element.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interval {
    pub start: usize,
    pub max: usize,
}

impl Interval {
    pub fn contains(&self, t: usize) -> bool {
        self.start <= t && t <= self.max
    }
}

/// The interval set for a concrete trajectory length, ordered by ascending `max`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntervalSet {
    kind: IntervalKind,
    intervals: Vec<Interval>,
}

impl IntervalSet {
    pub fn new(kind: IntervalKind, len: usize) -> Self {
        let intervals = (0..len)
            .map(|t| match kind {
                IntervalKind::Singletons => Interval { start: t, max: t },
                IntervalKind::Prefixes => Interval { start: 0, max: t },
            })
            .collect();
        Self { kind, intervals }
    }

    pub fn kind(&self) -> IntervalKind {
        self.kind
    }

    pub fn intervals(&self) -> &[Interval] {
        &self.intervals
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }
}

/// Per-interval surrogate rewards for one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardDecomposition {
    /// One value per interval, ordered by ascending `max(α)`.
    pub per_interval: Vec<f64>,
    /// Sum of `per_interval` in ascending order.
    pub composite: f64,
    /// `R(τ) - composite`.
    pub residual: f64,
}

impl RewardDecomposition {
    pub fn new(per_interval: Vec<f64>, episodic_return: f64) -> Self {
        let composite = ordered_sum(&per_interval);
        Self {
            per_interval,
            composite,
            residual: episodic_return - composite,
        }
    }

    /// Decomposition that assigns nothing to any interval (`r̂ ≡ 0`).
    pub fn zero(len: usize, episodic_return: f64) -> Self {
        Self::new(vec![0.0; len], episodic_return)
    }

    pub fn len(&self) -> usize {
        self.per_interval.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_interval.is_empty()
    }

    pub fn episodic_return(&self) -> f64 {
        self.composite + self.residual
    }
}

/// Left-to-right summation; the fixed order keeps identity checks reproducible.
pub fn ordered_sum(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |acc, &x| acc + x)
}
