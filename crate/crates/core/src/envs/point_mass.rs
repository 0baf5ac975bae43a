use rand::RngCore;

use super::{check_horizon, Action, ActionSpace, Environment, StepResult};
use crate::error::{Error, Result};

pub const DT: f64 = 0.05;
pub const MAX_ACCEL: f64 = 1.0;

/// 2-D point mass with bounded acceleration. State is `[px, py, vx, vy]`;
/// the dense reward is `-‖p - goal‖` after every explicit Euler step
/// `p ← p + dt·v`, `v ← v + dt·a`.
#[derive(Debug, Clone)]
pub struct PointMass {
    horizon: usize,
    start: [f64; 2],
    goal: [f64; 2],
    pos: [f64; 2],
    vel: [f64; 2],
    t: usize,
}

impl PointMass {
    pub fn new(horizon: usize) -> Result<Self> {
        check_horizon(horizon)?;
        Ok(Self {
            horizon,
            start: [0.0, 0.0],
            goal: [1.0, 1.0],
            pos: [0.0, 0.0],
            vel: [0.0, 0.0],
            t: 0,
        })
    }

    pub fn with_start(mut self, start: [f64; 2]) -> Self {
        self.start = start;
        self
    }

    pub fn with_goal(mut self, goal: [f64; 2]) -> Self {
        self.goal = goal;
        self
    }

    pub fn goal(&self) -> [f64; 2] {
        self.goal
    }

    /// Scales `a` down to norm `MAX_ACCEL` if it is longer.
    pub fn clip_action(a: &[f64]) -> [f64; 2] {
        let (x, y) = (a[0], a[1]);
        let norm = (x * x + y * y).sqrt();
        if norm > MAX_ACCEL {
            [x * MAX_ACCEL / norm, y * MAX_ACCEL / norm]
        } else {
            [x, y]
        }
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1]]
    }
}

impl Environment for PointMass {
    fn name(&self) -> &'static str {
        "point_mass"
    }

    fn state_dim(&self) -> usize {
        4
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Continuous(2)
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset(&mut self, _rng: &mut dyn RngCore) -> Vec<f64> {
        self.pos = self.start;
        self.vel = [0.0, 0.0];
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, action: &Action, _rng: &mut dyn RngCore) -> Result<StepResult> {
        let raw = match action {
            Action::Continuous(a) if a.len() == 2 && a.iter().all(|x| x.is_finite()) => a,
            other => return Err(Error::InvalidArgument(format!("point-mass action {other:?}"))),
        };
        let a = Self::clip_action(raw);
        for i in 0..2 {
            self.pos[i] += DT * self.vel[i];
            self.vel[i] += DT * a[i];
        }
        self.t += 1;
        let dx = self.pos[0] - self.goal[0];
        let dy = self.pos[1] - self.goal[1];
        Ok(StepResult {
            next_state: self.observe(),
            dense_reward: -(dx * dx + dy * dy).sqrt(),
            done: self.t >= self.horizon,
        })
    }

    fn optimal_return(&self) -> Option<f64> {
        None
    }
}
