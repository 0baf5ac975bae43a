use rand::Rng;

use crate::envs::EpisodicWrapper;
use crate::error::{Error, Result};
use crate::policy::MlpPolicy;
use crate::trajectory::Trajectory;

/// A finished episode plus the behaviour policy's log-probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub trajectory: Trajectory,
    pub log_probs: Vec<f64>,
}

/// Runs one episode; the trajectory carries only the terminal episodic return.
pub fn run_episode(policy: &MlpPolicy, env: &mut EpisodicWrapper, rng: &mut impl Rng) -> Result<Rollout> {
    let space = policy.action_space();
    let mut state = env.reset(rng);
    let (mut states, mut actions, mut log_probs) = (Vec::new(), Vec::new(), Vec::new());
    // a safety cap well beyond any horizon
    let cap = env.inner().horizon().saturating_mul(4).max(1);
    loop {
        let (action, lp) = policy.sample(&state, rng)?;
        let step = env.step(&action, rng)?;
        states.push(std::mem::replace(&mut state, step.next_state));
        actions.push(action.features(space));
        log_probs.push(lp);
        if step.done {
            let trajectory = Trajectory::new(states, actions, step.reward)?;
            return Ok(Rollout { trajectory, log_probs });
        }
        if states.len() >= cap {
            return Err(Error::InvalidArgument(format!(
                "{} did not terminate within {cap} steps",
                env.inner().name()
            )));
        }
    }
}

/// Collects whole episodes until at least `min_steps` steps have been taken.
pub fn rollout(policy: &MlpPolicy, env: &mut EpisodicWrapper, min_steps: usize, rng: &mut impl Rng) -> Result<Vec<Rollout>> {
    let mut out = Vec::new();
    let mut steps = 0;
    while steps < min_steps.max(1) {
        let r = run_episode(policy, env, rng)?;
        steps += r.trajectory.len();
        out.push(r);
    }
    Ok(out)
}

pub fn rollout_episodes(
    policy: &MlpPolicy,
    env: &mut EpisodicWrapper,
    episodes: usize,
    rng: &mut impl Rng,
) -> Result<Vec<Rollout>> {
    (0..episodes).map(|_| run_episode(policy, env, rng)).collect()
}
