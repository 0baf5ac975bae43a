//! Per-step advantages from a decomposed return.
//!
//! The decomposition is split into two reward streams, each with its own
//! GAE pass and value head:
//!
//! 1. the predicted stream, where the value for the interval ending at `t`
//!    is treated as the reward emitted at step `t` (its undiscounted
//!    return-to-go is then exactly the generalized Q-value);
//! 2. the residual stream, where `r_0 = R - R̂` is paid at the final step.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::RewardDecomposition;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueHeads {
    /// One head per stream.
    Split,
    /// A single head for the summed reward.
    Shared,
}

impl ValueHeads {
    pub fn count(self) -> usize {
        match self {
            Self::Split => 2,
            Self::Shared => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvantageSpec {
    pub gamma: f64,
    pub lambda: f64,
    /// Include the residual stream (bias correction).
    pub residual: bool,
    pub heads: ValueHeads,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryAdvantages {
    /// Sum of the stream advantages, per step.
    pub total: Vec<f64>,
    /// Value-regression targets, one vector per head.
    pub targets: Vec<Vec<f64>>,
}

/// `A_t = Σ_k (γλ)^k δ_{t+k}`, `δ_t = r_t + γ V_{t+1} - V_t`, with `V_T = 0`.
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>> {
    if rewards.len() != values.len() {
        return Err(Error::LengthMismatch {
            context: "GAE values",
            expected: rewards.len(),
            actual: values.len(),
        });
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut acc = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next - values[t];
        acc = delta + gamma * lambda * acc;
        adv[t] = acc;
    }
    Ok(adv)
}

/// Stream rewards for one trajectory: `(predicted, residual)`.
pub fn stream_rewards(decomposition: &RewardDecomposition) -> (Vec<f64>, Vec<f64>) {
    let n = decomposition.len();
    let mut residual = vec![0.0; n];
    if n > 0 {
        residual[n - 1] = decomposition.residual;
    }
    (decomposition.per_interval.clone(), residual)
}

/// `values[h][t]` are the value-head outputs for the trajectory's states.
pub fn compute_advantages(
    decomposition: &RewardDecomposition,
    values: &[Vec<f64>],
    spec: AdvantageSpec,
) -> Result<TrajectoryAdvantages> {
    let n = decomposition.len();
    if values.len() != spec.heads.count() {
        return Err(Error::LengthMismatch {
            context: "value heads",
            expected: spec.heads.count(),
            actual: values.len(),
        });
    }
    for v in values {
        if v.len() != n {
            return Err(Error::LengthMismatch {
                context: "value estimates vs trajectory length",
                expected: n,
                actual: v.len(),
            });
        }
    }
    let (predicted, mut residual) = stream_rewards(decomposition);
    if !spec.residual {
        residual.iter_mut().for_each(|r| *r = 0.0);
    }
    match spec.heads {
        ValueHeads::Split => {
            let a1 = gae(&predicted, &values[0], spec.gamma, spec.lambda)?;
            let a0 = gae(&residual, &values[1], spec.gamma, spec.lambda)?;
            let targets = vec![
                a1.iter().zip(&values[0]).map(|(a, v)| a + v).collect(),
                a0.iter().zip(&values[1]).map(|(a, v)| a + v).collect(),
            ];
            Ok(TrajectoryAdvantages {
                total: a1.iter().zip(&a0).map(|(x, y)| x + y).collect(),
                targets,
            })
        }
        ValueHeads::Shared => {
            let rewards: Vec<f64> = predicted.iter().zip(&residual).map(|(a, b)| a + b).collect();
            let a = gae(&rewards, &values[0], spec.gamma, spec.lambda)?;
            let targets = vec![a.iter().zip(&values[0]).map(|(a, v)| a + v).collect()];
            Ok(TrajectoryAdvantages { total: a, targets })
        }
    }
}

/// Shifts and scales to mean 0, standard deviation 1 (left alone if degenerate).
pub fn normalize(values: &mut [f64]) {
    let n = values.len() as f64;
    if values.len() < 2 {
        return;
    }
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    for v in values.iter_mut() {
        *v -= mean;
        if std > 1e-8 {
            *v /= std;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interval_pg::{step_coefficients, EstimatorForm, TailRule};
    use crate::trajectory::{IntervalKind, IntervalSet};
    use proptest::prelude::*;

    fn spec(gamma: f64, lambda: f64, heads: ValueHeads) -> AdvantageSpec {
        AdvantageSpec {
            gamma,
            lambda,
            residual: true,
            heads,
        }
    }

    /// Textbook definition: discounted sum of future TD errors.
    fn gae_direct(r: &[f64], v: &[f64], gamma: f64, lambda: f64) -> Vec<f64> {
        let n = r.len();
        let vn = |t: usize| if t < n { v[t] } else { 0.0 };
        (0..n)
            .map(|t| {
                (t..n)
                    .map(|k| {
                        let delta = r[k] + gamma * vn(k + 1) - v[k];
                        (gamma * lambda).powi((k - t) as i32) * delta
                    })
                    .sum()
            })
            .collect()
    }

    #[test]
    fn monte_carlo_limit_gives_control_variate_coefficients_exactly() {
        // dyadic values keep every sum exact
        let d = RewardDecomposition::new(vec![0.5, -1.25, 2.0, 0.75], 3.0);
        let zeros = vec![vec![0.0; 4]; 2];
        let adv = compute_advantages(&d, &zeros, spec(1.0, 1.0, ValueHeads::Split)).unwrap();
        let set = IntervalSet::new(IntervalKind::Prefixes, 4);
        let cv = step_coefficients(EstimatorForm::ControlVariate, &d, &set, TailRule::Standard).unwrap();
        assert_eq!(adv.total, cv);
        let q = step_coefficients(EstimatorForm::ResidualCorrected, &d, &set, TailRule::Standard).unwrap();
        assert_eq!(adv.total, q);
    }

    #[test]
    fn exact_decomposition_has_silent_residual_stream() {
        let d = RewardDecomposition::new(vec![1.0, 2.0], 3.0);
        let v = vec![vec![0.3, 0.1], vec![0.0, 0.0]];
        let adv = compute_advantages(&d, &v, spec(0.99, 0.95, ValueHeads::Split)).unwrap();
        let predicted = gae(&[1.0, 2.0], &v[0], 0.99, 0.95).unwrap();
        assert_eq!(adv.total, predicted);
        assert_eq!(adv.targets[1], vec![0.0, 0.0]);
    }

    #[test]
    fn residual_off_drops_the_second_stream() {
        let d = RewardDecomposition::new(vec![1.0, 2.0], 10.0);
        let v = vec![vec![0.0; 2], vec![0.0; 2]];
        let mut s = spec(1.0, 1.0, ValueHeads::Split);
        s.residual = false;
        let adv = compute_advantages(&d, &v, s).unwrap();
        assert_eq!(adv.total, vec![3.0, 2.0]);
    }

    #[test]
    fn length_mismatch_rejected() {
        let d = RewardDecomposition::new(vec![1.0, 2.0], 3.0);
        assert!(compute_advantages(&d, &[vec![0.0; 3], vec![0.0; 2]], spec(1.0, 1.0, ValueHeads::Split)).is_err());
        assert!(compute_advantages(&d, &[vec![0.0; 2]], spec(1.0, 1.0, ValueHeads::Split)).is_err());
    }

    #[test]
    fn shared_head_sums_the_streams() {
        let d = RewardDecomposition::new(vec![1.0, 2.0], 5.0);
        let adv = compute_advantages(&d, &[vec![0.0; 2]], spec(1.0, 1.0, ValueHeads::Shared)).unwrap();
        assert_eq!(adv.total, vec![5.0, 4.0]);
    }

    proptest! {
        #[test]
        fn recursion_matches_direct_sum(
            rv in proptest::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 1..12),
            gamma in 0.0f64..1.0,
            lambda in 0.0f64..1.0,
        ) {
            let r: Vec<f64> = rv.iter().map(|x| x.0).collect();
            let v: Vec<f64> = rv.iter().map(|x| x.1).collect();
            let fast = gae(&r, &v, gamma, lambda).unwrap();
            let slow = gae_direct(&r, &v, gamma, lambda);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() <= 1e-10 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn normalized_advantages_have_zero_mean_unit_std(v in proptest::collection::vec(-100.0f64..100.0, 2..50)) {
            let mut x = v.clone();
            normalize(&mut x);
            let n = x.len() as f64;
            let mean = x.iter().sum::<f64>() / n;
            prop_assert!(mean.abs() < 1e-9);
            let spread = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - v.iter().cloned().fold(f64::INFINITY, f64::min);
            if spread > 1e-6 {
                let std = (x.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
                prop_assert!((std - 1.0).abs() < 1e-9);
            }
        }
    }
}
