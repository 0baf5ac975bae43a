//! Policy-gradient estimators for rewards defined on time intervals.
//!
//! Every interval `α` is identified by `max(α)`. For a step `t`, the tail set
//! `Γ*_t = {α : max(α) ≥ t}` feeds the generalized Q-value
//! `q_t = Σ_{α∈Γ*_t} r̂_α`; its complement gives `r̂_¬t = Σ_{α∉Γ*_t} r̂_α`.
//!
//! Five per-trajectory forms are provided, all built from per-step score
//! vectors `g_t = ∇θ log π(a_t|s_t)`:
//!
//! | form                 | per-sample value                                   |
//! |----------------------|----------------------------------------------------|
//! | `LikelihoodRatio`    | `R Σ_t g_t`                                        |
//! | `PerInterval`        | `Σ_α r̂_α Σ_{t ≤ max(α)} g_t`                       |
//! | `GeneralizedQ`       | `Σ_t q_t g_t`                                      |
//! | `ResidualCorrected`  | `r_0 Σ_t g_t + Σ_t q_t g_t`                        |
//! | `ControlVariate`     | `Σ_t (R − r̂_¬t) g_t`                               |
//!
//! `PerInterval` and `GeneralizedQ` are the same quantity summed in a
//! different order, as are `ResidualCorrected` and `ControlVariate`.
//! All sums run in ascending `t`, then ascending `max(α)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::ScorePolicy;
use crate::trajectory::{ordered_sum, IntervalKind, IntervalSet, RewardDecomposition, Trajectory};

/// Rule deciding whether interval `α` (given by `max(α)`) belongs to `Γ*_t`.
///
/// `OffByOne` exists only to check that the verification catches a corrupted
/// tail set; never use it for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TailRule {
    #[default]
    Standard,
    OffByOne,
}

impl TailRule {
    pub fn contains(self, interval_max: usize, t: usize) -> bool {
        match self {
            TailRule::Standard => interval_max >= t,
            TailRule::OffByOne => interval_max > t,
        }
    }
}

/// `q[t] = Σ_{α∈Γ*_t} r̂_α` for one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralizedQ {
    pub q: Vec<f64>,
}

fn check_lengths(decomposition: &RewardDecomposition, intervals: &IntervalSet) -> Result<()> {
    if decomposition.len() != intervals.len() {
        return Err(Error::LengthMismatch {
            context: "decomposition vs interval set",
            expected: intervals.len(),
            actual: decomposition.len(),
        });
    }
    Ok(())
}

pub fn generalized_q(decomposition: &RewardDecomposition, intervals: &IntervalSet) -> Result<GeneralizedQ> {
    generalized_q_with(decomposition, intervals, TailRule::Standard)
}

pub fn generalized_q_with(
    decomposition: &RewardDecomposition,
    intervals: &IntervalSet,
    rule: TailRule,
) -> Result<GeneralizedQ> {
    check_lengths(decomposition, intervals)?;
    let len = intervals.len();
    let q = (0..len)
        .map(|t| {
            intervals
                .intervals()
                .iter()
                .zip(&decomposition.per_interval)
                .filter(|(iv, _)| rule.contains(iv.max, t))
                .fold(0.0, |acc, (_, &r)| acc + r)
        })
        .collect();
    Ok(GeneralizedQ { q })
}

/// `r̂_¬t = Σ_{α∉Γ*_t} r̂_α` for every step.
pub fn r_not_t(decomposition: &RewardDecomposition, intervals: &IntervalSet) -> Result<Vec<f64>> {
    check_lengths(decomposition, intervals)?;
    let len = intervals.len();
    Ok((0..len)
        .map(|t| {
            intervals
                .intervals()
                .iter()
                .zip(&decomposition.per_interval)
                .filter(|(iv, _)| !TailRule::Standard.contains(iv.max, t))
                .fold(0.0, |acc, (_, &r)| acc + r)
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorForm {
    LikelihoodRatio,
    PerInterval,
    GeneralizedQ,
    ResidualCorrected,
    ControlVariate,
}

/// Batch-mean gradient with diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientEstimate {
    pub grad: Vec<f64>,
    /// Mean over parameters of the across-trajectory variance of per-sample gradients.
    pub variance: f64,
    /// Mean `|r_0|` over the batch.
    pub residual_abs_mean: f64,
}

fn axpy(acc: &mut [f64], c: f64, g: &[f64]) {
    for (a, &x) in acc.iter_mut().zip(g) {
        *a += c * x;
    }
}

fn check_scores(scores: &[Vec<f64>], len: usize) -> Result<usize> {
    if scores.len() != len {
        return Err(Error::LengthMismatch {
            context: "score vectors vs trajectory length",
            expected: len,
            actual: scores.len(),
        });
    }
    Ok(scores.first().map_or(0, Vec::len))
}

/// Per-step coefficients `c_t` such that the form equals `Σ_t c_t g_t`.
/// Not defined for `PerInterval`, which is summed over intervals instead.
pub fn step_coefficients(
    form: EstimatorForm,
    decomposition: &RewardDecomposition,
    intervals: &IntervalSet,
    rule: TailRule,
) -> Result<Vec<f64>> {
    check_lengths(decomposition, intervals)?;
    let ret = decomposition.episodic_return();
    Ok(match form {
        EstimatorForm::LikelihoodRatio => vec![ret; intervals.len()],
        EstimatorForm::GeneralizedQ => generalized_q_with(decomposition, intervals, rule)?.q,
        EstimatorForm::ResidualCorrected => generalized_q_with(decomposition, intervals, rule)?
            .q
            .into_iter()
            .map(|q| decomposition.residual + q)
            .collect(),
        EstimatorForm::ControlVariate => r_not_t(decomposition, intervals)?
            .into_iter()
            .map(|r| ret - r)
            .collect(),
        EstimatorForm::PerInterval => {
            return Err(Error::InvalidArgument(
                "the per-interval form has no per-step coefficients".into(),
            ))
        }
    })
}

/// One trajectory's contribution, evaluated literally in the chosen form.
pub fn per_sample(
    form: EstimatorForm,
    decomposition: &RewardDecomposition,
    intervals: &IntervalSet,
    scores: &[Vec<f64>],
) -> Result<Vec<f64>> {
    per_sample_with(form, decomposition, intervals, scores, TailRule::Standard)
}

pub fn per_sample_with(
    form: EstimatorForm,
    decomposition: &RewardDecomposition,
    intervals: &IntervalSet,
    scores: &[Vec<f64>],
    rule: TailRule,
) -> Result<Vec<f64>> {
    check_lengths(decomposition, intervals)?;
    let p = check_scores(scores, intervals.len())?;
    let mut out = vec![0.0; p];
    match form {
        EstimatorForm::PerInterval => {
            // Σ_α r̂_α Σ_{t∈Γ_α} g_t with Γ_α = {t ≤ max(α)}
            for (iv, &r) in intervals.intervals().iter().zip(&decomposition.per_interval) {
                let mut inner = vec![0.0; p];
                for g in &scores[..=iv.max] {
                    axpy(&mut inner, 1.0, g);
                }
                axpy(&mut out, r, &inner);
            }
        }
        EstimatorForm::ResidualCorrected => {
            let mut total = vec![0.0; p];
            for g in scores {
                axpy(&mut total, 1.0, g);
            }
            axpy(&mut out, decomposition.residual, &total);
            let q = generalized_q_with(decomposition, intervals, rule)?.q;
            let mut qterm = vec![0.0; p];
            for (g, &c) in scores.iter().zip(&q) {
                axpy(&mut qterm, c, g);
            }
            axpy(&mut out, 1.0, &qterm);
        }
        _ => {
            let coeffs = step_coefficients(form, decomposition, intervals, rule)?;
            for (g, &c) in scores.iter().zip(&coeffs) {
                axpy(&mut out, c, g);
            }
        }
    }
    Ok(out)
}

/// `g_t` for every step of a trajectory.
pub fn step_scores<P: ScorePolicy + ?Sized>(policy: &P, trajectory: &Trajectory) -> Result<Vec<Vec<f64>>> {
    (0..trajectory.len())
        .map(|t| policy.grad_log_prob(&trajectory.states[t], &trajectory.actions[t]))
        .collect()
}

/// Batch mean and across-sample variance of per-sample gradients.
pub fn summarize(samples: &[Vec<f64>], residuals: &[f64]) -> GradientEstimate {
    let n = samples.len();
    let p = samples.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; p];
    for s in samples {
        axpy(&mut mean, 1.0 / n as f64, s);
    }
    let variance = if n > 1 && p > 0 {
        let mut total = 0.0;
        for j in 0..p {
            let v: f64 = samples.iter().map(|s| (s[j] - mean[j]).powi(2)).sum::<f64>() / (n - 1) as f64;
            total += v;
        }
        total / p as f64
    } else {
        0.0
    };
    let residual_abs_mean = if residuals.is_empty() {
        0.0
    } else {
        ordered_sum(&residuals.iter().map(|r| r.abs()).collect::<Vec<_>>()) / residuals.len() as f64
    };
    GradientEstimate {
        grad: mean,
        variance,
        residual_abs_mean,
    }
}

/// `(1/n) Σ_i form(τ_i)` over a batch.
pub fn estimate<P: ScorePolicy + ?Sized>(
    form: EstimatorForm,
    batch: &[Trajectory],
    policy: &P,
    decompositions: &[RewardDecomposition],
    intervals: &[IntervalSet],
) -> Result<GradientEstimate> {
    if batch.len() != decompositions.len() || batch.len() != intervals.len() {
        return Err(Error::LengthMismatch {
            context: "batch vs decompositions",
            expected: batch.len(),
            actual: decompositions.len().min(intervals.len()),
        });
    }
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut samples = Vec::with_capacity(batch.len());
    for ((traj, d), set) in batch.iter().zip(decompositions).zip(intervals) {
        if (d.episodic_return() - traj.episodic_return).abs() > 1e-9 * (1.0 + traj.episodic_return.abs()) {
            return Err(Error::InvalidArgument("decomposition does not belong to trajectory".into()));
        }
        let scores = step_scores(policy, traj)?;
        samples.push(per_sample(form, d, set, &scores)?);
    }
    let residuals: Vec<f64> = decompositions.iter().map(|d| d.residual).collect();
    Ok(summarize(&samples, &residuals))
}

fn sets_for(batch: &[Trajectory], kind: IntervalKind) -> Vec<IntervalSet> {
    batch.iter().map(|t| IntervalSet::new(kind, t.len())).collect()
}

/// Gradient of the composite objective, generalized-Q form.
pub fn grad_composite<P: ScorePolicy + ?Sized>(
    batch: &[Trajectory],
    policy: &P,
    decompositions: &[RewardDecomposition],
    kind: IntervalKind,
) -> Result<GradientEstimate> {
    estimate(EstimatorForm::GeneralizedQ, batch, policy, decompositions, &sets_for(batch, kind))
}

/// Residual-corrected (unbiased) gradient.
pub fn grad_bias_corrected<P: ScorePolicy + ?Sized>(
    batch: &[Trajectory],
    policy: &P,
    decompositions: &[RewardDecomposition],
    kind: IntervalKind,
) -> Result<GradientEstimate> {
    estimate(EstimatorForm::ResidualCorrected, batch, policy, decompositions, &sets_for(batch, kind))
}

/// Same expectation as [`grad_bias_corrected`], written with `r̂_¬t` as a control variate.
pub fn grad_control_variate<P: ScorePolicy + ?Sized>(
    batch: &[Trajectory],
    policy: &P,
    decompositions: &[RewardDecomposition],
    kind: IntervalKind,
) -> Result<GradientEstimate> {
    estimate(EstimatorForm::ControlVariate, batch, policy, decompositions, &sets_for(batch, kind))
}

/// Plain likelihood-ratio estimator `R Σ_t g_t`.
pub fn grad_reinforce<P: ScorePolicy + ?Sized>(batch: &[Trajectory], policy: &P) -> Result<GradientEstimate> {
    let decompositions: Vec<_> = batch
        .iter()
        .map(|t| RewardDecomposition::zero(t.len(), t.episodic_return))
        .collect();
    let sets = sets_for(batch, IntervalKind::Singletons);
    estimate(EstimatorForm::LikelihoodRatio, batch, policy, &decompositions, &sets)
}

/// `max_i |a_i − b_i| / max(‖a‖_∞, ‖b‖_∞)`, zero when both vectors vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|x| x.abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn decomp(r: &[f64], ret: f64) -> RewardDecomposition {
        RewardDecomposition::new(r.to_vec(), ret)
    }

    #[test]
    fn singleton_q_is_return_to_go() {
        let set = IntervalSet::new(IntervalKind::Singletons, 3);
        let q = generalized_q(&decomp(&[1.0, 2.0, 3.0], 6.0), &set).unwrap();
        assert_eq!(q.q, vec![6.0, 5.0, 3.0]);
        assert_eq!(r_not_t(&decomp(&[1.0, 2.0, 3.0], 6.0), &set).unwrap(), vec![0.0, 1.0, 3.0]);
    }

    #[test]
    fn prefix_q_sums_later_prefixes() {
        let (a, b, c) = (0.3, -1.1, 2.5);
        let set = IntervalSet::new(IntervalKind::Prefixes, 3);
        let q = generalized_q(&decomp(&[a, b, c], 0.0), &set).unwrap();
        assert_eq!(q.q, vec![a + b + c, b + c, c]);
    }

    #[test]
    fn r_not_zero_is_zero() {
        let set = IntervalSet::new(IntervalKind::Prefixes, 4);
        let r = r_not_t(&decomp(&[5.0, -2.0, 1.0, 7.0], 1.0), &set).unwrap();
        assert_eq!(r[0], 0.0);
    }

    #[test]
    fn length_mismatch_rejected() {
        let set = IntervalSet::new(IntervalKind::Singletons, 2);
        assert!(generalized_q(&decomp(&[1.0, 2.0, 3.0], 6.0), &set).is_err());
    }

    #[test]
    fn zero_decomposition_collapses_to_likelihood_ratio() {
        let set = IntervalSet::new(IntervalKind::Prefixes, 3);
        let d = RewardDecomposition::zero(3, 2.5);
        let scores = vec![vec![1.0, 0.5], vec![-0.2, 0.1], vec![0.3, -0.7]];
        let lr = per_sample(EstimatorForm::LikelihoodRatio, &d, &set, &scores).unwrap();
        for form in [EstimatorForm::ResidualCorrected, EstimatorForm::ControlVariate] {
            let g = per_sample(form, &d, &set, &scores).unwrap();
            // same terms, different summation order
            assert!(g.iter().zip(&lr).all(|(x, y)| (x - y).abs() < 1e-15), "{form:?}: {g:?} vs {lr:?}");
        }
        let q = per_sample(EstimatorForm::GeneralizedQ, &d, &set, &scores).unwrap();
        assert_eq!(q, vec![0.0, 0.0]);
    }

    #[test]
    fn single_step_collapses_to_reinforce_with_predicted_reward() {
        let set = IntervalSet::new(IntervalKind::Singletons, 1);
        let d = decomp(&[0.7], 2.0);
        let g = vec![vec![0.4, -1.5]];
        let q = per_sample(EstimatorForm::GeneralizedQ, &d, &set, &g).unwrap();
        assert_eq!(q, vec![0.7 * 0.4, 0.7 * -1.5]);
        let cv = per_sample(EstimatorForm::ControlVariate, &d, &set, &g).unwrap();
        assert_eq!(cv, vec![2.0 * 0.4, 2.0 * -1.5]);
    }

    #[test]
    fn exact_decomposition_makes_correction_vanish() {
        let set = IntervalSet::new(IntervalKind::Singletons, 2);
        let d = decomp(&[1.0, 2.0], 3.0);
        assert_eq!(d.residual, 0.0);
        let g = vec![vec![0.4], vec![0.9]];
        assert_eq!(
            per_sample(EstimatorForm::ResidualCorrected, &d, &set, &g).unwrap(),
            per_sample(EstimatorForm::GeneralizedQ, &d, &set, &g).unwrap()
        );
    }

    #[test]
    fn off_by_one_rule_drops_own_interval() {
        let set = IntervalSet::new(IntervalKind::Singletons, 3);
        let q = generalized_q_with(&decomp(&[1.0, 2.0, 3.0], 6.0), &set, TailRule::OffByOne).unwrap();
        assert_eq!(q.q, vec![5.0, 3.0, 0.0]);
    }
}
