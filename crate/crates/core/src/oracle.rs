//! Exact-enumeration ground truth on small tabular MDPs.
//!
//! Every realizable trajectory is listed with its exact probability under the
//! policy and dynamics, so expectations of any estimator are finite sums. The
//! identities checked by [`verify_decomposition_identities`] hold for any
//! decomposition that only looks at the past, however badly it fits the return.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envs::one_hot;
use crate::error::{Error, Result};
use crate::interval_pg::{per_sample, per_sample_with, EstimatorForm, TailRule};
use crate::policy::DiscretePolicy;
use crate::trajectory::{IntervalKind, IntervalSet, RewardDecomposition, Trajectory};

/// Tabular MDP with optional terminal states and rewards `r(s, a, s')`.
/// The episodic return is the sum of per-step rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub horizon: usize,
    /// `P(s'|s,a)` at index `(s * n_actions + a) * n_states + s'`.
    pub transitions: Vec<f64>,
    /// `r(s,a,s')`, same layout as `transitions`.
    pub rewards: Vec<f64>,
    pub initial: Vec<f64>,
    pub terminal: Vec<bool>,
}

impl TabularMdp {
    pub fn validate(&self) -> Result<()> {
        let (s, a) = (self.n_states, self.n_actions);
        if s == 0 || a == 0 || self.horizon == 0 {
            return Err(Error::InvalidArgument("empty MDP".into()));
        }
        let cube = s * a * s;
        for (name, len, want) in [
            ("transitions", self.transitions.len(), cube),
            ("rewards", self.rewards.len(), cube),
            ("initial", self.initial.len(), s),
            ("terminal", self.terminal.len(), s),
        ] {
            if len != want {
                return Err(Error::InvalidArgument(format!("{name} has {len} entries, expected {want}")));
            }
        }
        let check_row = |row: &[f64], what: String| -> Result<()> {
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!("{what} is not a probability distribution")));
            }
            Ok(())
        };
        check_row(&self.initial, "initial distribution".into())?;
        for si in 0..s {
            for ai in 0..a {
                let start = (si * a + ai) * s;
                check_row(&self.transitions[start..start + s], format!("P(.|{si},{ai})"))?;
            }
        }
        if self.rewards.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("MDP reward".into()));
        }
        Ok(())
    }

    pub fn p(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.transitions[(s * self.n_actions + a) * self.n_states + s2]
    }

    pub fn r(&self, s: usize, a: usize, s2: usize) -> f64 {
        self.rewards[(s * self.n_actions + a) * self.n_states + s2]
    }

    pub fn state_features(&self, s: usize) -> Vec<f64> {
        one_hot(s, self.n_states)
    }

    pub fn action_features(&self, a: usize) -> Vec<f64> {
        one_hot(a, self.n_actions)
    }

    /// Draws a trajectory under `policy` (for Monte-Carlo checks against the enumeration).
    pub fn sample<P: DiscretePolicy>(&self, policy: &P, rng: &mut impl Rng) -> Result<Trajectory> {
        let draw = |probs: &[f64], rng: &mut dyn rand::RngCore| -> usize {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return i;
                }
            }
            probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
        };
        let mut s = draw(&self.initial, rng);
        let (mut states, mut actions, mut ret) = (Vec::new(), Vec::new(), 0.0);
        for _ in 0..self.horizon {
            let sf = self.state_features(s);
            let a = draw(&policy.action_probs(&sf)?, rng);
            let row: Vec<f64> = (0..self.n_states).map(|k| self.p(s, a, k)).collect();
            let s2 = draw(&row, rng);
            ret += self.r(s, a, s2);
            states.push(sf);
            actions.push(self.action_features(a));
            s = s2;
            if self.terminal[s] {
                break;
            }
        }
        Trajectory::new(states, actions, ret)
    }
}

/// Bounds on what the oracle is willing to enumerate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnumerationLimits {
    pub max_horizon: usize,
    pub max_trajectories: u128,
}

impl Default for EnumerationLimits {
    fn default() -> Self {
        Self {
            max_horizon: 6,
            max_trajectories: 1_000_000,
        }
    }
}

/// A trajectory with its exact probability; `state_ids`/`action_ids` index the table.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedTrajectory {
    pub trajectory: Trajectory,
    pub probability: f64,
    pub state_ids: Vec<usize>,
    pub action_ids: Vec<usize>,
}

/// Policy probabilities and scores cached per (state, action).
struct PolicyTable {
    probs: Vec<Vec<f64>>,
    scores: Vec<Vec<Vec<f64>>>,
}

impl PolicyTable {
    fn build<P: DiscretePolicy>(mdp: &TabularMdp, policy: &P) -> Result<Self> {
        if policy.n_actions() != mdp.n_actions {
            return Err(Error::InvalidArgument(format!(
                "policy has {} actions, MDP has {}",
                policy.n_actions(),
                mdp.n_actions
            )));
        }
        let mut probs = Vec::with_capacity(mdp.n_states);
        let mut scores = Vec::with_capacity(mdp.n_states);
        for s in 0..mdp.n_states {
            let sf = mdp.state_features(s);
            probs.push(policy.action_probs(&sf)?);
            scores.push(
                (0..mdp.n_actions)
                    .map(|a| policy.grad_log_prob(&sf, &mdp.action_features(a)))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        Ok(Self { probs, scores })
    }
}

/// Number of trajectories with non-zero probability.
pub fn count_trajectories<P: DiscretePolicy>(mdp: &TabularMdp, policy: &P) -> Result<u128> {
    let table = PolicyTable::build(mdp, policy)?;
    Ok(count_with(mdp, &table))
}

fn count_with(mdp: &TabularMdp, table: &PolicyTable) -> u128 {
    // paths[s] = number of continuations from state s with `remaining` steps left
    let mut paths = vec![1u128; mdp.n_states];
    for _ in 0..mdp.horizon {
        let mut next = vec![0u128; mdp.n_states];
        for s in 0..mdp.n_states {
            let mut total = 0u128;
            for a in 0..mdp.n_actions {
                if table.probs[s][a] == 0.0 {
                    continue;
                }
                for s2 in 0..mdp.n_states {
                    if mdp.p(s, a, s2) > 0.0 {
                        total = total.saturating_add(if mdp.terminal[s2] { 1 } else { paths[s2] });
                    }
                }
            }
            next[s] = total;
        }
        paths = next;
    }
    (0..mdp.n_states)
        .filter(|&s| mdp.initial[s] > 0.0)
        .fold(0u128, |acc, s| acc.saturating_add(paths[s]))
}

pub fn enumerate<P: DiscretePolicy>(mdp: &TabularMdp, policy: &P) -> Result<Vec<WeightedTrajectory>> {
    enumerate_with_limits(mdp, policy, EnumerationLimits::default())
}

pub fn enumerate_with_limits<P: DiscretePolicy>(
    mdp: &TabularMdp,
    policy: &P,
    limits: EnumerationLimits,
) -> Result<Vec<WeightedTrajectory>> {
    mdp.validate()?;
    if mdp.horizon > limits.max_horizon {
        return Err(Error::InvalidArgument(format!(
            "horizon {} exceeds enumeration cap {}",
            mdp.horizon, limits.max_horizon
        )));
    }
    let table = PolicyTable::build(mdp, policy)?;
    let count = count_with(mdp, &table);
    if count > limits.max_trajectories {
        return Err(Error::EnumerationTooLarge {
            count,
            limit: limits.max_trajectories,
        });
    }
    let mut out = Vec::with_capacity(count as usize);
    let mut states = Vec::new();
    let mut actions = Vec::new();
    for s0 in 0..mdp.n_states {
        if mdp.initial[s0] > 0.0 {
            walk(mdp, &table, s0, mdp.initial[s0], 0.0, &mut states, &mut actions, &mut out)?;
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn walk(
    mdp: &TabularMdp,
    table: &PolicyTable,
    s: usize,
    prob: f64,
    ret: f64,
    states: &mut Vec<usize>,
    actions: &mut Vec<usize>,
    out: &mut Vec<WeightedTrajectory>,
) -> Result<()> {
    for a in 0..mdp.n_actions {
        let pa = table.probs[s][a];
        if pa == 0.0 {
            continue;
        }
        for s2 in 0..mdp.n_states {
            let ps = mdp.p(s, a, s2);
            if ps == 0.0 {
                continue;
            }
            states.push(s);
            actions.push(a);
            let p = prob * pa * ps;
            let r = ret + mdp.r(s, a, s2);
            if mdp.terminal[s2] || states.len() == mdp.horizon {
                let trajectory = Trajectory::new(
                    states.iter().map(|&k| mdp.state_features(k)).collect(),
                    actions.iter().map(|&k| mdp.action_features(k)).collect(),
                    r,
                )?;
                out.push(WeightedTrajectory {
                    trajectory,
                    probability: p,
                    state_ids: states.clone(),
                    action_ids: actions.clone(),
                });
            } else {
                walk(mdp, table, s2, p, r, states, actions, out)?;
            }
            states.pop();
            actions.pop();
        }
    }
    Ok(())
}

/// An expectation computed by summing over every trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactExpectation {
    pub value: Vec<f64>,
    /// Sum of the enumerated probabilities (should be 1 up to rounding).
    pub total_probability: f64,
}

/// `Σ_τ p(τ) f(τ)` in enumeration order.
pub fn expectation(
    trajectories: &[WeightedTrajectory],
    mut f: impl FnMut(&WeightedTrajectory) -> Result<Vec<f64>>,
) -> Result<ExactExpectation> {
    let mut value: Vec<f64> = Vec::new();
    let mut total_probability = 0.0;
    for wt in trajectories {
        let v = f(wt)?;
        if value.is_empty() {
            value = vec![0.0; v.len()];
        }
        for (acc, x) in value.iter_mut().zip(&v) {
            *acc += wt.probability * x;
        }
        total_probability += wt.probability;
    }
    Ok(ExactExpectation {
        value,
        total_probability,
    })
}

fn scores_of(table: &PolicyTable, wt: &WeightedTrajectory) -> Vec<Vec<f64>> {
    wt.state_ids
        .iter()
        .zip(&wt.action_ids)
        .map(|(&s, &a)| table.scores[s][a].clone())
        .collect()
}

/// `J(θ) = E[R(τ)]`.
pub fn exact_j<P: DiscretePolicy>(mdp: &TabularMdp, policy: &P) -> Result<f64> {
    let all = enumerate(mdp, policy)?;
    Ok(expectation(&all, |wt| Ok(vec![wt.trajectory.episodic_return]))?.value[0])
}

/// `∇J(θ) = E[R(τ) Σ_t ∇log π(a_t|s_t)]`.
pub fn exact_grad_j<P: DiscretePolicy>(mdp: &TabularMdp, policy: &P) -> Result<ExactExpectation> {
    let table = PolicyTable::build(mdp, policy)?;
    let all = enumerate(mdp, policy)?;
    expectation(&all, |wt| {
        let set = IntervalSet::new(IntervalKind::Singletons, wt.trajectory.len());
        let d = RewardDecomposition::zero(wt.trajectory.len(), wt.trajectory.episodic_return);
        per_sample(EstimatorForm::LikelihoodRatio, &d, &set, &scores_of(&table, wt))
    })
}

/// Central finite differences of the exact `J(θ)`.
pub fn finite_difference_grad_j<P: DiscretePolicy>(mdp: &TabularMdp, policy: &P, h: f64) -> Result<Vec<f64>> {
    let theta = policy.params_flat();
    let mut p = policy.clone();
    let mut grad = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let mut t = theta.clone();
        t[i] = theta[i] + h;
        p.set_params_flat(&t)?;
        let up = exact_j(mdp, &p)?;
        t[i] = theta[i] - h;
        p.set_params_flat(&t)?;
        let down = exact_j(mdp, &p)?;
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

pub const IDENTITY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub identity: String,
    pub max_abs_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// `(max(α), t)` of the worst violation, for checks indexed by interval and step.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worst: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub mdp: String,
    pub interval_kind: IntervalKind,
    pub trajectories: usize,
    pub total_probability: f64,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

impl VerificationReport {
    pub fn failed_checks(&self) -> impl Iterator<Item = &CheckResult> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn max_abs(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

fn check(name: &str, identity: &str, err: f64, worst: Option<(usize, usize)>) -> CheckResult {
    CheckResult {
        name: name.into(),
        identity: identity.into(),
        max_abs_error: err,
        tolerance: IDENTITY_TOLERANCE,
        passed: err <= IDENTITY_TOLERANCE,
        worst,
    }
}

/// Exact checks of the interval policy-gradient identities for a fixed
/// decomposition `reward_fn` (which must return one value per interval):
///
/// * `score_orthogonality` — `E[r̂_α ∇log π(a_t|s_t)] = 0` for every `t > max(α)`;
/// * `interval_form_matches_q_form` — the per-interval and generalized-Q forms agree in expectation;
/// * `residual_corrected_is_unbiased` — the residual-corrected form's expectation equals `∇J`;
/// * `control_variate_is_unbiased` — same for the control-variate form;
/// * `control_variate_zero_mean` — `E[r̂_¬t ∇log π(a_t|s_t)] = 0` for every `t`.
pub fn verify_decomposition_identities<P, F>(
    name: &str,
    mdp: &TabularMdp,
    policy: &P,
    mut reward_fn: F,
    kind: IntervalKind,
    rule: TailRule,
) -> Result<VerificationReport>
where
    P: DiscretePolicy,
    F: FnMut(&Trajectory) -> Result<Vec<f64>>,
{
    let table = PolicyTable::build(mdp, policy)?;
    let all = enumerate(mdp, policy)?;
    let p = policy.num_params();
    let horizon = mdp.horizon;

    let mut grad_j = vec![0.0; p];
    let mut interval_form = vec![0.0; p];
    let mut q_form = vec![0.0; p];
    let mut corrected = vec![0.0; p];
    let mut cv = vec![0.0; p];
    // orth[k][t] = E[r̂_{α: max=k} g_t], cvzero[t] = E[r̂_¬t g_t]
    let mut orth = vec![vec![vec![0.0; p]; horizon]; horizon];
    let mut cvzero = vec![vec![0.0; p]; horizon];
    let mut total_probability = 0.0;
    let mut cache: HashMap<Vec<usize>, Vec<f64>> = HashMap::new();

    for wt in &all {
        let traj = &wt.trajectory;
        let len = traj.len();
        let key: Vec<usize> = wt.state_ids.iter().chain(&wt.action_ids).copied().chain([len]).collect();
        let values = match cache.get(&key) {
            Some(v) => v.clone(),
            None => {
                let v = reward_fn(traj)?;
                cache.insert(key, v.clone());
                v
            }
        };
        if values.len() != len {
            return Err(Error::LengthMismatch {
                context: "decomposition values",
                expected: len,
                actual: values.len(),
            });
        }
        let d = RewardDecomposition::new(values, traj.episodic_return);
        let set = IntervalSet::new(kind, len);
        let scores = scores_of(&table, wt);
        let w = wt.probability;
        total_probability += w;

        let acc = |dst: &mut [f64], src: &[f64]| {
            for (x, y) in dst.iter_mut().zip(src) {
                *x += w * y;
            }
        };
        acc(&mut grad_j, &per_sample(EstimatorForm::LikelihoodRatio, &d, &set, &scores)?);
        acc(&mut interval_form, &per_sample(EstimatorForm::PerInterval, &d, &set, &scores)?);
        acc(&mut q_form, &per_sample_with(EstimatorForm::GeneralizedQ, &d, &set, &scores, rule)?);
        acc(&mut corrected, &per_sample_with(EstimatorForm::ResidualCorrected, &d, &set, &scores, rule)?);
        acc(&mut cv, &per_sample(EstimatorForm::ControlVariate, &d, &set, &scores)?);

        for (iv, &r) in set.intervals().iter().zip(&d.per_interval) {
            for t in iv.max + 1..len {
                let g: Vec<f64> = scores[t].iter().map(|x| r * x).collect();
                for (x, y) in orth[iv.max][t].iter_mut().zip(&g) {
                    *x += w * y;
                }
            }
        }
        let rnot = crate::interval_pg::r_not_t(&d, &set)?;
        for t in 0..len {
            for (x, y) in cvzero[t].iter_mut().zip(&scores[t]) {
                *x += w * rnot[t] * y;
            }
        }
    }

    let mut worst_orth = (0.0, None);
    for k in 0..horizon {
        for t in k + 1..horizon {
            let m = max_abs(&orth[k][t]);
            if m > worst_orth.0 || worst_orth.1.is_none() {
                worst_orth = (m, Some((k, t)));
            }
        }
    }
    let mut worst_cv = (0.0, None);
    for (t, v) in cvzero.iter().enumerate() {
        let m = max_abs(v);
        if m > worst_cv.0 || worst_cv.1.is_none() {
            worst_cv = (m, Some((t, t)));
        }
    }

    let checks = vec![
        check(
            "score_orthogonality",
            "E[r(alpha) * grad log pi(a_t|s_t)] = 0 for t > max(alpha)",
            worst_orth.0,
            worst_orth.1,
        ),
        check(
            "interval_form_matches_q_form",
            "sum_alpha E[r(alpha) sum_{t<=max(alpha)} grad log pi] = E[sum_t Q_t grad log pi]",
            max_abs_diff(&interval_form, &q_form),
            None,
        ),
        check(
            "residual_corrected_is_unbiased",
            "E[r_0 sum_t grad log pi + sum_t Q_t grad log pi] = grad J",
            max_abs_diff(&corrected, &grad_j),
            None,
        ),
        check(
            "control_variate_is_unbiased",
            "E[sum_t (R - r_not_t) grad log pi] = grad J",
            max_abs_diff(&cv, &grad_j),
            None,
        ),
        check(
            "control_variate_zero_mean",
            "E[r_not_t * grad log pi(a_t|s_t)] = 0 for every t",
            worst_cv.0,
            worst_cv.1.map(|(t, _)| (t, t)),
        ),
    ];
    let passed = checks.iter().all(|c| c.passed) && (total_probability - 1.0).abs() <= 1e-10;
    Ok(VerificationReport {
        mdp: name.into(),
        interval_kind: kind,
        trajectories: all.len(),
        total_probability,
        checks,
        passed,
    })
}

/// Names accepted by [`builtin_mdp`].
pub const BUILTIN_MDPS: [&str; 4] = ["chain3", "slip3", "random3", "coin2"];

/// Small MDPs used by the verification command and the acceptance suite.
pub fn builtin_mdp(name: &str) -> Result<TabularMdp> {
    use rand::SeedableRng;
    let mdp = match name {
        // Deterministic 3-state chain, goal on the right ends the episode.
        "chain3" => {
            use crate::envs::{ChainMdp, Environment};
            ChainMdp::new(3, 3)?.tabular().expect("chain is tabular")
        }
        // Chain whose moves slip with probability 0.25; small step cost, +1 at the goal.
        "slip3" => {
            let (n, na) = (3, 2);
            let mut transitions = vec![0.0; n * na * n];
            let mut rewards = vec![0.0; n * na * n];
            for s in 0..n {
                for a in 0..na {
                    let intended = if a == 1 { (s + 1).min(n - 1) } else { s.saturating_sub(1) };
                    let slipped = if a == 1 { s.saturating_sub(1) } else { (s + 1).min(n - 1) };
                    transitions[(s * na + a) * n + intended] += 0.75;
                    transitions[(s * na + a) * n + slipped] += 0.25;
                    for s2 in 0..n {
                        rewards[(s * na + a) * n + s2] = if s2 == n - 1 { 1.0 } else { -0.1 };
                    }
                }
            }
            TabularMdp {
                n_states: n,
                n_actions: na,
                horizon: 4,
                transitions,
                rewards,
                initial: one_hot(0, n),
                terminal: vec![false, false, true],
            }
        }
        // Random dense dynamics and rewards, random start, no terminals.
        "random3" => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0x5eed_0003);
            let (n, na) = (3, 2);
            let mut transitions = Vec::with_capacity(n * na * n);
            for _ in 0..n * na {
                let row: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
                let z: f64 = row.iter().sum();
                transitions.extend(row.into_iter().map(|x| x / z));
            }
            let rewards = (0..n * na * n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let init: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..1.0)).collect();
            let z: f64 = init.iter().sum();
            TabularMdp {
                n_states: n,
                n_actions: na,
                horizon: 4,
                transitions,
                rewards,
                initial: init.into_iter().map(|x| x / z).collect(),
                terminal: vec![false; n],
            }
        }
        // Two states, uniform transitions, action-dependent reward.
        "coin2" => {
            let (n, na) = (2, 2);
            let transitions = vec![0.5; n * na * n];
            let mut rewards = vec![0.0; n * na * n];
            for s in 0..n {
                for s2 in 0..n {
                    rewards[(s * na + 1) * n + s2] = if s == s2 { 1.0 } else { 0.5 };
                    rewards[(s * na) * n + s2] = -0.25;
                }
            }
            TabularMdp {
                n_states: n,
                n_actions: na,
                horizon: 3,
                transitions,
                rewards,
                initial: vec![0.5, 0.5],
                terminal: vec![false; n],
            }
        }
        other => {
            return Err(Error::InvalidArgument(format!(
                "unknown builtin MDP {other:?}; expected one of {BUILTIN_MDPS:?}"
            )))
        }
    };
    mdp.validate()?;
    Ok(mdp)
}

/// Value of the initial state distribution by backward dynamic programming.
pub fn dp_expected_return<P: DiscretePolicy>(mdp: &TabularMdp, policy: &P) -> Result<f64> {
    // v[s] = expected return-to-go from s with k steps remaining
    let mut v = vec![0.0; mdp.n_states];
    for _ in 0..mdp.horizon {
        let mut next = vec![0.0; mdp.n_states];
        for s in 0..mdp.n_states {
            let probs = policy.action_probs(&mdp.state_features(s))?;
            let mut total = 0.0;
            for (a, pa) in probs.iter().enumerate() {
                for s2 in 0..mdp.n_states {
                    let ps = mdp.p(s, a, s2);
                    let cont = if mdp.terminal[s2] { 0.0 } else { v[s2] };
                    total += pa * ps * (mdp.r(s, a, s2) + cont);
                }
            }
            next[s] = total;
        }
        v = next;
    }
    Ok((0..mdp.n_states).map(|s| mdp.initial[s] * v[s]).sum())
}

/// Runs [`verify_decomposition_identities`] against `count` freshly initialized
/// decomposers (cycling through the architectures) under a random softmax
/// policy. Each decomposer's output is shifted and rescaled at random, so most
/// of them fit the return badly; the identities must hold regardless.
pub fn verify_with_random_decomposers(
    name: &str,
    mdp: &TabularMdp,
    count: usize,
    seed: u64,
    rule: TailRule,
) -> Result<Vec<VerificationReport>> {
    use crate::decomposer::{Architecture, Decomposer, DecomposerConfig, Normalizer, Widths};
    use crate::policy::TabularSoftmax;
    use rand::SeedableRng;

    mdp.validate()?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::with_capacity(count);
    for i in 0..count {
        let policy = TabularSoftmax::random(mdp.n_states, mdp.n_actions, 1.5, &mut rng);
        let arch = Architecture::ALL[i % Architecture::ALL.len()];
        let mut model = Decomposer::new(
            DecomposerConfig::with_widths(arch, Widths::tiny()),
            mdp.n_states + mdp.n_actions,
            &mut rng,
        )?;
        model.set_normalizer(Normalizer {
            mean: rng.random_range(-3.0..3.0),
            std: rng.random_range(0.5..8.0),
        });
        let kind = model.intervals();
        let label = format!("{name}#{i}:{}", arch.label());
        let reward_fn = |t: &Trajectory| Ok(model.predict(t, &IntervalSet::new(kind, t.len()))?.per_interval);
        reports.push(verify_decomposition_identities(&label, mdp, &policy, reward_fn, kind, rule)?);
    }
    Ok(reports)
}
