//! Policies and value networks.
//!
//! [`MlpPolicy`] is the trainer's policy: a two-hidden-layer `tanh` network
//! producing categorical logits or a Gaussian mean with a global log-std
//! vector. [`TabularSoftmax`] is a per-state softmax with closed-form scores,
//! used by the exact-enumeration oracle.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamSet, Tape, Tensor, Var};
use crate::envs::{Action, ActionSpace};
use crate::error::{Error, Result};
use crate::nn::Mlp;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Anything that exposes `∇θ log π(a|s)` over a flat parameter vector.
pub trait ScorePolicy {
    fn num_params(&self) -> usize;
    fn log_prob(&self, state: &[f64], action: &[f64]) -> Result<f64>;
    /// `∇θ log π(a|s)`; `action` is given as trajectory features (one-hot if discrete).
    fn grad_log_prob(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>>;
}

/// Policy over a finite action set with a settable parameter vector.
pub trait DiscretePolicy: ScorePolicy + Clone {
    fn n_actions(&self) -> usize;
    fn action_probs(&self, state: &[f64]) -> Result<Vec<f64>>;
    fn params_flat(&self) -> Vec<f64>;
    fn set_params_flat(&mut self, flat: &[f64]) -> Result<()>;
}

fn argmax(x: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if v > x[best] {
            best = i;
        }
    }
    best
}

/// Softmax policy with one logit per (state, action); states are one-hot features.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularSoftmax {
    n_states: usize,
    n_actions: usize,
    logits: Vec<f64>,
}

impl TabularSoftmax {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            logits: vec![0.0; n_states * n_actions],
        }
    }

    pub fn from_logits(n_states: usize, n_actions: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != n_states * n_actions {
            return Err(Error::LengthMismatch {
                context: "tabular logits",
                expected: n_states * n_actions,
                actual: logits.len(),
            });
        }
        Ok(Self {
            n_states,
            n_actions,
            logits,
        })
    }

    pub fn random(n_states: usize, n_actions: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let logits = (0..n_states * n_actions).map(|_| rng.random_range(-scale..scale)).collect();
        Self {
            n_states,
            n_actions,
            logits,
        }
    }

    fn probs_for(&self, s: usize) -> Vec<f64> {
        let row = &self.logits[s * self.n_actions..(s + 1) * self.n_actions];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|x| (x - max).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|x| x / z).collect()
    }

    fn state_index(&self, state: &[f64]) -> Result<usize> {
        if state.len() != self.n_states {
            return Err(Error::LengthMismatch {
                context: "tabular state features",
                expected: self.n_states,
                actual: state.len(),
            });
        }
        Ok(argmax(state))
    }
}

impl ScorePolicy for TabularSoftmax {
    fn num_params(&self) -> usize {
        self.logits.len()
    }

    fn log_prob(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        let s = self.state_index(state)?;
        Ok(self.probs_for(s)[argmax(action)].ln())
    }

    fn grad_log_prob(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        let s = self.state_index(state)?;
        let a = argmax(action);
        let p = self.probs_for(s);
        let mut g = vec![0.0; self.logits.len()];
        for (b, pb) in p.iter().enumerate() {
            g[s * self.n_actions + b] = if b == a { 1.0 - pb } else { -pb };
        }
        Ok(g)
    }
}

impl DiscretePolicy for TabularSoftmax {
    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn action_probs(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(self.probs_for(self.state_index(state)?))
    }

    fn params_flat(&self) -> Vec<f64> {
        self.logits.clone()
    }

    fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.logits.len() {
            return Err(Error::LengthMismatch {
                context: "tabular logits",
                expected: self.logits.len(),
                actual: flat.len(),
            });
        }
        self.logits.copy_from_slice(flat);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub hidden: [usize; 2],
    /// Initial value of every log-std entry (continuous actions only).
    pub init_log_std: f64,
    /// Scale of the output layer's initial weights.
    pub out_scale: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            hidden: [64, 64],
            init_log_std: 0.0,
            out_scale: 0.01,
        }
    }
}

/// Two-hidden-layer `tanh` MLP policy.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpPolicy {
    state_dim: usize,
    space: ActionSpace,
    params: ParamSet,
    net: Mlp,
    log_std: Option<usize>,
}

impl MlpPolicy {
    pub fn new(state_dim: usize, space: ActionSpace, cfg: &PolicyConfig, rng: &mut impl Rng) -> Self {
        let mut params = ParamSet::new();
        let out = space.feature_dim();
        let net = Mlp::init(
            &mut params,
            "policy",
            &[state_dim, cfg.hidden[0], cfg.hidden[1], out],
            cfg.out_scale,
            rng,
        );
        let log_std = match space {
            ActionSpace::Continuous(d) => {
                Some(params.push("policy.log_std", Tensor::full(&[1, d], cfg.init_log_std)))
            }
            ActionSpace::Discrete(_) => None,
        };
        Self {
            state_dim,
            space,
            params,
            net,
            log_std,
        }
    }

    pub fn action_space(&self) -> ActionSpace {
        self.space
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Log-probabilities `[m, 1]` of `actions` (trajectory features, `[m, d_a]`) at `states` (`[m, d_s]`).
    pub fn log_probs(&self, tape: &mut Tape, vars: &[Var], states: Var, actions: &Tensor) -> Result<Var> {
        let out = self.net.forward(tape, vars, states)?;
        match self.space {
            ActionSpace::Discrete(_) => {
                let (m, _) = actions.dims2();
                let idx: Vec<usize> = (0..m).map(|i| argmax(actions.row_slice(i))).collect();
                let lsm = tape.log_softmax(out);
                tape.gather(lsm, &idx)
            }
            ActionSpace::Continuous(d) => {
                let log_std = vars[self.log_std.expect("continuous policy has log_std")];
                let a = tape.leaf(actions.clone());
                let diff = tape.sub(a, out)?;
                let neg = tape.scale(log_std, -1.0);
                let inv_std = tape.exp(neg);
                let z = tape.mul(diff, inv_std)?;
                let z2 = tape.square(z);
                let quad = tape.sum_cols(z2);
                let quad = tape.scale(quad, -0.5);
                let ls = tape.sum(log_std);
                let lp = tape.sub(quad, ls)?;
                Ok(tape.add_scalar(lp, -0.5 * d as f64 * LN_2PI))
            }
        }
    }

    /// Draws an action; returns it with its log-probability.
    pub fn sample(&self, state: &[f64], rng: &mut impl Rng) -> Result<(Action, f64)> {
        let x = Tensor::row(state);
        let out = self.net.eval(&self.params, &x)?;
        match self.space {
            ActionSpace::Discrete(n) => {
                let probs = softmax_row(out.data());
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut choice = n - 1;
                for (i, p) in probs.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        choice = i;
                        break;
                    }
                }
                Ok((Action::Discrete(choice), probs[choice].ln()))
            }
            ActionSpace::Continuous(d) => {
                let log_std = self.params.get(self.log_std.unwrap()).data();
                let mut a = Vec::with_capacity(d);
                let mut lp = -0.5 * d as f64 * LN_2PI;
                for i in 0..d {
                    let z: f64 = StandardNormal.sample(rng);
                    a.push(out.data()[i] + log_std[i].exp() * z);
                    lp += -0.5 * z * z - log_std[i];
                }
                Ok((Action::Continuous(a), lp))
            }
        }
    }

    /// Gradient of `Σ_i w_i log π(a_i|s_i)` over a batch of steps.
    pub fn weighted_score(&self, states: &[Vec<f64>], actions: &[Vec<f64>], weights: &[f64]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape);
        let s = tape.leaf(Tensor::from_rows(states)?);
        let lp = self.log_probs(&mut tape, &vars, s, &Tensor::from_rows(actions)?)?;
        let w = tape.leaf(Tensor::new(vec![weights.len(), 1], weights.to_vec())?);
        let wl = tape.mul(lp, w)?;
        let total = tape.sum(wl);
        let grads = tape.backward(total)?;
        Ok(ParamSet::flat_grad(&grads, &vars))
    }
}

pub(crate) fn softmax_row(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

impl ScorePolicy for MlpPolicy {
    fn num_params(&self) -> usize {
        self.params.numel()
    }

    fn log_prob(&self, state: &[f64], action: &[f64]) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.params.register(&mut tape);
        let s = tape.leaf(Tensor::row(state));
        let lp = self.log_probs(&mut tape, &vars, s, &Tensor::row(action))?;
        Ok(tape.value(lp).item())
    }

    fn grad_log_prob(&self, state: &[f64], action: &[f64]) -> Result<Vec<f64>> {
        self.weighted_score(&[state.to_vec()], &[action.to_vec()], &[1.0])
    }
}

impl DiscretePolicy for MlpPolicy {
    fn n_actions(&self) -> usize {
        self.space.feature_dim()
    }

    fn action_probs(&self, state: &[f64]) -> Result<Vec<f64>> {
        if !matches!(self.space, ActionSpace::Discrete(_)) {
            return Err(Error::InvalidArgument("action_probs on a continuous policy".into()));
        }
        let out = self.net.eval(&self.params, &Tensor::row(state))?;
        Ok(softmax_row(out.data()))
    }

    fn params_flat(&self) -> Vec<f64> {
        self.params.flat()
    }

    fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        self.params.set_flat(flat)
    }
}

/// Value network with one output per advantage stream.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueModel {
    params: ParamSet,
    net: Mlp,
    heads: usize,
}

impl ValueModel {
    pub fn new(state_dim: usize, hidden: [usize; 2], heads: usize, rng: &mut impl Rng) -> Self {
        let mut params = ParamSet::new();
        let net = Mlp::init(&mut params, "value", &[state_dim, hidden[0], hidden[1], heads], 1.0, rng);
        Self { params, net, heads }
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// `[m, heads]` value estimates.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], states: Var) -> Result<Var> {
        self.net.forward(tape, vars, states)
    }

    /// Values for each state, one vector per head.
    pub fn predict(&self, states: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let out = self.net.eval(&self.params, &Tensor::from_rows(states)?)?;
        let (m, h) = out.dims2();
        Ok((0..h).map(|k| (0..m).map(|i| out.get2(i, k)).collect()).collect())
    }
}
