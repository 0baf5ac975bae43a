use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Optimizer, ParamSet, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::policy::{MlpPolicy, ValueModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpoConfig {
    /// Environment steps collected per iteration.
    pub batch_steps: usize,
    pub minibatch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub value_lr: f64,
    pub clip: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub normalize_advantages: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            batch_steps: 2048,
            minibatch: 64,
            epochs: 5,
            lr: 1e-4,
            value_lr: 1e-4,
            clip: 0.2,
            gamma: 0.99,
            lambda: 0.95,
            normalize_advantages: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |x: f64| x.is_finite() && x > 0.0;
        if !(positive(self.lr) && positive(self.value_lr)) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(Error::Config(format!("clip range {} outside (0, 1)", self.clip)));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config("gamma and lambda must lie in [0, 1]".into()));
        }
        if self.batch_steps == 0 || self.minibatch == 0 || self.epochs == 0 {
            return Err(Error::Config("batch sizes and epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Flattened on-policy steps.
#[derive(Debug, Clone, Default)]
pub struct StepBatch {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    /// `value_targets[i][h]`.
    pub value_targets: Vec<Vec<f64>>,
}

impl StepBatch {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub clip_fraction: f64,
}

/// `-mean(min(ρ A, clip(ρ, 1-ε, 1+ε) A))` with `ρ = exp(log π - log π_old)`.
pub fn clipped_surrogate(
    tape: &mut Tape,
    log_probs: Var,
    old_log_probs: &[f64],
    advantages: &[f64],
    clip: f64,
) -> Result<Var> {
    let m = old_log_probs.len();
    let old = tape.leaf(Tensor::new(vec![m, 1], old_log_probs.to_vec())?);
    let adv = tape.leaf(Tensor::new(vec![m, 1], advantages.to_vec())?);
    let diff = tape.sub(log_probs, old)?;
    let ratio = tape.exp(diff);
    let unclipped = tape.mul(ratio, adv)?;
    let clipped = tape.clamp(ratio, 1.0 - clip, 1.0 + clip);
    let clipped = tape.mul(clipped, adv)?;
    let surrogate = tape.minimum(unclipped, clipped)?;
    let mean = tape.mean(surrogate);
    Ok(tape.scale(mean, -1.0))
}

fn rows(src: &[Vec<f64>], idx: &[usize]) -> Result<Tensor> {
    Tensor::from_rows(&idx.iter().map(|&i| src[i].clone()).collect::<Vec<_>>())
}

/// Epochs of shuffled minibatch updates. On a non-finite loss or gradient all
/// parameters and optimizer states are restored and the error is returned.
pub fn ppo_update(
    policy: &mut MlpPolicy,
    value: &mut ValueModel,
    policy_opt: &mut Optimizer,
    value_opt: &mut Optimizer,
    batch: &StepBatch,
    cfg: &PpoConfig,
    rng: &mut impl Rng,
) -> Result<PpoStats> {
    let saved = (policy.clone(), value.clone(), policy_opt.clone(), value_opt.clone());
    let result = run_epochs(policy, value, policy_opt, value_opt, batch, cfg, rng);
    if result.is_err() {
        *policy = saved.0;
        *value = saved.1;
        *policy_opt = saved.2;
        *value_opt = saved.3;
    }
    result
}

fn run_epochs(
    policy: &mut MlpPolicy,
    value: &mut ValueModel,
    policy_opt: &mut Optimizer,
    value_opt: &mut Optimizer,
    batch: &StepBatch,
    cfg: &PpoConfig,
    rng: &mut impl Rng,
) -> Result<PpoStats> {
    if batch.is_empty() {
        return Err(Error::EmptyBuffer);
    }
    let mut advantages = batch.advantages.clone();
    if cfg.normalize_advantages {
        super::advantage::normalize(&mut advantages);
    }
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut stats = PpoStats::default();
    let mut updates = 0usize;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for idx in order.chunks(cfg.minibatch) {
            let states = rows(&batch.states, idx)?;
            let actions = rows(&batch.actions, idx)?;
            let old: Vec<f64> = idx.iter().map(|&i| batch.old_log_probs[i]).collect();
            let adv: Vec<f64> = idx.iter().map(|&i| advantages[i]).collect();

            let mut tape = Tape::new();
            let vars = policy.params().register(&mut tape);
            let s = tape.leaf(states.clone());
            let lp = policy.log_probs(&mut tape, &vars, s, &actions)?;
            let ratio_check = tape.value(lp).data().to_vec();
            let loss = clipped_surrogate(&mut tape, lp, &old, &adv, cfg.clip)?;
            let policy_loss = tape.value(loss).item();
            if !policy_loss.is_finite() {
                return Err(Error::NonFinite(format!("policy loss {policy_loss}")));
            }
            let grads = tape.backward(loss)?;
            policy_opt.step(policy.params_mut(), &ParamSet::flat_grad(&grads, &vars))?;
            let clipped = ratio_check
                .iter()
                .zip(&old)
                .filter(|(lp, o)| ((*lp - *o).exp() - 1.0).abs() > cfg.clip)
                .count();

            let mut tape = Tape::new();
            let vars = value.params().register(&mut tape);
            let s = tape.leaf(states);
            let pred = value.forward(&mut tape, &vars, s)?;
            let targets = rows(&batch.value_targets, idx)?;
            let t = tape.leaf(targets);
            let diff = tape.sub(pred, t)?;
            let sq = tape.square(diff);
            let per_row = tape.sum_cols(sq);
            let vloss = tape.mean(per_row);
            let value_loss = tape.value(vloss).item();
            if !value_loss.is_finite() {
                return Err(Error::NonFinite(format!("value loss {value_loss}")));
            }
            let grads = tape.backward(vloss)?;
            value_opt.step(value.params_mut(), &ParamSet::flat_grad(&grads, &vars))?;

            stats.policy_loss += policy_loss;
            stats.value_loss += value_loss;
            stats.clip_fraction += clipped as f64 / idx.len() as f64;
            updates += 1;
        }
    }
    let n = updates as f64;
    stats.policy_loss /= n;
    stats.value_loss /= n;
    stats.clip_fraction /= n;
    Ok(stats)
}
