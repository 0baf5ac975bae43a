//! The training loop: roll out, store, fit the reward model, update the policy.

mod advantage;
pub mod metrics;
mod ppo;
mod rollout;

use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use advantage::{compute_advantages, gae, normalize, stream_rewards, AdvantageSpec, TrajectoryAdvantages, ValueHeads};
pub use metrics::{MetricsRow, MetricsSink, METRICS_COLUMNS};
pub use ppo::{clipped_surrogate, ppo_update, PpoConfig, PpoStats, StepBatch};
pub use rollout::{rollout, rollout_episodes, run_episode, Rollout};

use crate::autodiff::{checkpoint, Optimizer, OptimizerKind, Tensor};
use crate::buffers::{BufferConfig, BufferScheme, ReplayBuffer};
use crate::decomposer::{Architecture, Decomposer, DecomposerConfig};
use crate::envs::{EnvSpec, EpisodicWrapper};
use crate::error::{Error, Result};
use crate::interval_pg::{step_coefficients, summarize, EstimatorForm, TailRule};
use crate::policy::{MlpPolicy, PolicyConfig, ValueModel};
use crate::trajectory::{IntervalSet, RewardDecomposition, Trajectory};

/// How per-step credit is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Learned decomposition of the episodic return.
    Decomposed,
    /// Plain PPO on the episodic reward (the whole return paid at the last step).
    Episodic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub env: EnvSpec,
    pub method: Method,
    /// Add the residual stream (`R - R̂` at the final step) to the advantages.
    pub bias_correction: bool,
    pub decomposer: DecomposerConfig,
    pub buffer: BufferConfig,
    pub policy: PolicyConfig,
    pub ppo: PpoConfig,
    pub value_heads: ValueHeads,
    /// Regression passes over one buffer sample per iteration.
    pub regression_epochs: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Reference hyper-parameters with the full method (attention, HO buffer, bias correction).
    pub fn new(env: EnvSpec) -> Self {
        Self {
            env,
            method: Method::Decomposed,
            bias_correction: true,
            decomposer: DecomposerConfig::full(Architecture::Attention),
            buffer: BufferConfig::new(BufferScheme::HistoricalOnline),
            policy: PolicyConfig::default(),
            ppo: PpoConfig::default(),
            value_heads: ValueHeads::Split,
            regression_epochs: 5,
            iterations: 100,
            seed: 0,
        }
    }

    pub fn episodic_baseline(env: EnvSpec) -> Self {
        Self {
            method: Method::Episodic,
            ..Self::new(env)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.ppo.validate()?;
        self.buffer.validate()?;
        self.decomposer.validate()?;
        self.env.build()?;
        if self.regression_epochs == 0 && self.method == Method::Decomposed {
            return Err(Error::Config("regression_epochs must be positive".into()));
        }
        Ok(())
    }

    /// Estimator whose per-step coefficients the advantages reduce to at γ = λ = 1.
    pub fn estimator_form(&self) -> EstimatorForm {
        match (self.method, self.bias_correction) {
            (Method::Episodic, _) => EstimatorForm::LikelihoodRatio,
            (Method::Decomposed, true) => EstimatorForm::ResidualCorrected,
            (Method::Decomposed, false) => EstimatorForm::GeneralizedQ,
        }
    }

    fn advantage_spec(&self) -> AdvantageSpec {
        AdvantageSpec {
            gamma: self.ppo.gamma,
            lambda: self.ppo.lambda,
            residual: self.method == Method::Episodic || self.bias_correction,
            heads: self.value_heads,
        }
    }
}

/// Mutable training state; everything needed to resume.
pub struct Trainer {
    config: TrainConfig,
    env: EpisodicWrapper,
    pub policy: MlpPolicy,
    pub value: ValueModel,
    pub decomposer: Option<Decomposer>,
    pub buffer: ReplayBuffer,
    policy_opt: Optimizer,
    value_opt: Optimizer,
    rng: ChaCha8Rng,
    iteration: u64,
    env_steps: u64,
    nonfinite_events: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TrainerState {
    config: TrainConfig,
    iteration: u64,
    env_steps: u64,
    nonfinite_events: u64,
    rng: ChaCha8Rng,
    policy_opt: Optimizer,
    value_opt: Optimizer,
    decomposer_opt: Option<Optimizer>,
}

/// Summary of a finished (or interrupted) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub iterations: u64,
    pub env_steps: u64,
    pub nonfinite_events: u64,
    pub final_return_mean: Option<f64>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let env = EpisodicWrapper::new(config.env.build()?);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let state_dim = env.inner().state_dim();
        let space = env.inner().action_space();
        let policy = MlpPolicy::new(state_dim, space, &config.policy, &mut rng);
        let value = ValueModel::new(state_dim, config.policy.hidden, config.value_heads.count(), &mut rng);
        let decomposer = match config.method {
            Method::Decomposed => Some(Decomposer::new(
                config.decomposer.clone(),
                state_dim + space.feature_dim(),
                &mut rng,
            )?),
            Method::Episodic => None,
        };
        let buffer = ReplayBuffer::new(config.buffer, config.seed ^ 0x9e37_79b9_7f4a_7c15)?;
        let policy_opt = Optimizer::new(OptimizerKind::Adam, config.ppo.lr, policy.params().numel());
        let value_opt = Optimizer::new(OptimizerKind::Adam, config.ppo.value_lr, value.params().numel());
        Ok(Self {
            config,
            env,
            policy,
            value,
            decomposer,
            buffer,
            policy_opt,
            value_opt,
            rng,
            iteration: 0,
            env_steps: 0,
            nonfinite_events: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Changes the total iteration budget (used when extending a resumed run).
    pub fn set_iterations(&mut self, iterations: usize) {
        self.config.iterations = iterations;
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn env_steps(&self) -> u64 {
        self.env_steps
    }

    pub fn nonfinite_events(&self) -> u64 {
        self.nonfinite_events
    }

    /// Decompositions (in return units) used for the policy gradient.
    pub fn decompose(&self, batch: &[&Trajectory]) -> Result<Vec<RewardDecomposition>> {
        match &self.decomposer {
            Some(d) => d.predict_batch(batch, d.intervals()),
            None => Ok(batch.iter().map(|t| RewardDecomposition::zero(t.len(), t.episodic_return)).collect()),
        }
    }

    /// Buffer update and regression passes; returns the mean per-trajectory loss of the last pass.
    fn fit_reward_model(&mut self, fresh: &[Trajectory]) -> Result<Option<f64>> {
        let Some(model) = self.decomposer.as_mut() else {
            return Ok(None);
        };
        self.buffer.insert(fresh.iter().cloned());
        let sample: Vec<Arc<Trajectory>> = self.buffer.sample()?;
        let refs: Vec<&Trajectory> = sample.iter().map(|t| t.as_ref()).collect();
        let returns: Vec<f64> = refs.iter().map(|t| t.episodic_return).collect();
        model.fit_normalizer(&returns);
        let mut last = f64::NAN;
        for _ in 0..self.config.regression_epochs {
            last = model.regression_step(&refs)?;
        }
        Ok(Some(last / refs.len() as f64))
    }

    /// One full iteration; appends a metrics row to `sink` when given.
    pub fn step(&mut self, sink: Option<&mut MetricsSink>) -> Result<MetricsRow> {
        let rollouts = rollout(&self.policy, &mut self.env, self.config.ppo.batch_steps, &mut self.rng)?;
        let fresh: Vec<Trajectory> = rollouts.iter().map(|r| r.trajectory.clone()).collect();
        let steps: usize = fresh.iter().map(Trajectory::len).sum();
        self.env_steps += steps as u64;

        let regression_loss = match self.fit_reward_model(&fresh) {
            Ok(l) => l,
            Err(Error::NonFinite(_)) => {
                self.nonfinite_events += 1;
                Some(f64::NAN)
            }
            Err(e) => return Err(e),
        };

        let refs: Vec<&Trajectory> = fresh.iter().collect();
        let decomps = self.decompose(&refs)?;
        let spec = self.config.advantage_spec();
        let mut batch = StepBatch::default();
        for (r, d) in rollouts.iter().zip(&decomps) {
            let values = self.value.predict(&r.trajectory.states)?;
            let adv = compute_advantages(d, &values, spec)?;
            for t in 0..r.trajectory.len() {
                batch.states.push(r.trajectory.states[t].clone());
                batch.actions.push(r.trajectory.actions[t].clone());
                batch.old_log_probs.push(r.log_probs[t]);
                batch.advantages.push(adv.total[t]);
                batch.value_targets.push(adv.targets.iter().map(|h| h[t]).collect());
            }
        }

        let grad_variance = self.gradient_variance(&fresh, &decomps)?;
        match ppo_update(
            &mut self.policy,
            &mut self.value,
            &mut self.policy_opt,
            &mut self.value_opt,
            &batch,
            &self.config.ppo,
            &mut self.rng,
        ) {
            Ok(_) => {}
            Err(Error::NonFinite(_)) => self.nonfinite_events += 1,
            Err(e) => return Err(e),
        }

        let returns: Vec<f64> = fresh.iter().map(|t| t.episodic_return).collect();
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let std = (returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n).sqrt();
        let residual_abs_mean = decomps.iter().map(|d| d.residual.abs()).sum::<f64>() / n;
        let row = MetricsRow {
            iteration: self.iteration,
            env_steps: self.env_steps,
            return_mean: mean,
            return_std: std,
            regression_loss,
            residual_abs_mean,
            grad_variance,
        };
        self.iteration += 1;
        if let Some(sink) = sink {
            sink.append(&row)?;
        }
        Ok(row)
    }

    /// Across-trajectory variance of the per-trajectory policy-gradient samples.
    fn gradient_variance(&self, batch: &[Trajectory], decomps: &[RewardDecomposition]) -> Result<f64> {
        let form = self.config.estimator_form();
        let kind = self.decomposer.as_ref().map_or(crate::trajectory::IntervalKind::Singletons, |d| d.intervals());
        let mut samples = Vec::with_capacity(batch.len());
        for (t, d) in batch.iter().zip(decomps) {
            let set = IntervalSet::new(kind, t.len());
            let coeffs = step_coefficients(form, d, &set, TailRule::Standard)?;
            samples.push(self.policy.weighted_score(&t.states, &t.actions, &coeffs)?);
        }
        let residuals: Vec<f64> = decomps.iter().map(|d| d.residual).collect();
        Ok(summarize(&samples, &residuals).variance)
    }

    /// Runs until `config.iterations` iterations have been completed in total.
    pub fn run(&mut self, mut sink: Option<&mut MetricsSink>) -> Result<Vec<MetricsRow>> {
        let mut rows = Vec::new();
        while self.iteration < self.config.iterations as u64 {
            rows.push(self.step(sink.as_deref_mut())?);
        }
        Ok(rows)
    }

    pub fn summary(&self, rows: &[MetricsRow]) -> RunSummary {
        RunSummary {
            iterations: self.iteration,
            env_steps: self.env_steps,
            nonfinite_events: self.nonfinite_events,
            final_return_mean: rows.last().map(|r| r.return_mean),
        }
    }

    /// Writes policy, value, reward model, buffer and optimizer/RNG state into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let named = |p: &crate::autodiff::ParamSet| -> Vec<(String, Tensor)> {
            p.names().iter().cloned().zip(p.tensors().iter().cloned()).collect()
        };
        let meta = serde_json::json!({ "kind": "policy" });
        checkpoint::save(&dir.join("policy.json"), meta, &named(self.policy.params()))?;
        let meta = serde_json::json!({ "kind": "value" });
        checkpoint::save(&dir.join("value.json"), meta, &named(self.value.params()))?;
        if let Some(d) = &self.decomposer {
            d.save(&dir.join("decomposer.json"))?;
        }
        self.buffer.save_jsonl(&dir.join("buffer.jsonl"), self.config.seed, self.iteration)?;
        let state = TrainerState {
            config: self.config.clone(),
            iteration: self.iteration,
            env_steps: self.env_steps,
            nonfinite_events: self.nonfinite_events,
            rng: self.rng.clone(),
            policy_opt: self.policy_opt.clone(),
            value_opt: self.value_opt.clone(),
            decomposer_opt: self.decomposer.as_ref().map(|d| d.optimizer().clone()),
        };
        std::fs::write(dir.join("state.json"), serde_json::to_vec_pretty(&state)?)?;
        Ok(())
    }

    /// Restores a trainer written by [`Trainer::save`]. Network weights come
    /// back through `f32` storage, so a resumed run is close to, not
    /// bit-identical with, an uninterrupted one.
    pub fn load(dir: &Path) -> Result<Self> {
        let state: TrainerState = serde_json::from_slice(&std::fs::read(dir.join("state.json"))?)?;
        let mut trainer = Self::new(state.config.clone())?;
        let restore = |params: &mut crate::autodiff::ParamSet, file: &str| -> Result<()> {
            let (_, tensors) = checkpoint::load(&dir.join(file))?;
            if tensors.len() != params.len() {
                return Err(Error::Checkpoint(format!("{file}: tensor count mismatch")));
            }
            for (name, t) in tensors {
                params.set_by_name(&name, t)?;
            }
            Ok(())
        };
        restore(trainer.policy.params_mut(), "policy.json")?;
        restore(trainer.value.params_mut(), "value.json")?;
        if trainer.decomposer.is_some() {
            let mut d = Decomposer::load(&dir.join("decomposer.json"))?;
            if let Some(opt) = state.decomposer_opt {
                d.set_optimizer(opt);
            }
            trainer.decomposer = Some(d);
        }
        let buffer_path = dir.join("buffer.jsonl");
        if buffer_path.exists() {
            trainer.buffer.load_jsonl(&buffer_path)?;
        }
        trainer.iteration = state.iteration;
        trainer.env_steps = state.env_steps;
        trainer.nonfinite_events = state.nonfinite_events;
        trainer.rng = state.rng;
        trainer.policy_opt = state.policy_opt;
        trainer.value_opt = state.value_opt;
        Ok(trainer)
    }
}

/// Builds a trainer and runs it to completion.
pub fn train(config: TrainConfig, sink: Option<&mut MetricsSink>) -> Result<(Trainer, Vec<MetricsRow>)> {
    let mut trainer = Trainer::new(config)?;
    let rows = trainer.run(sink)?;
    Ok((trainer, rows))
}

#[cfg(test)]
mod tests;
