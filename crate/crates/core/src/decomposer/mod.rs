//! Learned return decompositions.
//!
//! A [`Decomposer`] maps a trajectory to one scalar per interval and is fitted
//! by regressing the sum of those scalars onto the episodic return.

mod arch;

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use arch::{position_signal, Architecture, Packed, Trace, Widths, LAYER_NORM_EPS};

use crate::autodiff::{checkpoint, Optimizer, OptimizerKind, ParamSet, Tape, Tensor};
use crate::error::{Error, Result};
use crate::trajectory::{IntervalKind, IntervalSet, RewardDecomposition, Trajectory};
use arch::Layout;

/// Upper bound on packed rows per tape; keeps the block-causal score matrices small.
const CHUNK_ROWS: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposerConfig {
    pub architecture: Architecture,
    pub intervals: IntervalKind,
    pub widths: Widths,
    pub lr: f64,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    /// Standardize returns before regression (and undo it for the estimators).
    pub normalize_targets: bool,
}

impl DecomposerConfig {
    /// Reference widths, reward learning rate 1e-3.
    pub fn full(architecture: Architecture) -> Self {
        Self::with_widths(architecture, Widths::full())
    }

    pub fn desk(architecture: Architecture) -> Self {
        Self::with_widths(architecture, Widths::desk())
    }

    pub fn with_widths(architecture: Architecture, widths: Widths) -> Self {
        Self {
            architecture,
            intervals: default_intervals(architecture),
            widths,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            normalize_targets: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.widths.validate()?;
        if self.architecture == Architecture::FeedForward && self.intervals == IntervalKind::Prefixes {
            return Err(Error::Config(
                "the feed-forward predictor sees one step at a time and cannot score prefixes".into(),
            ));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("reward learning rate {}", self.lr)));
        }
        Ok(())
    }
}

/// Singletons for the per-step model, prefixes for the sequence models.
pub fn default_intervals(architecture: Architecture) -> IntervalKind {
    match architecture {
        Architecture::FeedForward => IntervalKind::Singletons,
        _ => IntervalKind::Prefixes,
    }
}

/// Affine target scaling; the mean is credited to the first interval when undone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: f64,
    pub std: f64,
}

impl Default for Normalizer {
    fn default() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }
}

impl Normalizer {
    /// Mean and population standard deviation of `returns`; a degenerate spread maps to 1.
    pub fn fit(returns: &[f64]) -> Self {
        if returns.is_empty() {
            return Self::default();
        }
        let n = returns.len() as f64;
        let mean = returns.iter().sum::<f64>() / n;
        let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        Self {
            mean,
            std: if std > 1e-6 { std } else { 1.0 },
        }
    }

    pub fn encode(&self, ret: f64) -> f64 {
        (ret - self.mean) / self.std
    }

    /// Maps normalized per-interval values back to return units.
    pub fn decode(&self, values: &[f64]) -> Vec<f64> {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| self.std * v + if i == 0 { self.mean } else { 0.0 })
            .collect()
    }
}

/// Softmax attention and pooling gates for one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionExport {
    pub len: usize,
    /// `heads × T × T`; row `t` is the distribution over steps `0..=t`.
    pub heads: Vec<Vec<Vec<f64>>>,
    /// Pooling gate `z_t ∈ (0, 1)` per step.
    pub gate: Vec<f64>,
    /// Per-interval predictions in return units.
    pub rewards: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Decomposer {
    config: DecomposerConfig,
    input_dim: usize,
    params: ParamSet,
    layout: Layout,
    normalizer: Normalizer,
    optimizer: Optimizer,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointMeta {
    kind: String,
    config: DecomposerConfig,
    input_dim: usize,
    normalizer: Normalizer,
}

const CHECKPOINT_KIND: &str = "decomposer";

impl Decomposer {
    pub fn new(config: DecomposerConfig, input_dim: usize, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::Config("decomposer input width 0".into()));
        }
        let mut params = ParamSet::new();
        let layout = Layout::init(config.architecture, &config.widths, input_dim, &mut params, rng);
        let optimizer = Optimizer::new(config.optimizer, config.lr, params.numel());
        Ok(Self {
            config,
            input_dim,
            params,
            layout,
            normalizer: Normalizer::default(),
            optimizer,
        })
    }

    pub fn config(&self) -> &DecomposerConfig {
        &self.config
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    pub fn intervals(&self) -> IntervalKind {
        self.config.intervals
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn optimizer(&self) -> &Optimizer {
        &self.optimizer
    }

    pub fn set_optimizer(&mut self, optimizer: Optimizer) {
        self.optimizer = optimizer;
    }

    pub fn normalizer(&self) -> Normalizer {
        self.normalizer
    }

    pub fn set_normalizer(&mut self, normalizer: Normalizer) {
        self.normalizer = normalizer;
    }

    /// Refits the target scaling to `returns` when normalization is enabled.
    pub fn fit_normalizer(&mut self, returns: &[f64]) {
        if self.config.normalize_targets {
            self.normalizer = Normalizer::fit(returns);
        }
    }

    fn prefix_pooling(&self) -> bool {
        self.config.intervals == IntervalKind::Prefixes
    }

    /// Forward pass on a fresh tape with the parameters registered as leaves.
    pub fn trace(&self, tape: &mut Tape, batch: &[&Trajectory], detail: bool) -> Result<(Vec<crate::autodiff::Var>, Packed, Trace)> {
        let vars = self.params.register(tape);
        let packed = Packed::new(batch, self.input_dim)?;
        let trace = arch::forward(&self.layout, tape, &vars, &packed, self.prefix_pooling(), detail)?;
        Ok((vars, packed, trace))
    }

    fn single(&self, traj: &Trajectory) -> Result<(Tape, Packed, Trace)> {
        let mut tape = Tape::new();
        let (_, packed, trace) = self.trace(&mut tape, &[traj], true)?;
        Ok((tape, packed, trace))
    }

    /// Per-step embeddings `v_t`, `[T, d]`.
    pub fn embed(&self, traj: &Trajectory) -> Result<Tensor> {
        let (tape, _, trace) = self.single(traj)?;
        Ok(tape.value(trace.embedding).clone())
    }

    /// Causal encodings `h_t`, `[T, d]`; only defined for the sequence models.
    pub fn encode_causal(&self, traj: &Trajectory) -> Result<Tensor> {
        let (tape, _, trace) = self.single(traj)?;
        let h = trace
            .hidden
            .ok_or_else(|| Error::InvalidArgument("the feed-forward predictor has no causal encoder".into()))?;
        Ok(tape.value(h).clone())
    }

    /// Pooling gates `z` (`[T, 1]`) and gated encodings `h*` (`[T, d]`).
    pub fn attention_pool(&self, traj: &Trajectory) -> Result<(Tensor, Tensor)> {
        let (tape, _, trace) = self.single(traj)?;
        match (trace.gate, trace.hidden) {
            (Some(z), Some(h)) => {
                let zt = tape.value(z);
                let ht = tape.value(h);
                let (m, d) = ht.dims2();
                let data = (0..m * d).map(|i| ht.data()[i] * zt.data()[i / d]).collect();
                Ok((zt.clone(), Tensor::new(vec![m, d], data)?))
            }
            _ => Err(Error::InvalidArgument("attention pooling needs the attention predictor".into())),
        }
    }

    pub fn export_attention(&self, traj: &Trajectory) -> Result<AttentionExport> {
        let (tape, _, trace) = self.single(traj)?;
        let gate = trace
            .gate
            .ok_or_else(|| Error::InvalidArgument("attention export needs the attention predictor".into()))?;
        let heads = trace
            .attention
            .iter()
            .map(|&p| {
                let t = tape.value(p);
                (0..t.dims2().0).map(|i| t.row_slice(i).to_vec()).collect()
            })
            .collect();
        let raw = tape.value(trace.output).data().to_vec();
        Ok(AttentionExport {
            len: traj.len(),
            heads,
            gate: tape.value(gate).data().to_vec(),
            rewards: self.normalizer.decode(&raw),
        })
    }

    /// Raw (normalized-space) per-interval outputs for each trajectory.
    pub fn raw_outputs(&self, batch: &[&Trajectory]) -> Result<Vec<Vec<f64>>> {
        let chunks = chunk(batch);
        let per_chunk: Vec<Result<Vec<Vec<f64>>>> = chunks
            .par_iter()
            .map(|c| {
                let mut tape = Tape::new();
                let (_, packed, trace) = self.trace(&mut tape, c, false)?;
                let out = tape.value(trace.output).data();
                Ok(packed
                    .offsets
                    .iter()
                    .zip(&packed.lens)
                    .map(|(&o, &l)| out[o..o + l].to_vec())
                    .collect())
            })
            .collect();
        let mut all = Vec::with_capacity(batch.len());
        for c in per_chunk {
            all.extend(c?);
        }
        Ok(all)
    }

    /// Decomposition of `traj` in return units over `intervals`.
    pub fn predict(&self, traj: &Trajectory, intervals: &IntervalSet) -> Result<RewardDecomposition> {
        Ok(self.predict_batch(&[traj], intervals.kind())?.remove(0))
    }

    pub fn predict_batch(&self, batch: &[&Trajectory], kind: IntervalKind) -> Result<Vec<RewardDecomposition>> {
        if kind != self.config.intervals {
            return Err(Error::InvalidArgument(format!(
                "predictor trained on {:?} intervals, asked for {kind:?}",
                self.config.intervals
            )));
        }
        let raw = self.raw_outputs(batch)?;
        raw.into_iter()
            .zip(batch)
            .map(|(values, traj)| {
                let decoded = self.normalizer.decode(&values);
                if decoded.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("predicted reward".into()));
                }
                Ok(RewardDecomposition::new(decoded, traj.episodic_return))
            })
            .collect()
    }

    /// `Σ_τ (Σ_α r̂_α - target(τ))²` in normalized units and its gradient.
    pub fn loss_and_grad(&self, batch: &[&Trajectory]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::EmptyBuffer);
        }
        let chunks = chunk(batch);
        let parts: Vec<Result<(f64, Vec<f64>)>> = chunks
            .par_iter()
            .map(|c| {
                let mut tape = Tape::new();
                let (vars, packed, trace) = self.trace(&mut tape, c, false)?;
                let seg = tape.leaf(packed.segment_sum_matrix());
                let composite = tape.matmul(seg, trace.output)?;
                let targets: Vec<f64> = c.iter().map(|t| self.normalizer.encode(t.episodic_return)).collect();
                let targets = tape.leaf(Tensor::new(vec![c.len(), 1], targets)?);
                let diff = tape.sub(composite, targets)?;
                let sq = tape.square(diff);
                let loss = tape.sum(sq);
                let value = tape.value(loss).item();
                let grads = tape.backward(loss)?;
                Ok((value, ParamSet::flat_grad(&grads, &vars)))
            })
            .collect();
        let mut loss = 0.0;
        let mut grad = vec![0.0; self.params.numel()];
        for part in parts {
            let (l, g) = part?;
            loss += l;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        Ok((loss, grad))
    }

    pub fn regression_loss(&self, batch: &[&Trajectory]) -> Result<f64> {
        let raw = self.raw_outputs(batch)?;
        Ok(raw
            .iter()
            .zip(batch)
            .map(|(v, t)| {
                let d = v.iter().sum::<f64>() - self.normalizer.encode(t.episodic_return);
                d * d
            })
            .sum())
    }

    /// One optimizer step on the regression loss; returns the pre-update loss.
    /// A non-finite loss or gradient aborts without touching the parameters.
    pub fn regression_step(&mut self, batch: &[&Trajectory]) -> Result<f64> {
        let (loss, grad) = self.loss_and_grad(batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("regression loss {loss} on {} trajectories", batch.len())));
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("regression gradient".into()));
        }
        self.optimizer.step(&mut self.params, &grad)?;
        Ok(loss)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = CheckpointMeta {
            kind: CHECKPOINT_KIND.into(),
            config: self.config.clone(),
            input_dim: self.input_dim,
            normalizer: self.normalizer,
        };
        let tensors: Vec<(String, Tensor)> = self
            .params
            .names()
            .iter()
            .cloned()
            .zip(self.params.tensors().iter().cloned())
            .collect();
        checkpoint::save(path, serde_json::to_value(meta)?, &tensors)
    }

    /// Restores a checkpoint written by [`Decomposer::save`]. Values round-trip
    /// through `f32` storage.
    pub fn load(path: &Path) -> Result<Self> {
        let (manifest, tensors) = checkpoint::load(path)?;
        let meta: CheckpointMeta = serde_json::from_value(manifest.meta)
            .map_err(|e| Error::Checkpoint(format!("decomposer metadata: {e}")))?;
        if meta.kind != CHECKPOINT_KIND {
            return Err(Error::Checkpoint(format!("expected a decomposer checkpoint, found {:?}", meta.kind)));
        }
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut model = Self::new(meta.config, meta.input_dim, &mut rng)?;
        if tensors.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, architecture needs {}",
                tensors.len(),
                model.params.len()
            )));
        }
        for (name, t) in tensors {
            model
                .params
                .set_by_name(&name, t)
                .map_err(|e| Error::Checkpoint(format!("tensor {name}: {e}")))?;
        }
        model.normalizer = meta.normalizer;
        Ok(model)
    }
}

fn chunk<'a>(batch: &[&'a Trajectory]) -> Vec<Vec<&'a Trajectory>> {
    let mut out: Vec<Vec<&Trajectory>> = Vec::new();
    let mut rows = 0;
    for &t in batch {
        if out.is_empty() || rows + t.len() > CHUNK_ROWS {
            out.push(Vec::new());
            rows = 0;
        }
        out.last_mut().expect("pushed").push(t);
        rows += t.len();
    }
    out
}

#[cfg(test)]
mod tests;
