//! Experiment files and the named recipes that generate them.
//!
//! An experiment is a single JSON document; every field other than
//! `schema_version`, `env` and `iterations` has a default matching the
//! reference hyper-parameters. Hyper-parameter changes go in `overrides`.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::buffers::{BufferConfig, BufferScheme};
use crate::decomposer::{default_intervals, Architecture, DecomposerConfig, Widths};
use crate::envs::EnvSpec;
use crate::error::{Error, Result};
use crate::trainer::{Method, TrainConfig, ValueHeads};
use crate::trajectory::IntervalKind;

pub const SCHEMA_VERSION: u32 = 1;

/// Names accepted by [`recipe`].
pub const RECIPES: [&str; 5] = ["figure2", "figure3-buffers", "figure3-networks", "figure3-bias", "ablation-grid"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WidthPreset {
    Full,
    Desk,
    Tiny,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WidthChoice {
    Preset(WidthPreset),
    Explicit(Widths),
}

impl WidthChoice {
    pub fn resolve(&self) -> Widths {
        match self {
            Self::Preset(WidthPreset::Full) => Widths::full(),
            Self::Preset(WidthPreset::Desk) => Widths::desk(),
            Self::Preset(WidthPreset::Tiny) => Widths::tiny(),
            Self::Explicit(w) => w.clone(),
        }
    }
}

/// Optional hyper-parameter changes; anything left out keeps its default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    pub batch_steps: Option<usize>,
    pub minibatch: Option<usize>,
    pub epochs: Option<usize>,
    pub policy_lr: Option<f64>,
    pub value_lr: Option<f64>,
    pub clip: Option<f64>,
    pub gamma: Option<f64>,
    pub lambda: Option<f64>,
    pub normalize_advantages: Option<bool>,
    pub reward_lr: Option<f64>,
    pub widths: Option<WidthChoice>,
    pub positional: Option<bool>,
    pub normalize_targets: Option<bool>,
    pub buffer_capacity: Option<usize>,
    pub reservoir: Option<usize>,
    pub regression_epochs: Option<usize>,
    pub value_heads: Option<ValueHeads>,
    pub policy_hidden: Option<[usize; 2]>,
    pub init_log_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Label used for output file names.
    #[serde(default = "default_name")]
    pub name: String,
    pub env: EnvSpec,
    #[serde(default = "default_method")]
    pub method: Method,
    #[serde(default = "default_architecture")]
    pub architecture: Architecture,
    /// Defaults to prefixes for sequence models and singletons for the feed-forward one.
    #[serde(default)]
    pub interval_kind: Option<IntervalKind>,
    #[serde(default = "default_scheme")]
    pub buffer_scheme: BufferScheme,
    #[serde(default = "default_true")]
    pub bias_correction: bool,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub iterations: usize,
    #[serde(default)]
    pub overrides: Overrides,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_name() -> String {
    "run".into()
}
fn default_method() -> Method {
    Method::Decomposed
}
fn default_architecture() -> Architecture {
    Architecture::Attention
}
fn default_scheme() -> BufferScheme {
    BufferScheme::HistoricalOnline
}
fn default_true() -> bool {
    true
}
fn default_seeds() -> Vec<u64> {
    vec![0]
}
fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    /// Full method with reference defaults.
    pub fn new(name: impl Into<String>, env: EnvSpec, iterations: usize) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: name.into(),
            env,
            method: Method::Decomposed,
            architecture: Architecture::Attention,
            interval_kind: None,
            buffer_scheme: BufferScheme::HistoricalOnline,
            bias_correction: true,
            seeds: default_seeds(),
            iterations,
            overrides: Overrides::default(),
            output_dir: default_output(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Every problem found, not just the first.
    pub fn problems(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            out.push(format!("schema_version: expected {SCHEMA_VERSION}, got {}", self.schema_version));
        }
        if self.seeds.is_empty() {
            out.push("seeds: at least one seed is required".into());
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            out.push("seeds: duplicates would overwrite each other's outputs".into());
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            out.push(format!("name: {:?} is not usable as a file stem", self.name));
        }
        let o = &self.overrides;
        for (field, v) in [("policy_lr", o.policy_lr), ("value_lr", o.value_lr), ("reward_lr", o.reward_lr)] {
            if let Some(v) = v {
                if !(v.is_finite() && v > 0.0) {
                    out.push(format!("overrides.{field}: must be positive, got {v}"));
                }
            }
        }
        if let Some(c) = o.clip {
            if !(c > 0.0 && c < 1.0) {
                out.push(format!("overrides.clip: must lie in (0, 1), got {c}"));
            }
        }
        if out.is_empty() {
            if let Err(e) = self.train_config(self.seeds[0]).and_then(|c| c.validate()) {
                out.push(e.to_string());
            }
        }
        out
    }

    pub fn check(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    /// Concrete trainer settings for one seed.
    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let o = &self.overrides;
        let mut cfg = TrainConfig::new(self.env.clone());
        cfg.method = self.method;
        cfg.bias_correction = self.bias_correction;
        let widths = o.widths.as_ref().map_or_else(Widths::full, WidthChoice::resolve);
        let mut dc = DecomposerConfig::with_widths(self.architecture, widths);
        dc.intervals = self.interval_kind.unwrap_or_else(|| default_intervals(self.architecture));
        set(&mut dc.lr, o.reward_lr);
        set(&mut dc.widths.positional, o.positional);
        set(&mut dc.normalize_targets, o.normalize_targets);
        cfg.decomposer = dc;
        cfg.buffer = BufferConfig::new(self.buffer_scheme);
        set(&mut cfg.buffer.capacity, o.buffer_capacity);
        set(&mut cfg.buffer.reservoir, o.reservoir);
        let p = &mut cfg.ppo;
        set(&mut p.batch_steps, o.batch_steps);
        set(&mut p.minibatch, o.minibatch);
        set(&mut p.epochs, o.epochs);
        set(&mut p.lr, o.policy_lr);
        set(&mut p.value_lr, o.value_lr);
        set(&mut p.clip, o.clip);
        set(&mut p.gamma, o.gamma);
        set(&mut p.lambda, o.lambda);
        set(&mut p.normalize_advantages, o.normalize_advantages);
        set(&mut cfg.regression_epochs, o.regression_epochs);
        set(&mut cfg.value_heads, o.value_heads);
        set(&mut cfg.policy.hidden, o.policy_hidden);
        set(&mut cfg.policy.init_log_std, o.init_log_std);
        cfg.iterations = self.iterations;
        cfg.seed = seed;
        Ok(cfg)
    }

    /// Stem for this run's per-seed files, e.g. `figure2-full-seed3`.
    pub fn run_stem(&self, seed: u64) -> String {
        format!("{}-seed{seed}", self.name)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Desk-scale settings shared by all recipes: half widths, short batches.
pub fn desk_overrides() -> Overrides {
    Overrides {
        batch_steps: Some(512),
        minibatch: Some(64),
        policy_lr: Some(1e-3),
        value_lr: Some(1e-3),
        widths: Some(WidthChoice::Preset(WidthPreset::Desk)),
        buffer_capacity: Some(50),
        ..Overrides::default()
    }
}

/// Desk-scale analog of the full method on `env`.
pub fn desk_experiment(name: &str, env: EnvSpec, iterations: usize) -> ExperimentConfig {
    ExperimentConfig {
        seeds: (0..5).collect(),
        overrides: desk_overrides(),
        ..ExperimentConfig::new(name, env, iterations)
    }
}

pub const RECIPE_ITERATIONS: usize = 60;

fn recipe_env() -> EnvSpec {
    EnvSpec::SparseGridworld { size: 4, horizon: 16 }
}

/// Expands a named recipe into the experiments it compares.
pub fn recipe(name: &str) -> Result<Vec<ExperimentConfig>> {
    let base = |label: String| desk_experiment(&format!("{name}-{label}"), recipe_env(), RECIPE_ITERATIONS);
    let configs = match name {
        "figure2" => {
            let full = base("full".into());
            let episodic = ExperimentConfig {
                method: Method::Episodic,
                ..base("episodic".into())
            };
            vec![full, episodic]
        }
        "figure3-buffers" => BufferScheme::ALL
            .iter()
            .map(|&s| ExperimentConfig {
                buffer_scheme: s,
                ..base(s.label().to_lowercase())
            })
            .collect(),
        "figure3-networks" => Architecture::ALL
            .iter()
            .map(|&a| ExperimentConfig {
                architecture: a,
                ..base(a.label().into())
            })
            .collect(),
        "figure3-bias" => bias_grid(&base),
        "ablation-grid" => {
            let mut out = Vec::new();
            for scheme in BufferScheme::ALL {
                for arch in Architecture::ALL {
                    let cell = |label: String| ExperimentConfig {
                        buffer_scheme: scheme,
                        architecture: arch,
                        ..base(format!("{}-{}-{label}", scheme.label().to_lowercase(), arch.label()))
                    };
                    out.extend(bias_grid(&cell));
                }
            }
            out
        }
        other => {
            return Err(Error::Config(format!(
                "unknown recipe {other:?}; expected one of {}",
                RECIPES.join(", ")
            )))
        }
    };
    Ok(configs)
}

/// Bias correction on/off at both reward learning rates.
fn bias_grid(base: &dyn Fn(String) -> ExperimentConfig) -> Vec<ExperimentConfig> {
    let mut out = Vec::new();
    for bias in [true, false] {
        for lr in [1e-2, 1e-3] {
            let mut cfg = base(format!("bias-{}-lr{lr:e}", if bias { "on" } else { "off" }));
            cfg.bias_correction = bias;
            cfg.overrides.reward_lr = Some(lr);
            out.push(cfg);
        }
    }
    out
}
