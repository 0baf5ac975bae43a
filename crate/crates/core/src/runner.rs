//! Runs experiments to disk: one metrics CSV, checkpoint directory and
//! summary per seed, all named after [`ExperimentConfig::run_stem`].

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::trainer::{metrics, MetricsSink, RunSummary, Trainer};

/// Iterations between checkpoints (a final one is always written).
pub const CHECKPOINT_EVERY: u64 = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct RunPaths {
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
    pub summary: PathBuf,
}

impl RunPaths {
    pub fn new(dir: &Path, stem: &str) -> Self {
        Self {
            metrics: dir.join(format!("{stem}.metrics.csv")),
            checkpoint: dir.join(format!("{stem}.ckpt")),
            summary: dir.join(format!("{stem}.summary.json")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub name: String,
    pub seed: u64,
    pub summary: Option<RunSummary>,
    pub error: Option<String>,
}

/// Trains one seed. With `resume`, continues from the last checkpoint when
/// there is one, dropping any metrics rows written after it.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, dir: &Path, resume: bool) -> Result<RunSummary> {
    std::fs::create_dir_all(dir)?;
    let paths = RunPaths::new(dir, &cfg.run_stem(seed));
    let train_cfg = cfg.train_config(seed)?;
    let resumable = resume && paths.checkpoint.join("state.json").exists();
    let (mut trainer, mut sink) = if resumable {
        let mut trainer = Trainer::load(&paths.checkpoint)?;
        let mut saved = trainer.config().clone();
        saved.iterations = train_cfg.iterations;
        if saved != train_cfg {
            return Err(Error::Config(format!(
                "{}: checkpoint was written with different settings; only `iterations` may change on resume",
                paths.checkpoint.display()
            )));
        }
        trainer.set_iterations(train_cfg.iterations);
        let kept: Vec<_> = if paths.metrics.exists() {
            metrics::read(&paths.metrics)?
                .into_iter()
                .filter(|r| r.iteration < trainer.iteration())
                .collect()
        } else {
            Vec::new()
        };
        let mut sink = MetricsSink::create(&paths.metrics)?;
        for row in &kept {
            sink.append(row)?;
        }
        (trainer, sink)
    } else {
        (Trainer::new(train_cfg)?, MetricsSink::create(&paths.metrics)?)
    };

    let mut last = None;
    while trainer.iteration() < cfg.iterations as u64 {
        last = Some(trainer.step(Some(&mut sink))?);
        if trainer.iteration() % CHECKPOINT_EVERY == 0 {
            trainer.save(&paths.checkpoint)?;
        }
    }
    trainer.save(&paths.checkpoint)?;
    let summary = trainer.summary(last.as_slice());
    std::fs::write(&paths.summary, serde_json::to_vec_pretty(&summary)?)?;
    Ok(summary)
}

/// Runs every seed (in parallel) and writes the resolved config next to the results.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path, resume: bool) -> Result<Vec<SeedOutcome>> {
    cfg.check()?;
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(format!("{}.config.json", cfg.name)), cfg.to_json()?)?;
    Ok(cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let result = run_seed(cfg, seed, dir, resume);
            SeedOutcome {
                name: cfg.name.clone(),
                seed,
                error: result.as_ref().err().map(ToString::to_string),
                summary: result.ok(),
            }
        })
        .collect())
}

/// Resolves the experiment's output directory against an optional root.
pub fn output_dir(cfg: &ExperimentConfig, root: Option<&Path>) -> PathBuf {
    match root {
        Some(root) if cfg.output_dir.is_relative() => root.join(&cfg.output_dir),
        _ => cfg.output_dir.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{WidthChoice, WidthPreset};
    use crate::envs::EnvSpec;
    use crate::trainer::MetricsRow;

    fn tiny(iterations: usize) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new("t", EnvSpec::ChainMdp { n_states: 4, horizon: 6 }, iterations);
        cfg.seeds = vec![1, 2, 3];
        cfg.overrides.batch_steps = Some(32);
        cfg.overrides.minibatch = Some(16);
        cfg.overrides.epochs = Some(1);
        cfg.overrides.widths = Some(WidthChoice::Preset(WidthPreset::Tiny));
        cfg.overrides.policy_hidden = Some([8, 8]);
        cfg.overrides.buffer_capacity = Some(8);
        cfg
    }

    #[test]
    fn one_metrics_file_per_seed_and_reruns_are_identical() {
        let cfg = tiny(3);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for dir in [a.path(), b.path()] {
            let out = run_experiment(&cfg, dir, false).unwrap();
            assert!(out.iter().all(|o| o.error.is_none()), "{out:?}");
        }
        for seed in &cfg.seeds {
            let name = format!("t-seed{seed}.metrics.csv");
            let x = std::fs::read(a.path().join(&name)).unwrap();
            let y = std::fs::read(b.path().join(&name)).unwrap();
            assert_eq!(x, y);
            assert_eq!(metrics::read(&a.path().join(&name)).unwrap().len(), 3);
        }
        assert!(a.path().join("t.config.json").exists());
    }

    #[test]
    fn resume_extends_a_finished_run() {
        let mut cfg = tiny(2);
        cfg.seeds = vec![4];
        let dir = tempfile::tempdir().unwrap();
        run_seed(&cfg, 4, dir.path(), false).unwrap();
        cfg.iterations = 4;
        let summary = run_seed(&cfg, 4, dir.path(), true).unwrap();
        assert_eq!(summary.iterations, 4);
        let rows: Vec<MetricsRow> = metrics::read(&dir.path().join("t-seed4.metrics.csv")).unwrap();
        assert_eq!(rows.iter().map(|r| r.iteration).collect::<Vec<_>>(), vec![0, 1, 2, 3]);

        cfg.bias_correction = false;
        assert!(run_seed(&cfg, 4, dir.path(), true).is_err());
    }

    #[test]
    fn relative_output_dirs_sit_under_the_root() {
        let cfg = tiny(1);
        assert_eq!(output_dir(&cfg, Some(Path::new("/tmp/x"))), Path::new("/tmp/x/runs"));
        assert_eq!(output_dir(&cfg, None), Path::new("runs"));
    }
}
