use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rayon::prelude::*;

use tempcredit::config::{recipe, ExperimentConfig, RECIPES};
use tempcredit::decomposer::Decomposer;
use tempcredit::interval_pg::TailRule;
use tempcredit::io::read_jsonl;
use tempcredit::oracle::{builtin_mdp, verify_with_random_decomposers, TabularMdp, VerificationReport, BUILTIN_MDPS};
use tempcredit::runner::{output_dir, run_experiment, SeedOutcome};

const OUTPUT_ROOT_VAR: &str = "TEMPCREDIT_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "tempcredit", version, about = "Learned return decomposition for episodic RL")]
struct Cli {
    /// Root for relative output directories.
    #[arg(long, global = true, env = OUTPUT_ROOT_VAR)]
    output_root: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of an experiment file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Continue from existing checkpoints instead of starting over.
        #[arg(long)]
        resume: bool,
    },
    /// Check the gradient identities exactly on small tabular MDPs.
    Verify {
        /// Builtin MDP name; all builtins when neither this nor --spec is given.
        #[arg(long, conflicts_with = "spec")]
        mdp: Option<String>,
        /// JSON file describing a tabular MDP.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Random decomposers tried per MDP.
        #[arg(long, default_value_t = 6)]
        decomposers: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Where to write the JSON report (default: verify-report.json under the output root).
        #[arg(long)]
        report: Option<PathBuf>,
        /// Shift the tail sums by one step; the checks are expected to catch it.
        #[arg(long, hide = true)]
        inject_fault: bool,
    },
    /// Dump pooling gates, predicted rewards and attention matrices.
    ExportAttention {
        /// Decomposer checkpoint file, or a training checkpoint directory.
        #[arg(long)]
        ckpt: PathBuf,
        /// Trajectories as JSON lines.
        #[arg(long)]
        traj: PathBuf,
        /// Output CSV; attention weights go to a sibling `.attention.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a named ablation recipe.
    Bench {
        #[arg(long)]
        recipe: String,
        /// Override the recipe's iteration count.
        #[arg(long)]
        iterations: Option<usize>,
        /// Override the number of seeds (0..n).
        #[arg(long)]
        seeds: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let root = cli.output_root.as_deref();
    let result = match cli.command {
        Command::Train { config, resume } => train(&config, resume, root),
        Command::Verify {
            mdp,
            spec,
            decomposers,
            seed,
            report,
            inject_fault,
        } => verify(mdp, spec, decomposers, seed, report, inject_fault, root),
        Command::ExportAttention { ckpt, traj, out } => export_attention(&ckpt, &traj, &out),
        Command::Bench { recipe, iterations, seeds } => bench(&recipe, iterations, seeds, root),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let cfg: ExperimentConfig =
        serde_json::from_str(&text).with_context(|| format!("{}: schema error", path.display()))?;
    let problems = cfg.problems();
    if !problems.is_empty() {
        bail!("{}: invalid config:\n  - {}", path.display(), problems.join("\n  - "));
    }
    Ok(cfg)
}

fn report_outcomes(outcomes: &[SeedOutcome]) -> bool {
    let mut ok = true;
    for o in outcomes {
        match (&o.summary, &o.error) {
            (Some(s), _) => println!(
                "{:<40} seed {:>3}  iterations {:>5}  steps {:>9}  final return {:>9}  non-finite {}",
                o.name,
                o.seed,
                s.iterations,
                s.env_steps,
                s.final_return_mean.map_or("-".into(), |r| format!("{r:.4}")),
                s.nonfinite_events
            ),
            (None, err) => {
                ok = false;
                eprintln!("{} seed {}: {}", o.name, o.seed, err.as_deref().unwrap_or("unknown failure"));
            }
        }
    }
    ok
}

fn train(config: &Path, resume: bool, root: Option<&Path>) -> Result<bool> {
    let cfg = load_config(config)?;
    let dir = output_dir(&cfg, root);
    let outcomes = run_experiment(&cfg, &dir, resume)?;
    println!("outputs in {}", dir.display());
    Ok(report_outcomes(&outcomes))
}

fn verify(
    mdp: Option<String>,
    spec: Option<PathBuf>,
    decomposers: usize,
    seed: u64,
    report: Option<PathBuf>,
    inject_fault: bool,
    root: Option<&Path>,
) -> Result<bool> {
    let targets: Vec<(String, TabularMdp)> = match (mdp, spec) {
        (Some(name), _) => vec![(name.clone(), builtin_mdp(&name)?)],
        (None, Some(path)) => {
            let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
            let mdp: TabularMdp = serde_json::from_str(&text).with_context(|| format!("{}", path.display()))?;
            let name = path.file_stem().map_or("spec".into(), |s| s.to_string_lossy().into_owned());
            vec![(name, mdp)]
        }
        (None, None) => BUILTIN_MDPS
            .iter()
            .map(|&n| Ok((n.to_string(), builtin_mdp(n)?)))
            .collect::<tempcredit::Result<_>>()?,
    };
    let rule = if inject_fault { TailRule::OffByOne } else { TailRule::Standard };
    let mut reports: Vec<VerificationReport> = Vec::new();
    for (name, mdp) in &targets {
        reports.extend(verify_with_random_decomposers(name, mdp, decomposers, seed, rule)?);
    }

    println!("{:<22} {:<30} {:>12}  result", "case", "check", "max |err|");
    for r in &reports {
        for c in &r.checks {
            let verdict = if c.passed { "PASS" } else { "FAIL" };
            println!("{:<22} {:<30} {:>12.3e}  {verdict}", r.mdp, c.name, c.max_abs_error);
        }
    }
    let passed = reports.iter().all(|r| r.passed);
    for r in reports.iter().filter(|r| !r.passed) {
        for c in r.failed_checks() {
            eprintln!("{}: violated {} ({})", r.mdp, c.name, c.identity);
        }
    }

    let path = report.unwrap_or_else(|| root.unwrap_or(Path::new(".")).join("verify-report.json"));
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let doc = serde_json::json!({ "passed": passed, "fault_injected": inject_fault, "reports": reports });
    std::fs::write(&path, serde_json::to_vec_pretty(&doc)?)?;
    println!("{} ({} cases) — report {}", if passed { "all checks passed" } else { "FAILED" }, reports.len(), path.display());
    Ok(passed)
}

fn export_attention(ckpt: &Path, traj: &Path, out: &Path) -> Result<bool> {
    let file = if ckpt.is_dir() { ckpt.join("decomposer.json") } else { ckpt.to_path_buf() };
    let model = Decomposer::load(&file).with_context(|| format!("loading {}", file.display()))?;
    if model.architecture() != tempcredit::decomposer::Architecture::Attention {
        bail!(
            "{} holds a {} predictor; only the attention predictor has attention to export",
            file.display(),
            model.architecture().label()
        );
    }
    let records = read_jsonl(traj)?;
    let mut steps = csv::Writer::from_path(out)?;
    steps.write_record(["trajectory", "t", "z", "reward"])?;
    let attention_path = out.with_extension("attention.csv");
    let mut attention = csv::Writer::from_path(&attention_path)?;
    attention.write_record(["trajectory", "head", "query", "key", "weight"])?;
    for (i, record) in records.iter().enumerate() {
        let t = record.to_trajectory()?;
        let export = model.export_attention(&t)?;
        for step in 0..export.len {
            steps.serialize((i, step, export.gate[step], export.rewards[step]))?;
        }
        for (h, matrix) in export.heads.iter().enumerate() {
            for (q, row) in matrix.iter().enumerate() {
                for (k, w) in row.iter().enumerate().take(q + 1) {
                    attention.serialize((i, h, q, k, w))?;
                }
            }
        }
    }
    steps.flush()?;
    attention.flush()?;
    println!("{} trajectories -> {}, {}", records.len(), out.display(), attention_path.display());
    Ok(true)
}

fn bench(name: &str, iterations: Option<usize>, seeds: Option<u64>, root: Option<&Path>) -> Result<bool> {
    let mut configs = recipe(name).with_context(|| format!("known recipes: {}", RECIPES.join(", ")))?;
    let dir = root.unwrap_or(Path::new(".")).join("bench").join(name);
    for cfg in &mut configs {
        if let Some(n) = iterations {
            cfg.iterations = n;
        }
        if let Some(n) = seeds {
            cfg.seeds = (0..n).collect();
        }
        cfg.output_dir = dir.clone();
    }
    let outcomes: Vec<SeedOutcome> = configs
        .par_iter()
        .map(|cfg| run_experiment(cfg, &dir, false))
        .collect::<tempcredit::Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let summary_path = dir.join("bench-summary.csv");
    let mut w = csv::Writer::from_path(&summary_path)?;
    w.write_record(["name", "seed", "iterations", "env_steps", "final_return_mean", "nonfinite_events", "error"])?;
    for o in &outcomes {
        let s = o.summary.as_ref();
        w.serialize((
            &o.name,
            o.seed,
            s.map(|s| s.iterations),
            s.map(|s| s.env_steps),
            s.and_then(|s| s.final_return_mean),
            s.map(|s| s.nonfinite_events),
            o.error.as_deref().unwrap_or(""),
        ))?;
    }
    w.flush()?;
    let ok = report_outcomes(&outcomes);
    println!("{} runs -> {}", outcomes.len(), summary_path.display());
    Ok(ok)
}
