use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use dopr_core::experiment::{
    execute, prepare_output_dir, report_from_dir, ExperimentConfig, ExperimentKind, Outcome,
};
use dopr_core::theory::verify_theory;
use dopr_core::{generate_dataset, Error};

/// Rollout-efficient RL experiments on tabular softmax policies.
#[derive(Parser)]
#[command(name = "dopr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured task's dataset into `<out>/dataset.txt`.
    GenData(Common),
    /// Train one policy.
    Train(Common),
    /// One run per training subset size.
    SweepDataScale(Common),
    /// Every algorithm at every rollout budget.
    SweepBudget(Common),
    /// DoPR under each selector variant.
    Ablate(Common),
    /// Check the convergence bound on toy objectives.
    VerifyTheory(Common),
    /// Print the report of a finished experiment directory.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the training (and theory) seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Reuse a non-empty output directory.
    #[arg(long)]
    force: bool,
}

impl Common {
    fn load(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)
                .with_context(|| format!("reading config {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.train.seed = seed;
            cfg.theory.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = Some(out.clone());
        }
        Ok(cfg)
    }
}

fn output_dir(cfg: &ExperimentConfig) -> anyhow::Result<PathBuf> {
    cfg.output_dir
        .clone()
        .ok_or_else(|| Error::field("output_dir", "required; set it in the config or pass --out").into())
}

fn print_outcome(outcome: &Outcome, dir: &Path) {
    for w in outcome.warnings() {
        eprintln!("warning: {w}");
    }
    match outcome {
        Outcome::Legs { legs, .. } => {
            for l in legs {
                match &l.error {
                    None => println!(
                        "{:<24} steps={:<6} rollouts={:<8} final_eval={:.3} full_eval={:.3}",
                        l.label,
                        l.steps,
                        l.cumulative_rollouts,
                        l.final_eval.unwrap_or(f64::NAN),
                        l.full_eval.unwrap_or(f64::NAN)
                    ),
                    Some(e) => println!("{:<24} FAILED: {e}", l.label),
                }
            }
        }
        Outcome::Theory(r) => {
            println!("{}", serde_json::to_string_pretty(r).expect("report serialises"));
        }
    }
    println!("results in {}", dir.display());
}

fn run_experiment(common: &Common, kind: ExperimentKind) -> anyhow::Result<ExitCode> {
    let mut cfg = common.load()?;
    cfg.experiment = kind;
    let dir = output_dir(&cfg)?;
    let outcome = execute(&cfg, &dir, common.force)?;
    print_outcome(&outcome, &dir);
    Ok(if outcome.succeeded() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::GenData(common) => {
            let cfg = common.load()?;
            cfg.task.validate()?;
            let dir = output_dir(&cfg)?;
            prepare_output_dir(&dir, common.force)?;
            let path = dir.join("dataset.txt");
            generate_dataset(&cfg.task)?.save(&path)?;
            println!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Train(c) => run_experiment(&c, ExperimentKind::SingleRun),
        Command::SweepDataScale(c) => run_experiment(&c, ExperimentKind::DataScaleSweep),
        Command::SweepBudget(c) => run_experiment(&c, ExperimentKind::BudgetSweep),
        Command::Ablate(c) => run_experiment(&c, ExperimentKind::Ablation),
        Command::VerifyTheory(c) => {
            let mut cfg = c.load()?;
            cfg.experiment = ExperimentKind::Theory;
            if cfg.output_dir.is_some() {
                return run_experiment(&c, ExperimentKind::Theory);
            }
            cfg.validate()?;
            let report = verify_theory(&cfg.theory)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(if report.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::Report(c) => {
            let dir = output_dir(&c.load()?)?;
            print!("{}", report_from_dir(&dir)?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            let validation = err
                .chain()
                .any(|e| e.downcast_ref::<Error>().is_some_and(Error::is_validation));
            ExitCode::from(if validation { 2 } else { 1 })
        }
    }
}
