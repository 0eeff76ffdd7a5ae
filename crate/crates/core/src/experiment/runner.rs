use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::render_report;
use super::{ExperimentConfig, ExperimentKind};
use crate::error::{Error, Result};
use crate::selector::SelectorVariant;
use crate::tasks::{generate_dataset, Dataset};
use crate::textfmt::write_atomic;
use crate::theory::{verify_theory, TheoryReport};
use crate::trainer::{run_with_sink, Algo, DirSink, TrainConfig};

/// One row of a sweep's summary table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LegSummary {
    pub label: String,
    pub algo: Algo,
    pub variant: Option<SelectorVariant>,
    pub subset_size: usize,
    pub budget: Option<u64>,
    pub steps: u64,
    pub cumulative_rollouts: u64,
    pub initial_eval: Option<f64>,
    /// Greedy accuracy over the leg's training subset after the last step.
    pub final_eval: Option<f64>,
    /// Greedy accuracy over every instance in the dataset.
    pub full_eval: Option<f64>,
    /// Metrics CSV, relative to the experiment directory.
    pub metrics_path: String,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub enum Outcome {
    Legs {
        kind: ExperimentKind,
        legs: Vec<LegSummary>,
        warnings: Vec<String>,
    },
    Theory(TheoryReport),
}

impl Outcome {
    pub fn legs(&self) -> &[LegSummary] {
        match self {
            Outcome::Legs { legs, .. } => legs,
            Outcome::Theory(_) => &[],
        }
    }

    pub fn warnings(&self) -> &[String] {
        match self {
            Outcome::Legs { warnings, .. } => warnings,
            Outcome::Theory(_) => &[],
        }
    }

    /// False if any leg failed or the theory check did not pass.
    pub fn succeeded(&self) -> bool {
        match self {
            Outcome::Legs { legs, .. } => legs.iter().all(|l| l.error.is_none()),
            Outcome::Theory(r) => r.passed,
        }
    }
}

/// Refuses a non-empty `dir` unless `force` is set; creates it otherwise.
pub fn prepare_output_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        if !dir.is_dir() {
            return Err(Error::field(
                "output_dir",
                format!("{} exists and is not a directory", dir.display()),
            ));
        }
        let occupied = std::fs::read_dir(dir)?.next().is_some();
        if occupied && !force {
            return Err(Error::field(
                "output_dir",
                format!("{} is not empty; pass --force to reuse it", dir.display()),
            ));
        }
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn leg_summary(label: &str, train: &TrainConfig, subset_size: usize, metrics_path: String) -> LegSummary {
    LegSummary {
        label: label.to_owned(),
        algo: train.algo,
        variant: train
            .algo
            .is_dopr_family()
            .then(|| train.algo.variant(train.selector.variant)),
        subset_size,
        budget: train.rollout_budget,
        steps: 0,
        cumulative_rollouts: 0,
        initial_eval: None,
        final_eval: None,
        full_eval: None,
        metrics_path,
        error: None,
    }
}

fn run_leg(label: &str, train: &TrainConfig, dataset: &Dataset, root: &Path, rel: &str) -> LegSummary {
    let subset_size = train.subset_size.unwrap_or(dataset.len()).min(dataset.len());
    let metrics_path = if rel.is_empty() {
        "metrics.csv".to_owned()
    } else {
        format!("{rel}/metrics.csv")
    };
    let mut summary = leg_summary(label, train, subset_size, metrics_path);
    let result = DirSink::create(&root.join(rel)).and_then(|mut sink| run_with_sink(train, dataset, &mut sink));
    match result {
        Ok(out) => {
            let all: Vec<usize> = (0..dataset.len()).collect();
            summary.steps = out.state.step;
            summary.cumulative_rollouts = out.state.ledger.total();
            summary.initial_eval = out.metrics[0].eval_accuracy;
            summary.final_eval = Some(out.final_eval());
            summary.full_eval = Some(out.state.params.eval_accuracy(dataset, &all));
        }
        Err(e) => summary.error = Some(e.to_string()),
    }
    summary
}

fn run_legs(legs: Vec<(String, TrainConfig)>, dataset: &Dataset, root: &Path) -> Vec<LegSummary> {
    legs.par_iter()
        .map(|(label, train)| run_leg(label, train, dataset, root, &format!("legs/{label}")))
        .collect()
}

/// One training run writing `metrics.csv`, `checkpoint.txt` and
/// `stats.txt` into `dir`.
pub fn run_single(cfg: &ExperimentConfig, dataset: &Dataset, dir: &Path) -> Result<LegSummary> {
    let leg = run_leg(cfg.train.algo.name(), &cfg.train, dataset, dir, "");
    match &leg.error {
        Some(e) => Err(Error::invalid(e.clone())),
        None => Ok(leg),
    }
}

/// One leg per distinct subset size, all sharing seed and dataset.
pub fn run_data_scale_sweep(
    cfg: &ExperimentConfig,
    dataset: &Dataset,
    dir: &Path,
) -> (Vec<LegSummary>, Vec<String>) {
    let (sizes, warnings) = cfg.resolved_subset_sizes();
    let legs = sizes
        .into_iter()
        .map(|m| {
            let train = TrainConfig {
                subset_size: Some(m),
                ..cfg.train.clone()
            };
            (format!("subset-{m}"), train)
        })
        .collect();
    (run_legs(legs, dataset, dir), warnings)
}

/// One leg per (algorithm, budget) cell.
pub fn run_budget_sweep(cfg: &ExperimentConfig, dataset: &Dataset, dir: &Path) -> Vec<LegSummary> {
    let mut legs = Vec::new();
    for &algo in &cfg.sweep.algos {
        for &budget in &cfg.sweep.budgets {
            let train = TrainConfig {
                algo,
                rollout_budget: Some(budget),
                ..cfg.train.clone()
            };
            legs.push((format!("{}-{budget}", algo.name()), train));
        }
    }
    run_legs(legs, dataset, dir)
}

/// DoPR with each selector variant, once under the constrained budget and
/// once for the full step count.
pub fn run_ablation(cfg: &ExperimentConfig, dataset: &Dataset, dir: &Path) -> Vec<LegSummary> {
    let budget = cfg.sweep.ablation_budget.or(cfg.sweep.budgets.first().copied());
    let mut legs = Vec::new();
    for &variant in &cfg.sweep.variants {
        let mut base = cfg.train.clone();
        base.algo = Algo::Dopr;
        base.selector.variant = variant;
        if let Some(b) = budget {
            let train = TrainConfig {
                rollout_budget: Some(b),
                ..base.clone()
            };
            legs.push((format!("{}-{b}", variant.name()), train));
        }
        let train = TrainConfig {
            rollout_budget: None,
            ..base
        };
        legs.push((format!("{}-converged", variant.name()), train));
    }
    run_legs(legs, dataset, dir)
}

pub fn write_summary(legs: &[LegSummary], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for leg in legs {
        w.serialize(leg)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn load_summary(path: &Path) -> Result<Vec<LegSummary>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

/// Validates `cfg`, prepares `dir` and runs the configured experiment.
/// Writes `config.resolved.json`, `report.md` and either `summary.csv`
/// plus per-leg metrics or `bound_report.json`.
pub fn execute(cfg: &ExperimentConfig, dir: &Path, force: bool) -> Result<Outcome> {
    cfg.validate()?;
    prepare_output_dir(dir, force)?;
    let mut resolved = cfg.clone();
    resolved.output_dir = Some(dir.to_path_buf());
    write_atomic(&dir.join("config.resolved.json"), resolved.to_json().as_bytes())?;

    let outcome = if cfg.experiment == ExperimentKind::Theory {
        let report = verify_theory(&cfg.theory)?;
        let json = serde_json::to_string_pretty(&report)?;
        write_atomic(&dir.join("bound_report.json"), json.as_bytes())?;
        Outcome::Theory(report)
    } else {
        let dataset = generate_dataset(&cfg.task)?;
        dataset.save(&dir.join("dataset.txt"))?;
        let (legs, warnings) = match cfg.experiment {
            ExperimentKind::SingleRun => (vec![run_single(cfg, &dataset, dir)?], Vec::new()),
            ExperimentKind::DataScaleSweep => run_data_scale_sweep(cfg, &dataset, dir),
            ExperimentKind::BudgetSweep => (run_budget_sweep(cfg, &dataset, dir), Vec::new()),
            ExperimentKind::Ablation => (run_ablation(cfg, &dataset, dir), Vec::new()),
            ExperimentKind::Theory => unreachable!(),
        };
        write_summary(&legs, &dir.join("summary.csv"))?;
        Outcome::Legs {
            kind: cfg.experiment,
            legs,
            warnings,
        }
    };
    write_atomic(&dir.join("report.md"), render_report(&resolved, &outcome).as_bytes())?;
    Ok(outcome)
}
