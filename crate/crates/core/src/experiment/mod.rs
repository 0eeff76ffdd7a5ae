//! Experiment configuration and orchestration: single runs, data-scale and
//! budget sweeps, selector ablations and the theory check.

mod report;
mod runner;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationErrors};
use crate::selector::SelectorVariant;
use crate::tasks::TaskSpec;
use crate::theory::TheoryConfig;
use crate::trainer::{Algo, TrainConfig};

pub use report::{render_report, report_from_dir, PublishedReference, PUBLISHED_REFERENCES};
pub use runner::{
    execute, load_summary, prepare_output_dir, run_ablation, run_budget_sweep,
    run_data_scale_sweep, run_single, write_summary, LegSummary, Outcome,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    #[default]
    SingleRun,
    DataScaleSweep,
    BudgetSweep,
    Ablation,
    Theory,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::SingleRun => "single_run",
            ExperimentKind::DataScaleSweep => "data_scale_sweep",
            ExperimentKind::BudgetSweep => "budget_sweep",
            ExperimentKind::Ablation => "ablation",
            ExperimentKind::Theory => "theory",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Full {
    Full,
}

/// A subset size: a count, or `"full"` for the whole dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SubsetSize {
    Count(usize),
    Full(Full),
}

impl SubsetSize {
    pub fn resolve(self, num_instances: usize) -> usize {
        match self {
            SubsetSize::Count(m) => m,
            SubsetSize::Full(_) => num_instances,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub subset_sizes: Vec<SubsetSize>,
    pub budgets: Vec<u64>,
    pub algos: Vec<Algo>,
    pub variants: Vec<SelectorVariant>,
    /// Constrained budget for ablations; unset means the first of `budgets`.
    pub ablation_budget: Option<u64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            subset_sizes: vec![
                SubsetSize::Count(4),
                SubsetSize::Count(8),
                SubsetSize::Count(16),
                SubsetSize::Full(Full::Full),
            ],
            budgets: vec![2_000, 10_000, 40_000],
            algos: vec![Algo::Dopr, Algo::Grpo],
            variants: SelectorVariant::ALL.to_vec(),
            ablation_budget: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub task: TaskSpec,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
    pub theory: TheoryConfig,
    pub output_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: ExperimentKind::SingleRun,
            task: TaskSpec::default(),
            train: TrainConfig::default(),
            sweep: SweepConfig::default(),
            theory: TheoryConfig::default(),
            output_dir: None,
        }
    }
}

impl ExperimentConfig {
    /// Parses JSON; type errors carry the dotted path of the bad field.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        match serde_path_to_error::deserialize(de) {
            Ok(cfg) => Ok(cfg),
            Err(err) => {
                let path = err.path().to_string();
                let inner = err.into_inner();
                if inner.is_syntax() || inner.is_eof() {
                    return Err(Error::Json(inner));
                }
                Err(Error::field(path, inner.to_string()))
            }
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Every offending field across task, training and sweep settings.
    pub fn validate(&self) -> Result<()> {
        let mut issues = ValidationErrors::default();
        self.task.collect_issues("task.", &mut issues);
        self.train.collect_issues("train.", &mut issues);
        self.train
            .collect_dataset_issues("train.", self.task.num_instances, &mut issues);
        let sweep = &self.sweep;
        match self.experiment {
            ExperimentKind::DataScaleSweep => {
                if sweep.subset_sizes.is_empty() {
                    issues.push("sweep.subset_sizes", "must not be empty");
                }
                for (i, s) in sweep.subset_sizes.iter().enumerate() {
                    let m = s.resolve(self.task.num_instances);
                    if m == 0 || m > self.task.num_instances {
                        issues.push(
                            format!("sweep.subset_sizes[{i}]"),
                            format!("{m} is outside 1..={}", self.task.num_instances),
                        );
                    }
                }
            }
            ExperimentKind::BudgetSweep => {
                if sweep.budgets.is_empty() {
                    issues.push("sweep.budgets", "must not be empty");
                }
                if sweep.algos.is_empty() {
                    issues.push("sweep.algos", "must not be empty");
                }
            }
            ExperimentKind::Ablation => {
                if sweep.variants.is_empty() {
                    issues.push("sweep.variants", "must not be empty");
                }
                if sweep.ablation_budget.is_none() && sweep.budgets.is_empty() {
                    issues.push("sweep.ablation_budget", "needed when sweep.budgets is empty");
                }
            }
            ExperimentKind::SingleRun | ExperimentKind::Theory => {}
        }
        if self.experiment == ExperimentKind::Theory {
            let t = &self.theory;
            if t.dimension == 0 {
                issues.push("theory.dimension", "must be positive");
            }
            if !(t.pl_constant > 0.0) {
                issues.push("theory.pl_constant", "must be > 0");
            }
            if !(t.epsilon > t.epsilon_prime && t.epsilon_prime > 0.0) {
                issues.push("theory.epsilon_prime", "need epsilon > epsilon_prime > 0");
            }
            if t.repeats < 2 {
                issues.push("theory.repeats", "need at least 2 repeats for a standard error");
            }
            if !(t.alpha > 0.0 && 1.0 - t.pl_constant / 2.0 * t.alpha / 2.0 >= 0.5) {
                issues.push("theory.alpha", "violates 1 - L·α/2 >= 1/2 with L = c/2");
            }
        }
        issues.into_result()
    }

    /// Subset sizes resolved against the dataset, duplicates dropped.
    /// Returns the sizes and one warning per dropped duplicate.
    pub fn resolved_subset_sizes(&self) -> (Vec<usize>, Vec<String>) {
        let mut sizes = Vec::new();
        let mut warnings = Vec::new();
        for s in &self.sweep.subset_sizes {
            let m = s.resolve(self.task.num_instances);
            if sizes.contains(&m) {
                warnings.push(format!("duplicate subset size {m} ignored"));
            } else {
                sizes.push(m);
            }
        }
        (sizes, warnings)
    }
}
