use std::fmt::Write as _;
use std::path::Path;

use super::runner::{load_summary, LegSummary, Outcome};
use super::{ExperimentConfig, ExperimentKind};
use crate::error::Result;
use crate::theory::TheoryReport;

/// A published LLM-scale figure shown next to desk-scale results for
/// orientation. Never compared against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PublishedReference {
    pub experiment: ExperimentKind,
    pub setting: &'static str,
    pub value: f64,
}

pub const PUBLISHED_REFERENCES: &[PublishedReference] = &[
    PublishedReference {
        experiment: ExperimentKind::DataScaleSweep,
        setting: "GRPO, 16 training samples, MATH",
        value: 69.8,
    },
    PublishedReference {
        experiment: ExperimentKind::DataScaleSweep,
        setting: "GRPO, full training set, MATH",
        value: 71.8,
    },
    PublishedReference {
        experiment: ExperimentKind::BudgetSweep,
        setting: "GRPO, 10k rollouts, benchmark average",
        value: 35.2,
    },
    PublishedReference {
        experiment: ExperimentKind::BudgetSweep,
        setting: "DoPR, 10k rollouts, benchmark average",
        value: 46.1,
    },
    PublishedReference {
        experiment: ExperimentKind::Ablation,
        setting: "DoPR, 10k rollouts, benchmark average",
        value: 45.7,
    },
    PublishedReference {
        experiment: ExperimentKind::Ablation,
        setting: "DoPR-None, 10k rollouts, benchmark average",
        value: 41.6,
    },
];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_owned(), |x| format!("{x:.3}"))
}

fn legs_table(out: &mut String, legs: &[LegSummary]) {
    out.push_str("| leg | algo | subset | budget | steps | rollouts | initial | final | full dataset | status |\n");
    out.push_str("|---|---|---|---|---|---|---|---|---|---|\n");
    for l in legs {
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            l.label,
            l.algo.name(),
            l.subset_size,
            l.budget.map_or_else(|| "-".to_owned(), |b| b.to_string()),
            l.steps,
            l.cumulative_rollouts,
            opt(l.initial_eval),
            opt(l.final_eval),
            opt(l.full_eval),
            l.error.as_deref().unwrap_or("ok"),
        );
    }
}

fn theory_section(out: &mut String, r: &TheoryReport) {
    out.push_str("| setting | α | δ | ε' | η | N_obs | N_pred | verdict |\n");
    out.push_str("|---|---|---|---|---|---|---|---|\n");
    for b in &r.bounds {
        let _ = writeln!(
            out,
            "| {} | {} | {:.4} | {} | {:.3} | {} | {} | {:?} |",
            b.label,
            b.alpha,
            b.noise_std,
            b.epsilon_prime,
            b.eta,
            b.steps_observed.map_or_else(|| "-".to_owned(), |n| n.to_string()),
            b.steps_predicted,
            b.verdict,
        );
    }
    let _ = writeln!(
        out,
        "\nLog scaling: slope {:.3}, R² {:.4} over {} points.",
        r.scaling.regression.slope,
        r.scaling.regression.r_squared,
        r.scaling.log_ratios.len()
    );
    let _ = writeln!(
        out,
        "PL/smoothness: {} violations in {} pairs; mis-declared L control: {} violations.",
        r.pl_check.smoothness_violations + r.pl_check.pl_violations,
        r.pl_check.samples,
        r.negative_control.smoothness_violations
    );
    let _ = writeln!(out, "\nOverall: {}", if r.passed { "PASS" } else { "FAIL" });
}

/// Markdown summary of an experiment with any published reference figures.
pub fn render_report(cfg: &ExperimentConfig, outcome: &Outcome) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {} report\n", cfg.experiment.name());
    let _ = writeln!(
        out,
        "Task: {} instances, vocabulary {}, target lengths {}..={}, task seed {}. Train seed {}.\n",
        cfg.task.num_instances,
        cfg.task.vocab_size,
        cfg.task.min_len,
        cfg.task.max_len,
        cfg.task.seed,
        cfg.train.seed
    );
    match outcome {
        Outcome::Legs { legs, warnings, .. } => {
            legs_table(&mut out, legs);
            for w in warnings {
                let _ = writeln!(out, "\nwarning: {w}");
            }
        }
        Outcome::Theory(r) => theory_section(&mut out, r),
    }
    let refs: Vec<&PublishedReference> = PUBLISHED_REFERENCES
        .iter()
        .filter(|r| r.experiment == cfg.experiment)
        .collect();
    if !refs.is_empty() {
        out.push_str("\n## Published LLM-scale figures (reference only, not comparable)\n\n");
        for r in refs {
            let _ = writeln!(out, "- {}: {:.1}", r.setting, r.value);
        }
    }
    out
}

/// Re-renders the report of a finished experiment directory.
pub fn report_from_dir(dir: &Path) -> Result<String> {
    let cfg = ExperimentConfig::load(&dir.join("config.resolved.json"))?;
    let outcome = if cfg.experiment == ExperimentKind::Theory {
        let text = std::fs::read_to_string(dir.join("bound_report.json"))?;
        Outcome::Theory(serde_json::from_str(&text)?)
    } else {
        Outcome::Legs {
            kind: cfg.experiment,
            legs: load_summary(&dir.join("summary.csv"))?,
            warnings: Vec::new(),
        }
    };
    Ok(render_report(&cfg, &outcome))
}
