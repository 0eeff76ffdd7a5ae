//! Training loops: dynamic one-shot refinement (DoPR), GRPO and the
//! fixed-instance One-Shot baseline, all charged against one rollout ledger.
//!
//! Per-step rollout cost:
//!
//! | algorithm   | rollouts per step |
//! |-------------|-------------------|
//! | DoPR family | `G + (K - 1)`     |
//! | GRPO        | `K · G`           |
//! | One-Shot    | `G`               |
//!
//! DoPR probes each of the `K` batch members once, selects one, and tops
//! its probe up to a full group with `G - 1` more rollouts.

mod ledger;
mod metrics;

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ValidationErrors};
use crate::grpo::{self, GroupBatch, GrpoConfig};
use crate::policy::{PolicyInit, PolicyParams, RolloutRecord};
use crate::rng::{self, Purpose};
use crate::selector::{Selection, Selector, SelectorConfig, SelectorVariant, StatsTable};
use crate::tasks::Dataset;

pub use ledger::RolloutLedger;
pub use metrics::{
    load_csv, read_csv, to_csv_string, write_csv, MetricsAppender, MetricsRow, METRICS_HEADER,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Algo {
    Dopr,
    Grpo,
    OneShot,
    /// DoPR with an ungated UCB bonus.
    DoprUcb,
    /// DoPR scored on reward variance alone.
    DoprNone,
    /// DoPR with random selection.
    DoprRandom,
}

impl Algo {
    pub fn name(self) -> &'static str {
        match self {
            Algo::Dopr => "DOPR",
            Algo::Grpo => "GRPO",
            Algo::OneShot => "ONE_SHOT",
            Algo::DoprUcb => "DOPR_UCB",
            Algo::DoprNone => "DOPR_NONE",
            Algo::DoprRandom => "DOPR_RANDOM",
        }
    }

    pub fn is_dopr_family(self) -> bool {
        matches!(
            self,
            Algo::Dopr | Algo::DoprUcb | Algo::DoprNone | Algo::DoprRandom
        )
    }

    /// Selector variant this algorithm runs with; plain DoPR uses the
    /// configured one.
    pub fn variant(self, configured: SelectorVariant) -> SelectorVariant {
        match self {
            Algo::DoprUcb => SelectorVariant::PlainUcb,
            Algo::DoprNone => SelectorVariant::VarianceOnly,
            Algo::DoprRandom => SelectorVariant::Random,
            _ => configured,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub algo: Algo,
    pub batch_size: usize,
    pub total_steps: usize,
    pub rollout_budget: Option<u64>,
    pub subset_size: Option<usize>,
    pub seed: u64,
    pub eval_every: usize,
    /// Instance trained by One-Shot; defaults to the lowest id in the subset.
    pub one_shot_instance: Option<usize>,
    pub checkpoint_every: Option<usize>,
    pub init: PolicyInit,
    pub grpo: GrpoConfig,
    pub selector: SelectorConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            algo: Algo::Dopr,
            batch_size: 8,
            total_steps: 12_000,
            rollout_budget: None,
            subset_size: None,
            seed: 0,
            eval_every: 10,
            one_shot_instance: None,
            checkpoint_every: None,
            init: PolicyInit::default(),
            grpo: GrpoConfig::default(),
            selector: SelectorConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn group_size(&self) -> usize {
        self.grpo.group_size
    }

    pub fn collect_issues(&self, prefix: &str, issues: &mut ValidationErrors) {
        if self.batch_size == 0 {
            issues.push(format!("{prefix}batch_size"), "must be positive");
        }
        if self.total_steps == 0 {
            issues.push(format!("{prefix}total_steps"), "must be positive");
        }
        if self.eval_every == 0 {
            issues.push(format!("{prefix}eval_every"), "must be positive");
        }
        if self.subset_size == Some(0) {
            issues.push(format!("{prefix}subset_size"), "must be positive when set");
        }
        if self.checkpoint_every == Some(0) {
            issues.push(format!("{prefix}checkpoint_every"), "must be positive when set");
        }
        if let PolicyInit::TargetPrior { strength, noise } = self.init {
            if !strength.is_finite() {
                issues.push(format!("{prefix}init.strength"), "must be finite");
            }
            if !(noise >= 0.0 && noise.is_finite()) {
                issues.push(format!("{prefix}init.noise"), "must be finite and >= 0");
            }
        }
        self.grpo.collect_issues(&format!("{prefix}grpo."), issues);
        self.selector.collect_issues(&format!("{prefix}selector."), issues);
    }

    /// Checks that also need the dataset size.
    pub fn collect_dataset_issues(&self, prefix: &str, dataset_len: usize, issues: &mut ValidationErrors) {
        if let Some(m) = self.subset_size {
            if m > dataset_len {
                issues.push(
                    format!("{prefix}subset_size"),
                    format!("{m} exceeds the dataset size {dataset_len}"),
                );
            }
        }
        if let Some(id) = self.one_shot_instance {
            if id >= dataset_len {
                issues.push(
                    format!("{prefix}one_shot_instance"),
                    format!("instance {id} does not exist"),
                );
            }
        }
    }

    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        let mut issues = ValidationErrors::default();
        self.collect_issues("", &mut issues);
        self.collect_dataset_issues("", dataset.len(), &mut issues);
        issues.into_result()
    }
}

/// Training subset: the first `m` ids of a seeded permutation, sorted.
/// Subsets for the same seed are nested.
pub fn training_subset(num_instances: usize, subset_size: Option<usize>, seed: u64) -> Vec<usize> {
    let Some(m) = subset_size else {
        return (0..num_instances).collect();
    };
    let mut ids: Vec<usize> = (0..num_instances).collect();
    let mut r = rng::stream(seed, Purpose::Subset, 0, 0, 0);
    ids.shuffle(&mut r);
    ids.truncate(m.min(num_instances));
    ids.sort_unstable();
    ids
}

/// Rollouts one step of `algo` costs with group size `g` and batch size `k`.
pub fn step_cost(algo: Algo, k: usize, g: usize) -> u64 {
    let (k, g) = (k as u64, g as u64);
    match algo {
        Algo::Grpo => k * g,
        Algo::OneShot => g,
        _ => g + k - 1,
    }
}

/// Everything a run carries from one step to the next.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: PolicyParams,
    /// Frozen initial policy; the KL penalty is measured against it.
    pub reference: PolicyParams,
    pub stats: StatsTable,
    pub ledger: RolloutLedger,
    /// Completed steps.
    pub step: u64,
    pub subset: Vec<usize>,
    pub batch_size: usize,
    pub one_shot_id: usize,
    selector: Selector,
    seed: u64,
}

impl TrainState {
    pub fn new(cfg: &TrainConfig, dataset: &Dataset) -> Result<Self> {
        cfg.validate(dataset)?;
        let params = PolicyParams::init(dataset, &cfg.init, cfg.seed)?;
        let subset = training_subset(dataset.len(), cfg.subset_size, cfg.seed);
        let one_shot_id = cfg.one_shot_instance.unwrap_or(subset[0]);
        let selector_cfg = SelectorConfig {
            variant: cfg.algo.variant(cfg.selector.variant),
            ..cfg.selector
        };
        Ok(Self {
            reference: params.clone(),
            params,
            stats: StatsTable::new(dataset.len()),
            ledger: RolloutLedger::new(dataset.len()),
            step: 0,
            batch_size: cfg.batch_size.min(subset.len()),
            subset,
            one_shot_id,
            selector: Selector::new(selector_cfg),
            seed: cfg.seed,
        })
    }

    /// Rollouts the next step of `cfg.algo` will cost.
    pub fn next_step_cost(&self, cfg: &TrainConfig) -> u64 {
        step_cost(cfg.algo, self.batch_size, cfg.group_size())
    }

    fn rollout(&self, dataset: &Dataset, step: u64, member: usize, index: usize, id: usize) -> RolloutRecord {
        let mut r = rng::stream(self.seed, Purpose::Rollout, step, member as u64, index as u64);
        let mut roll = self.params.sample(id, &mut r);
        roll.reward = dataset.verify(id, &roll.tokens);
        roll
    }

    fn draw_batch(&self, step: u64) -> Vec<usize> {
        let mut r = rng::stream(self.seed, Purpose::Batch, step, 0, 0);
        rand::seq::index::sample(&mut r, self.subset.len(), self.batch_size)
            .into_iter()
            .map(|i| self.subset[i])
            .collect()
    }

    /// Gradient ascent on the groups against the pre-step snapshot.
    fn update(&mut self, groups: &[GroupBatch], cfg: &GrpoConfig) -> Result<()> {
        let old = self.params.clone();
        for _ in 0..cfg.inner_epochs {
            let (_, grad) =
                grpo::grpo_multi_loss_and_grad(&self.params, &old, &self.reference, groups, cfg)?;
            grpo::apply_update(&mut self.params, &grad, cfg)?;
        }
        Ok(())
    }
}

fn summarise(rollouts: &[&RolloutRecord]) -> (f64, f64) {
    let n = rollouts.len() as f64;
    let reward = rollouts.iter().map(|r| r.reward).sum::<f64>() / n;
    let length = rollouts.iter().map(|r| r.len() as f64).sum::<f64>() / n;
    (reward, length)
}

fn finish_row(state: &mut TrainState, cost: u64, updated: &[usize], started: Instant, all: &[&RolloutRecord], selected: Option<usize>) -> MetricsRow {
    let elapsed = started.elapsed().as_secs_f64();
    state.ledger.record_step(cost, updated);
    let (reward, length) = summarise(all);
    MetricsRow {
        step: state.step,
        cumulative_rollouts: state.ledger.total(),
        train_mean_reward: Some(reward),
        eval_accuracy: None,
        mean_response_length: Some(length),
        update_wall_time_seconds: elapsed,
        selected_instance_id: selected,
    }
}

/// What a step sampled and trained on.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub batch: Vec<usize>,
    /// DoPR probe rollouts, one per batch member; empty for other algorithms.
    pub probes: Vec<RolloutRecord>,
    pub selection: Option<Selection>,
    /// Groups the update was computed on.
    pub groups: Vec<GroupBatch>,
}

pub type StepOutput = (MetricsRow, StepTrace);

/// One DoPR step: probe every batch member, select by acquisition score,
/// complete the winner's group and update on it.
pub fn dopr_step(state: &mut TrainState, dataset: &Dataset, cfg: &TrainConfig) -> Result<StepOutput> {
    let started = Instant::now();
    let step = state.step + 1;
    let g = cfg.group_size();
    let batch = state.draw_batch(step);

    let mut probes = Vec::with_capacity(batch.len());
    for (member, &id) in batch.iter().enumerate() {
        let probe = state.rollout(dataset, step, member, 0, id);
        let entropy = state.params.mean_entropy(id, probe.len())?;
        state.stats.observe(id, probe.reward, entropy, state.selector.config());
        probes.push(probe);
    }

    let mut select_rng = rng::stream(state.seed, Purpose::Select, step, 0, 0);
    let pick = state
        .selector
        .select(&mut state.stats, &batch, step, &mut select_rng)?;

    let mut group = Vec::with_capacity(g);
    group.push(probes[pick.index].clone());
    for index in 1..g {
        group.push(state.rollout(dataset, step, pick.index, index, pick.instance_id));
    }
    let group = GroupBatch::new(pick.instance_id, group, cfg.grpo.std_floor)?;
    state.update(std::slice::from_ref(&group), &cfg.grpo)?;
    state.step = step;

    let all: Vec<&RolloutRecord> = probes
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != pick.index)
        .map(|(_, r)| r)
        .chain(group.rollouts.iter())
        .collect();
    let cost = step_cost(cfg.algo, batch.len(), g);
    debug_assert_eq!(all.len() as u64, cost);
    let row = finish_row(state, cost, &[pick.instance_id], started, &all, Some(pick.instance_id));
    let trace = StepTrace {
        batch,
        probes,
        selection: Some(pick),
        groups: vec![group],
    };
    Ok((row, trace))
}

/// One GRPO step: a full group for every batch member, gradient averaged
/// over the groups.
pub fn grpo_step(state: &mut TrainState, dataset: &Dataset, cfg: &TrainConfig) -> Result<StepOutput> {
    let started = Instant::now();
    let step = state.step + 1;
    let g = cfg.group_size();
    let batch = state.draw_batch(step);
    let groups = batch
        .iter()
        .enumerate()
        .map(|(member, &id)| {
            let rollouts = (0..g)
                .map(|index| state.rollout(dataset, step, member, index, id))
                .collect();
            GroupBatch::new(id, rollouts, cfg.grpo.std_floor)
        })
        .collect::<Result<Vec<_>>>()?;
    state.update(&groups, &cfg.grpo)?;
    state.step = step;
    let all: Vec<&RolloutRecord> = groups.iter().flat_map(|b| b.rollouts.iter()).collect();
    let cost = step_cost(Algo::Grpo, batch.len(), g);
    debug_assert_eq!(all.len() as u64, cost);
    let row = finish_row(state, cost, &batch, started, &all, None);
    let trace = StepTrace {
        batch,
        probes: Vec::new(),
        selection: None,
        groups,
    };
    Ok((row, trace))
}

/// One One-Shot step: a full group on the fixed instance.
pub fn one_shot_step(state: &mut TrainState, dataset: &Dataset, cfg: &TrainConfig) -> Result<StepOutput> {
    let started = Instant::now();
    let step = state.step + 1;
    let g = cfg.group_size();
    let id = state.one_shot_id;
    let rollouts = (0..g).map(|index| state.rollout(dataset, step, 0, index, id)).collect();
    let group = GroupBatch::new(id, rollouts, cfg.grpo.std_floor)?;
    state.update(std::slice::from_ref(&group), &cfg.grpo)?;
    state.step = step;
    let all: Vec<&RolloutRecord> = group.rollouts.iter().collect();
    let row = finish_row(state, g as u64, &[id], started, &all, Some(id));
    let trace = StepTrace {
        batch: vec![id],
        probes: Vec::new(),
        selection: None,
        groups: vec![group],
    };
    Ok((row, trace))
}

pub fn train_step(state: &mut TrainState, dataset: &Dataset, cfg: &TrainConfig) -> Result<StepOutput> {
    match cfg.algo {
        Algo::Grpo => grpo_step(state, dataset, cfg),
        Algo::OneShot => one_shot_step(state, dataset, cfg),
        _ => dopr_step(state, dataset, cfg),
    }
}

/// Receives rows and checkpoints as a run progresses.
pub trait RunSink {
    fn on_row(&mut self, _row: &MetricsRow) -> Result<()> {
        Ok(())
    }
    fn on_checkpoint(&mut self, _state: &TrainState) -> Result<()> {
        Ok(())
    }
}

pub struct NullSink;
impl RunSink for NullSink {}

/// Appends metrics to `<dir>/metrics.csv` and writes checkpoints
/// (`checkpoint.txt`, `stats.txt`) atomically into `dir`.
pub struct DirSink {
    metrics: MetricsAppender,
    dir: std::path::PathBuf,
}

impl DirSink {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            metrics: MetricsAppender::create(&dir.join("metrics.csv"))?,
            dir: dir.to_path_buf(),
        })
    }
}

impl RunSink for DirSink {
    fn on_row(&mut self, row: &MetricsRow) -> Result<()> {
        self.metrics.append(row)
    }

    fn on_checkpoint(&mut self, state: &TrainState) -> Result<()> {
        state.params.save(&self.dir.join("checkpoint.txt"))?;
        state.stats.save(&self.dir.join("stats.txt"))
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub metrics: Vec<MetricsRow>,
    pub state: TrainState,
}

impl RunOutput {
    /// Eval accuracy of the last evaluated row (always the final one).
    pub fn final_eval(&self) -> f64 {
        self.metrics
            .iter()
            .rev()
            .find_map(|r| r.eval_accuracy)
            .unwrap_or(0.0)
    }
}

pub fn run(cfg: &TrainConfig, dataset: &Dataset) -> Result<RunOutput> {
    run_with_sink(cfg, dataset, &mut NullSink)
}

/// Runs until `total_steps` or until the next step would exceed the
/// rollout budget. Step 0 and the final step are always evaluated.
pub fn run_with_sink(cfg: &TrainConfig, dataset: &Dataset, sink: &mut dyn RunSink) -> Result<RunOutput> {
    let mut state = TrainState::new(cfg, dataset)?;
    let cost = state.next_step_cost(cfg);
    let fits = |total: u64| cfg.rollout_budget.is_none_or(|b| total + cost <= b);

    let initial = MetricsRow {
        step: 0,
        cumulative_rollouts: 0,
        train_mean_reward: None,
        eval_accuracy: Some(state.params.eval_accuracy(dataset, &state.subset)),
        mean_response_length: None,
        update_wall_time_seconds: 0.0,
        selected_instance_id: None,
    };
    sink.on_row(&initial)?;
    let mut metrics = vec![initial];

    while (state.step as usize) < cfg.total_steps && fits(state.ledger.total()) {
        let (mut row, _) = train_step(&mut state, dataset, cfg)?;
        let last = state.step as usize == cfg.total_steps || !fits(state.ledger.total());
        if last || state.step % cfg.eval_every as u64 == 0 {
            row.eval_accuracy = Some(state.params.eval_accuracy(dataset, &state.subset));
        }
        sink.on_row(&row)?;
        metrics.push(row);
        if let Some(every) = cfg.checkpoint_every {
            if state.step % every as u64 == 0 && !last {
                sink.on_checkpoint(&state)?;
            }
        }
    }
    sink.on_checkpoint(&state)?;
    Ok(RunOutput { metrics, state })
}
