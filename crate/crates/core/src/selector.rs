//! Per-instance reward statistics and the acquisition rule that picks one
//! instance per batch.
//!
//! Each probed instance keeps an exponential moving mean `μ` and variance
//! `σ²` of its rewards. The score is `S = σ + λ·U`, where the exploration
//! term `U = gate · sqrt(ln(t+1) / (n+1))` is gated by a sigmoid of the
//! instance's policy entropy standardised across the batch.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationErrors};
use crate::rng::Rng;
use crate::textfmt;

const STATS_HEADER: &str = "dopr-stats v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SelectorVariant {
    /// Entropy-gated UCB.
    EmUcb,
    /// UCB with the gate fixed at 1.
    PlainUcb,
    /// Reward standard deviation alone.
    VarianceOnly,
    /// Uniform random scores.
    Random,
}

impl SelectorVariant {
    pub const ALL: [SelectorVariant; 4] = [
        SelectorVariant::EmUcb,
        SelectorVariant::PlainUcb,
        SelectorVariant::VarianceOnly,
        SelectorVariant::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SelectorVariant::EmUcb => "EM_UCB",
            SelectorVariant::PlainUcb => "PLAIN_UCB",
            SelectorVariant::VarianceOnly => "VARIANCE_ONLY",
            SelectorVariant::Random => "RANDOM",
        }
    }
}

/// Where the entropy standardisation statistics come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EntropyNorm {
    /// Mean and population std of the current batch's entropies.
    Batch,
    /// Exponential moving averages of the batch mean and variance.
    Running { rho: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectorConfig {
    pub rho1: f64,
    pub rho2: f64,
    pub lambda: f64,
    pub sigmoid_eps: f64,
    pub variant: SelectorVariant,
    pub entropy_norm: EntropyNorm,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        Self {
            rho1: 0.3,
            rho2: 0.3,
            lambda: 1.0,
            sigmoid_eps: 1e-6,
            variant: SelectorVariant::EmUcb,
            entropy_norm: EntropyNorm::Batch,
        }
    }
}

impl SelectorConfig {
    pub fn collect_issues(&self, prefix: &str, issues: &mut ValidationErrors) {
        for (name, v) in [("rho1", self.rho1), ("rho2", self.rho2)] {
            if !(v > 0.0 && v <= 1.0) {
                issues.push(format!("{prefix}{name}"), "must lie in (0, 1]");
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            issues.push(format!("{prefix}lambda"), "must be finite and >= 0");
        }
        if !(self.sigmoid_eps > 0.0 && self.sigmoid_eps.is_finite()) {
            issues.push(format!("{prefix}sigmoid_eps"), "must be finite and > 0");
        }
        if let EntropyNorm::Running { rho } = self.entropy_norm {
            if !(rho > 0.0 && rho <= 1.0) {
                issues.push(format!("{prefix}entropy_norm.rho"), "must lie in (0, 1]");
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut issues = ValidationErrors::default();
        self.collect_issues("", &mut issues);
        issues.into_result()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SampleStats {
    pub mu: f64,
    pub var: f64,
    pub count: u64,
    pub last_entropy: f64,
}

impl SampleStats {
    pub fn std(&self) -> f64 {
        self.var.sqrt()
    }
}

/// EMA update; the variance uses the already-updated mean.
pub fn update_stats(stats: &SampleStats, reward: f64, cfg: &SelectorConfig) -> SampleStats {
    let mu = cfg.rho1 * reward + (1.0 - cfg.rho1) * stats.mu;
    let var = cfg.rho2 * (reward - mu).powi(2) + (1.0 - cfg.rho2) * stats.var;
    SampleStats { mu, var, ..*stats }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Mean and population standard deviation.
pub fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Sigmoid of `(h - mean) / (std + eps)`.
pub fn gate(h: f64, mean: f64, std: f64, eps: f64) -> f64 {
    sigmoid((h - mean) / (std + eps))
}

/// Gate value for `h` against the batch's own entropy statistics.
pub fn entropy_gate(h: f64, batch_entropies: &[f64], eps: f64) -> Result<f64> {
    if batch_entropies.is_empty() {
        return Err(Error::invalid("entropy gate needs a non-empty batch"));
    }
    let (mean, std) = mean_and_std(batch_entropies);
    Ok(gate(h, mean, std, eps))
}

/// `gate · sqrt(ln(t+1) / (n+1))`.
pub fn exploration_bonus(gate: f64, count: u64, step: u64) -> f64 {
    gate * ((step as f64 + 1.0).ln() / (count as f64 + 1.0)).sqrt()
}

/// Exploration term for the configured variant.
pub fn ucb_term(stats: &SampleStats, gate: f64, step: u64, cfg: &SelectorConfig) -> f64 {
    match cfg.variant {
        SelectorVariant::EmUcb => exploration_bonus(gate, stats.count, step),
        SelectorVariant::PlainUcb => exploration_bonus(1.0, stats.count, step),
        SelectorVariant::VarianceOnly | SelectorVariant::Random => 0.0,
    }
}

/// Acquisition score. The random variant ignores the statistics and draws
/// from `rng`.
pub fn acquisition_score(stats: &SampleStats, ucb: f64, cfg: &SelectorConfig, rng: &mut Rng) -> f64 {
    match cfg.variant {
        SelectorVariant::EmUcb | SelectorVariant::PlainUcb => stats.std() + cfg.lambda * ucb,
        SelectorVariant::VarianceOnly => stats.std(),
        SelectorVariant::Random => rng.random(),
    }
}

/// Index of the largest score, lowest index on ties.
pub fn argmax(scores: &[f64]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::invalid("cannot select from an empty batch"));
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreBreakdown {
    pub gate: f64,
    pub ucb: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// Position of the winner within the batch.
    pub index: usize,
    pub instance_id: usize,
    pub scores: Vec<ScoreBreakdown>,
}

/// Per-instance statistics for a whole dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsTable {
    rows: Vec<SampleStats>,
}

impl StatsTable {
    pub fn new(num_instances: usize) -> Self {
        Self {
            rows: vec![SampleStats::default(); num_instances],
        }
    }

    pub fn get(&self, id: usize) -> &SampleStats {
        &self.rows[id]
    }

    pub fn rows(&self) -> &[SampleStats] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Records a probe: reward into the EMAs and the probe's mean entropy.
    pub fn observe(&mut self, id: usize, reward: f64, entropy: f64, cfg: &SelectorConfig) {
        let next = update_stats(&self.rows[id], reward, cfg);
        self.rows[id] = SampleStats {
            last_entropy: entropy,
            ..next
        };
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{STATS_HEADER}");
        let _ = writeln!(out, "# table num_instances={}", self.rows.len());
        for (id, s) in self.rows.iter().enumerate() {
            let _ = writeln!(
                out,
                "{id} {:.16e} {:.16e} {} {:.16e}",
                s.mu, s.var, s.count, s.last_entropy
            );
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let c = textfmt::parse(text, STATS_HEADER)?;
        let (line, kv) = textfmt::key_values(&c, "table")?;
        let n: usize = textfmt::field(&kv, line, "num_instances")?;
        if c.rows.len() != n {
            return Err(Error::format(
                line,
                format!("expected {n} rows, found {}", c.rows.len()),
            ));
        }
        let mut rows = Vec::with_capacity(n);
        for (k, (ln, words)) in c.rows.iter().enumerate() {
            if words.len() != 5 {
                return Err(Error::format(*ln, "expected `id mu var count entropy`"));
            }
            let id: usize = textfmt::parse_word(words[0], *ln, "id")?;
            if id != k {
                return Err(Error::format(*ln, format!("expected id {k}, found {id}")));
            }
            let s = SampleStats {
                mu: textfmt::parse_word(words[1], *ln, "mu")?,
                var: textfmt::parse_word(words[2], *ln, "var")?,
                count: textfmt::parse_word(words[3], *ln, "count")?,
                last_entropy: textfmt::parse_word(words[4], *ln, "entropy")?,
            };
            if !(s.var >= 0.0) {
                return Err(Error::format(*ln, "negative variance"));
            }
            rows.push(s);
        }
        Ok(Self { rows })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        textfmt::write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

/// Acquisition rule with its (optional) running entropy normaliser.
#[derive(Debug, Clone)]
pub struct Selector {
    cfg: SelectorConfig,
    running: Option<(f64, f64)>,
}

impl Selector {
    pub fn new(cfg: SelectorConfig) -> Self {
        Self { cfg, running: None }
    }

    pub fn config(&self) -> &SelectorConfig {
        &self.cfg
    }

    fn entropy_stats(&mut self, entropies: &[f64]) -> (f64, f64) {
        let (mean, std) = mean_and_std(entropies);
        match self.cfg.entropy_norm {
            EntropyNorm::Batch => (mean, std),
            EntropyNorm::Running { rho } => {
                let (m, v) = match self.running {
                    None => (mean, std * std),
                    Some((m, v)) => (rho * mean + (1.0 - rho) * m, rho * std * std + (1.0 - rho) * v),
                };
                self.running = Some((m, v));
                (m, v.sqrt())
            }
        }
    }

    /// Scores the batch members (instance ids into `table`) at step `step`.
    pub fn score(
        &mut self,
        table: &StatsTable,
        batch: &[usize],
        step: u64,
        rng: &mut Rng,
    ) -> Result<Vec<ScoreBreakdown>> {
        if batch.is_empty() {
            return Err(Error::invalid("cannot score an empty batch"));
        }
        let entropies: Vec<f64> = batch.iter().map(|&id| table.get(id).last_entropy).collect();
        let (mean, std) = self.entropy_stats(&entropies);
        Ok(batch
            .iter()
            .zip(&entropies)
            .map(|(&id, &h)| {
                let stats = table.get(id);
                let g = match self.cfg.variant {
                    SelectorVariant::EmUcb => gate(h, mean, std, self.cfg.sigmoid_eps),
                    _ => 1.0,
                };
                let ucb = ucb_term(stats, g, step, &self.cfg);
                let score = acquisition_score(stats, ucb, &self.cfg, rng);
                ScoreBreakdown {
                    gate: g,
                    ucb,
                    score,
                }
            })
            .collect())
    }

    /// Scores the batch, picks the argmax and increments its selection count.
    pub fn select(
        &mut self,
        table: &mut StatsTable,
        batch: &[usize],
        step: u64,
        rng: &mut Rng,
    ) -> Result<Selection> {
        let scores = self.score(table, batch, step, rng)?;
        let values: Vec<f64> = scores.iter().map(|s| s.score).collect();
        let index = argmax(&values)?;
        let instance_id = batch[index];
        table.rows[instance_id].count += 1;
        Ok(Selection {
            index,
            instance_id,
            scores,
        })
    }
}
