//! Group-relative policy optimisation on tabular policies.
//!
//! The objective for one group of `G` responses is
//!
//! ```text
//! J = 1/G Σ_i 1/|o_i| Σ_t [ min(F·A_i, clip(F, 1-ε, 1+ε)·A_i) - β (F_ref - ln F_ref - 1) ]
//! ```
//!
//! with `F = π_θ/π_old` and `F_ref = π_θ/π_ref` evaluated per token, and
//! `A_i` the group-normalised outcome reward broadcast over the response.
//! Gradients are exact; the min/clip is differentiated piecewise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, ValidationErrors};
use crate::policy::{Gradient, PolicyParams, RolloutRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub learning_rate: f64,
    pub group_size: usize,
    pub inner_epochs: usize,
    pub std_floor: f64,
    /// Global gradient-norm cap applied before each step; `None` disables it.
    pub max_grad_norm: Option<f64>,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            kl_beta: 0.01,
            learning_rate: 10.0,
            group_size: 8,
            inner_epochs: 1,
            std_floor: 1e-8,
            max_grad_norm: Some(10.0),
        }
    }
}

impl GrpoConfig {
    pub fn collect_issues(&self, prefix: &str, issues: &mut ValidationErrors) {
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            issues.push(format!("{prefix}clip_eps"), "must lie in (0, 1)");
        }
        if !(self.kl_beta >= 0.0 && self.kl_beta.is_finite()) {
            issues.push(format!("{prefix}kl_beta"), "must be finite and >= 0");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            issues.push(format!("{prefix}learning_rate"), "must be finite and > 0");
        }
        if self.group_size < 2 {
            issues.push(format!("{prefix}group_size"), "must be at least 2");
        }
        if self.inner_epochs == 0 {
            issues.push(format!("{prefix}inner_epochs"), "must be positive");
        }
        if !(self.std_floor >= 0.0 && self.std_floor.is_finite()) {
            issues.push(format!("{prefix}std_floor"), "must be finite and >= 0");
        }
        if let Some(c) = self.max_grad_norm {
            if !(c > 0.0 && c.is_finite()) {
                issues.push(format!("{prefix}max_grad_norm"), "must be finite and > 0");
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let mut issues = ValidationErrors::default();
        self.collect_issues("", &mut issues);
        issues.into_result()
    }
}

/// `(r_i - mean) / max(std, std_floor)` with the population std.
/// A group with identical rewards and no floor gets all-zero advantages.
pub fn group_advantages(rewards: &[f64], std_floor: f64) -> Result<Vec<f64>> {
    if rewards.len() < 2 {
        return Err(Error::invalid(format!(
            "group advantages need at least 2 rewards, got {}",
            rewards.len()
        )));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let denom = std.max(std_floor);
    if denom == 0.0 {
        return Ok(vec![0.0; rewards.len()]);
    }
    Ok(rewards.iter().map(|r| (r - mean) / denom).collect())
}

/// Per-token importance ratio `π_new / π_old` for a rollout.
pub fn ratio(new: &PolicyParams, old: &PolicyParams, rollout: &RolloutRecord) -> Result<Vec<f64>> {
    let lp_new = new.logprob(rollout.instance_id, &rollout.tokens)?;
    let lp_old = old.logprob(rollout.instance_id, &rollout.tokens)?;
    Ok(lp_new
        .iter()
        .zip(&lp_old)
        .map(|(a, b)| (a - b).exp())
        .collect())
}

/// `F - ln F - 1`, the non-negative KL estimator.
pub fn kl_estimate(ratio: f64) -> Result<f64> {
    if !(ratio > 0.0) || !ratio.is_finite() {
        return Err(Error::invalid(format!(
            "KL estimator needs a finite positive ratio, got {ratio}"
        )));
    }
    Ok(ratio - ratio.ln() - 1.0)
}

/// One instance's group of rollouts, all sampled from the same snapshot.
#[derive(Debug, Clone)]
pub struct GroupBatch {
    pub instance_id: usize,
    pub rollouts: Vec<RolloutRecord>,
    pub advantages: Vec<f64>,
}

impl GroupBatch {
    /// Builds the group and its advantages from the rollout rewards.
    pub fn new(instance_id: usize, rollouts: Vec<RolloutRecord>, std_floor: f64) -> Result<Self> {
        if rollouts.is_empty() {
            return Err(Error::invalid("group has no rollouts"));
        }
        if let Some(r) = rollouts.iter().find(|r| r.instance_id != instance_id) {
            return Err(Error::invalid(format!(
                "rollout for instance {} in group for instance {instance_id}",
                r.instance_id
            )));
        }
        let rewards: Vec<f64> = rollouts.iter().map(|r| r.reward).collect();
        let advantages = group_advantages(&rewards, std_floor)?;
        Ok(Self {
            instance_id,
            rollouts,
            advantages,
        })
    }

    pub fn mean_reward(&self) -> f64 {
        self.rollouts.iter().map(|r| r.reward).sum::<f64>() / self.rollouts.len() as f64
    }
}

/// Surrogate value and its derivative w.r.t. the new log-probability of one
/// token. At a clip boundary the unclipped branch is used.
fn clipped_surrogate(f: f64, adv: f64, eps: f64) -> (f64, f64) {
    let unclipped = f * adv;
    let clipped = f.clamp(1.0 - eps, 1.0 + eps) * adv;
    if clipped < unclipped {
        (clipped, 0.0)
    } else {
        (unclipped, unclipped)
    }
}

/// Objective value and exact gradient w.r.t. `new`'s logits for one group.
pub fn grpo_loss_and_grad(
    new: &PolicyParams,
    old: &PolicyParams,
    reference: &PolicyParams,
    batch: &GroupBatch,
    cfg: &GrpoConfig,
) -> Result<(f64, Gradient)> {
    let mut grad = Gradient::zeros(new.dims());
    let value = accumulate_group(new, old, reference, batch, cfg, 1.0, &mut grad)?;
    Ok((value, grad))
}

/// Mean objective over several groups and its gradient (each group weighted 1/K).
pub fn grpo_multi_loss_and_grad(
    new: &PolicyParams,
    old: &PolicyParams,
    reference: &PolicyParams,
    batches: &[GroupBatch],
    cfg: &GrpoConfig,
) -> Result<(f64, Gradient)> {
    if batches.is_empty() {
        return Err(Error::invalid("no groups to optimise"));
    }
    let weight = 1.0 / batches.len() as f64;
    let mut grad = Gradient::zeros(new.dims());
    let mut value = 0.0;
    for b in batches {
        value += accumulate_group(new, old, reference, b, cfg, weight, &mut grad)?;
    }
    Ok((value, grad))
}

fn accumulate_group(
    new: &PolicyParams,
    old: &PolicyParams,
    reference: &PolicyParams,
    batch: &GroupBatch,
    cfg: &GrpoConfig,
    weight: f64,
    grad: &mut Gradient,
) -> Result<f64> {
    if batch.rollouts.is_empty() || batch.advantages.len() != batch.rollouts.len() {
        return Err(Error::invalid("group must hold one advantage per rollout"));
    }
    let g = batch.rollouts.len() as f64;
    let mut value = 0.0;
    let mut weights = Vec::new();
    for (rollout, &adv) in batch.rollouts.iter().zip(&batch.advantages) {
        if rollout.is_empty() {
            return Err(Error::invalid("empty rollout in group"));
        }
        let id = rollout.instance_id;
        let lp_new = new.logprob(id, &rollout.tokens)?;
        let lp_old = old.logprob(id, &rollout.tokens)?;
        let lp_ref = reference.logprob(id, &rollout.tokens)?;
        let scale = weight / (g * rollout.len() as f64);
        weights.clear();
        for t in 0..rollout.len() {
            let f = (lp_new[t] - lp_old[t]).exp();
            let (surrogate, d_surrogate) = clipped_surrogate(f, adv, cfg.clip_eps);
            let log_ref = lp_new[t] - lp_ref[t];
            let f_ref = log_ref.exp();
            let kl = f_ref - log_ref - 1.0;
            value += scale * (surrogate - cfg.kl_beta * kl);
            weights.push(scale * (d_surrogate - cfg.kl_beta * (f_ref - 1.0)));
        }
        new.accumulate_score(id, &rollout.tokens, &weights, grad)?;
    }
    Ok(value)
}

/// Gradient-ascent step `θ += α·g`, with `g` rescaled to `max_grad_norm`
/// when it is longer. Returns the norm of the applied step.
pub fn apply_update(params: &mut PolicyParams, grad: &Gradient, cfg: &GrpoConfig) -> Result<f64> {
    if let Some(e) = grad.shape_error(params) {
        return Err(e);
    }
    let norm = grad.norm();
    let mut k = cfg.learning_rate;
    if let Some(cap) = cfg.max_grad_norm {
        if norm > cap {
            k *= cap / norm;
        }
    }
    if k == 0.0 || norm == 0.0 {
        return Ok(0.0);
    }
    for (p, g) in params.as_mut_slice().iter_mut().zip(grad.as_slice()) {
        *p += k * g;
    }
    Ok(k * norm)
}
