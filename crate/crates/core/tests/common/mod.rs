#![allow(dead_code)]

use dopr_core::grpo::{grpo_loss_and_grad, GroupBatch, GrpoConfig};
use dopr_core::policy::{Dims, PolicyParams};
use dopr_core::rng::{self, Purpose};
use dopr_core::tasks::TaskSpec;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

/// Outcome of one finite-difference comparison.
pub enum FdCheck {
    Compared { rel_err: f64 },
    /// Some token ratio sits within the exclusion margin of a clip edge.
    NearBoundary,
}

/// Random (V, T_max) problem with G rollouts; compares the analytic GRPO
/// gradient against central differences of the objective.
pub fn grpo_fd_check(seed: u64, g: usize, margin: f64) -> FdCheck {
    let mut r = rng::stream(seed, Purpose::Init, 99, 0, 0);
    let v = r.random_range(2..=3usize);
    let max_len = r.random_range(1..=3usize);
    let spec = TaskSpec {
        num_instances: 2,
        vocab_size: v,
        min_len: 1,
        max_len,
        seed,
    };
    let dims = Dims::for_spec(&spec);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let small = Normal::new(0.0, 0.3).unwrap();
    let old_logits: Vec<f64> = (0..dims.len()).map(|_| normal.sample(&mut r)).collect();
    let new_logits: Vec<f64> = old_logits.iter().map(|x| x + small.sample(&mut r)).collect();
    let ref_logits: Vec<f64> = (0..dims.len()).map(|_| normal.sample(&mut r)).collect();
    let old = PolicyParams::from_logits(dims, old_logits).unwrap();
    let new = PolicyParams::from_logits(dims, new_logits).unwrap();
    let reference = PolicyParams::from_logits(dims, ref_logits).unwrap();

    let cfg = GrpoConfig {
        clip_eps: 0.2,
        kl_beta: r.random_range(0.0..0.5),
        group_size: g,
        ..GrpoConfig::default()
    };
    let rollouts = (0..g)
        .map(|_| {
            let mut roll = old.sample(0, &mut r);
            roll.reward = if r.random::<bool>() { 1.0 } else { 0.0 };
            roll
        })
        .collect();
    let batch = GroupBatch::new(0, rollouts, cfg.std_floor).unwrap();

    for roll in &batch.rollouts {
        let lp_new = new.logprob(0, &roll.tokens).unwrap();
        for (a, b) in lp_new.iter().zip(&roll.logprobs) {
            let f = (a - b).exp();
            if (f - (1.0 - cfg.clip_eps)).abs() < margin || (f - (1.0 + cfg.clip_eps)).abs() < margin {
                return FdCheck::NearBoundary;
            }
        }
    }

    let (_, analytic) = grpo_loss_and_grad(&new, &old, &reference, &batch, &cfg).unwrap();
    let objective = |p: &PolicyParams| grpo_loss_and_grad(p, &old, &reference, &batch, &cfg).unwrap().0;
    let h = 1e-5;
    let mut diff2 = 0.0;
    let mut an2 = 0.0;
    let mut fd2 = 0.0;
    for k in 0..dims.len() {
        let mut plus = new.clone();
        plus.as_mut_slice()[k] += h;
        let mut minus = new.clone();
        minus.as_mut_slice()[k] -= h;
        let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
        let an = analytic.as_slice()[k];
        diff2 += (fd - an).powi(2);
        an2 += an * an;
        fd2 += fd * fd;
    }
    let scale = an2.sqrt().max(fd2.sqrt()).max(1e-6);
    FdCheck::Compared {
        rel_err: diff2.sqrt() / scale,
    }
}

use dopr_core::selector::{Selector, SelectorConfig, StatsTable};

/// One step of a selector history: batch ids with their probe reward and entropy.
#[derive(Debug, Clone)]
pub struct HistoryStep {
    pub batch: Vec<usize>,
    pub rewards: Vec<f64>,
    pub entropies: Vec<f64>,
}

/// Random history over `n` instances, batches of `k`, `steps` steps.
/// Entropies are multiples of 1/8 in [0, 4] so affine maps by integers and
/// powers of two stay exact.
pub fn random_history(seed: u64, n: usize, k: usize, steps: usize) -> Vec<HistoryStep> {
    let mut r = rng::stream(seed, Purpose::Batch, 7, 7, 0);
    (0..steps)
        .map(|_| {
            let batch = rand::seq::index::sample(&mut r, n, k).into_vec();
            let rewards = (0..k).map(|_| if r.random::<f64>() < 0.4 { 1.0 } else { 0.0 }).collect();
            let entropies = (0..k).map(|_| r.random_range(0..=32u32) as f64 / 8.0).collect();
            HistoryStep { batch, rewards, entropies }
        })
        .collect()
}

/// Per-step selector output, from either the library or the oracle.
#[derive(Debug, Clone, PartialEq)]
pub struct StepView {
    pub mu: Vec<f64>,
    pub var: Vec<f64>,
    pub ucb: Vec<f64>,
    pub score: Vec<f64>,
    pub winner: usize,
}

pub fn library_fold(history: &[HistoryStep], n: usize, cfg: &SelectorConfig) -> Vec<StepView> {
    let mut table = StatsTable::new(n);
    let mut sel = Selector::new(*cfg);
    let mut r = rng::stream(0, Purpose::Select, 0, 0, 0);
    history
        .iter()
        .enumerate()
        .map(|(i, h)| {
            for ((&id, &rew), &ent) in h.batch.iter().zip(&h.rewards).zip(&h.entropies) {
                table.observe(id, rew, ent, cfg);
            }
            let pick = sel.select(&mut table, &h.batch, i as u64 + 1, &mut r).unwrap();
            StepView {
                mu: h.batch.iter().map(|&id| table.get(id).mu).collect(),
                var: h.batch.iter().map(|&id| table.get(id).var).collect(),
                ucb: pick.scores.iter().map(|s| s.ucb).collect(),
                score: pick.scores.iter().map(|s| s.score).collect(),
                winner: pick.index,
            }
        })
        .collect()
}

/// Independent fold of the EMA, gate, bonus and score definitions.
pub fn oracle_fold(history: &[HistoryStep], n: usize, rho1: f64, rho2: f64, lambda: f64, eps: f64) -> Vec<StepView> {
    let mut mu = vec![0.0f64; n];
    let mut var = vec![0.0f64; n];
    let mut picks = vec![0u64; n];
    let mut out = Vec::new();
    for (i, h) in history.iter().enumerate() {
        let t = (i + 1) as f64;
        for (&id, &rew) in h.batch.iter().zip(&h.rewards) {
            let m = rho1 * rew + (1.0 - rho1) * mu[id];
            var[id] = rho2 * (rew - m) * (rew - m) + (1.0 - rho2) * var[id];
            mu[id] = m;
        }
        let k = h.batch.len() as f64;
        let hm = h.entropies.iter().sum::<f64>() / k;
        let hs = (h.entropies.iter().map(|e| (e - hm) * (e - hm)).sum::<f64>() / k).sqrt();
        let mut ucb = Vec::new();
        let mut score = Vec::new();
        for (&id, &e) in h.batch.iter().zip(&h.entropies) {
            let z = (e - hm) / (hs + eps);
            let gate = 1.0 / (1.0 + (-z).exp());
            let u = gate * ((t + 1.0).ln() / (picks[id] as f64 + 1.0)).sqrt();
            ucb.push(u);
            score.push(var[id].sqrt() + lambda * u);
        }
        let mut winner = 0;
        for j in 1..score.len() {
            if score[j] > score[winner] {
                winner = j;
            }
        }
        picks[h.batch[winner]] += 1;
        out.push(StepView {
            mu: h.batch.iter().map(|&id| mu[id]).collect(),
            var: h.batch.iter().map(|&id| var[id]).collect(),
            ucb,
            score,
            winner,
        });
    }
    out
}

/// Largest absolute disagreement between two folds, and whether every
/// argmax matched.
pub fn compare_folds(a: &[StepView], b: &[StepView]) -> (f64, bool) {
    let mut worst = 0.0f64;
    let mut same = a.len() == b.len();
    for (x, y) in a.iter().zip(b) {
        for (p, q) in [(&x.mu, &y.mu), (&x.var, &y.var), (&x.ucb, &y.ucb), (&x.score, &y.score)] {
            for (u, v) in p.iter().zip(q.iter()) {
                worst = worst.max((u - v).abs());
            }
        }
        same &= x.winner == y.winner;
    }
    (worst, same)
}

/// Winners after mapping every entropy through `h -> scale·h + shift`.
pub fn winners_under_affine(history: &[HistoryStep], n: usize, cfg: &SelectorConfig, scale: f64, shift: f64) -> Vec<usize> {
    let moved: Vec<HistoryStep> = history
        .iter()
        .map(|h| HistoryStep {
            entropies: h.entropies.iter().map(|e| scale * e + shift).collect(),
            ..h.clone()
        })
        .collect();
    library_fold(&moved, n, cfg).into_iter().map(|s| s.winner).collect()
}
