//! Empirical check of the single-sample convergence bound.
//!
//! On a concave quadratic `J(θ) = J* - (c/4)‖θ - θ*‖²` the PL inequality
//! `‖∇J‖² ≥ c·Δ` holds with equality and `J` is `L`-smooth with `L = c/2`.
//! Noisy gradient ascent `θ ← θ + α(∇J + ξ)`, `E‖ξ‖² = δ²`, then satisfies
//!
//! ```text
//! E[Δ_t] ≤ (1 - η)^t Δ_0 + ε'/2,    η = αc/2,
//! ```
//!
//! whenever `1 - Lα/2 ≥ 1/2` and `Lα²δ²/2 ≤ ηε'/2`, so the gap drops below
//! `ε'` after at most `⌈(ln(ε'/2) - ln ε) / ln(1 - η)⌉` steps.

use rand_distr::{Distribution, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyObjective {
    pub theta_star: Vec<f64>,
    pub j_star: f64,
    pub pl_constant: f64,
    /// Declared smoothness constant; the true one is `c/2`.
    pub smoothness: f64,
    pub noise_std: f64,
}

impl ToyObjective {
    pub fn quadratic(theta_star: Vec<f64>, pl_constant: f64, noise_std: f64) -> Result<Self> {
        if theta_star.is_empty() {
            return Err(Error::invalid("objective needs at least one dimension"));
        }
        if !(pl_constant > 0.0 && pl_constant.is_finite()) {
            return Err(Error::invalid("PL constant must be finite and > 0"));
        }
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::invalid("noise std must be finite and >= 0"));
        }
        Ok(Self {
            theta_star,
            j_star: 1.0,
            pl_constant,
            smoothness: pl_constant / 2.0,
            noise_std,
        })
    }

    /// Overrides the declared `L` (used for negative controls).
    pub fn with_declared_smoothness(mut self, smoothness: f64) -> Self {
        self.smoothness = smoothness;
        self
    }

    pub fn with_noise(mut self, noise_std: f64) -> Self {
        self.noise_std = noise_std;
        self
    }

    pub fn dimension(&self) -> usize {
        self.theta_star.len()
    }

    fn sq_dist(&self, theta: &[f64]) -> f64 {
        theta
            .iter()
            .zip(&self.theta_star)
            .map(|(a, b)| (a - b).powi(2))
            .sum()
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        self.j_star - self.pl_constant / 4.0 * self.sq_dist(theta)
    }

    pub fn gap(&self, theta: &[f64]) -> f64 {
        self.pl_constant / 4.0 * self.sq_dist(theta)
    }

    pub fn grad(&self, theta: &[f64]) -> Vec<f64> {
        theta
            .iter()
            .zip(&self.theta_star)
            .map(|(a, b)| -self.pl_constant / 2.0 * (a - b))
            .collect()
    }

    /// A point whose gap is exactly `gap`, displaced along the first axis.
    pub fn point_with_gap(&self, gap: f64) -> Vec<f64> {
        let mut theta = self.theta_star.clone();
        theta[0] += (4.0 * gap / self.pl_constant).sqrt();
        theta
    }

    /// `η = αc/2`.
    pub fn contraction_rate(&self, alpha: f64) -> f64 {
        alpha * self.pl_constant / 2.0
    }

    pub fn check_step_size(&self, alpha: f64) -> Result<()> {
        let lhs = 1.0 - self.smoothness * alpha / 2.0;
        if !(alpha > 0.0) || lhs < 0.5 {
            return Err(Error::invalid(format!(
                "step size violates 1 - L·α/2 >= 1/2: 1 - {}·{}/2 = {lhs}",
                self.smoothness, alpha
            )));
        }
        Ok(())
    }

    /// `L α² δ² / 2 ≤ η ε' / 2`.
    pub fn noise_condition_holds(&self, alpha: f64, epsilon_prime: f64) -> bool {
        let lhs = self.smoothness * alpha * alpha * self.noise_std.powi(2) / 2.0;
        let rhs = self.contraction_rate(alpha) * epsilon_prime / 2.0;
        lhs <= rhs * (1.0 + 1e-12)
    }

    /// Largest noise std satisfying the noise condition.
    pub fn boundary_noise(&self, alpha: f64, epsilon_prime: f64) -> f64 {
        (self.contraction_rate(alpha) * epsilon_prime / (self.smoothness * alpha * alpha)).sqrt()
    }
}

/// Mean gap per step over independent noise streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub mean_gap: Vec<f64>,
    pub std_err: Vec<f64>,
    pub repeats: usize,
}

impl Trajectory {
    pub fn initial_gap(&self) -> f64 {
        self.mean_gap[0]
    }
}

/// Runs `repeats` noisy gradient-ascent trajectories of `steps` steps from
/// `theta0` and averages the gap. Repeat `r` draws from its own stream.
pub fn sgd_trajectory(
    obj: &ToyObjective,
    theta0: &[f64],
    alpha: f64,
    steps: usize,
    repeats: usize,
    seed: u64,
) -> Result<Trajectory> {
    obj.check_step_size(alpha)?;
    if theta0.len() != obj.dimension() {
        return Err(Error::invalid("theta0 has the wrong dimension"));
    }
    if repeats == 0 {
        return Err(Error::invalid("need at least one repeat"));
    }
    let per_coord = obj.noise_std / (obj.dimension() as f64).sqrt();
    let normal = Normal::new(0.0, per_coord).map_err(|e| Error::invalid(e.to_string()))?;
    let runs: Vec<Vec<f64>> = (0..repeats)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng::stream(seed, Purpose::Theory, r as u64, 0, 0);
            let mut theta = theta0.to_vec();
            let mut gaps = Vec::with_capacity(steps + 1);
            gaps.push(obj.gap(&theta));
            for _ in 0..steps {
                let g = obj.grad(&theta);
                for (x, gi) in theta.iter_mut().zip(g) {
                    let noise = if per_coord > 0.0 { normal.sample(&mut rng) } else { 0.0 };
                    *x += alpha * (gi + noise);
                }
                gaps.push(obj.gap(&theta));
            }
            gaps
        })
        .collect();

    let n = repeats as f64;
    let mut mean_gap = Vec::with_capacity(steps + 1);
    let mut std_err = Vec::with_capacity(steps + 1);
    for t in 0..=steps {
        let mean = runs.iter().map(|g| g[t]).sum::<f64>() / n;
        let se = if repeats > 1 {
            let var = runs.iter().map(|g| (g[t] - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        mean_gap.push(mean);
        std_err.push(se);
    }
    Ok(Trajectory {
        mean_gap,
        std_err,
        repeats,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// Preconditions do not hold, so the bound claims nothing.
    Vacuous,
    /// The trajectory never reached the target gap.
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrenceCheck {
    pub verdict: Verdict,
    pub eta: f64,
    /// `bound_t + 3·SE_t - E[Δ_t]`; negative entries are violations.
    pub margins: Vec<f64>,
    pub worst_margin: f64,
    pub first_violation: Option<usize>,
}

/// Checks `E[Δ_t] ≤ (1-η)^t Δ_0 + ε'/2` at every step, with 3 standard
/// errors of statistical slack.
pub fn verify_recurrence(
    obj: &ToyObjective,
    alpha: f64,
    traj: &Trajectory,
    epsilon_prime: f64,
) -> RecurrenceCheck {
    let eta = obj.contraction_rate(alpha);
    if obj.check_step_size(alpha).is_err() || !obj.noise_condition_holds(alpha, epsilon_prime) {
        return RecurrenceCheck {
            verdict: Verdict::Vacuous,
            eta,
            margins: Vec::new(),
            worst_margin: f64::NAN,
            first_violation: None,
        };
    }
    let d0 = traj.initial_gap();
    let margins: Vec<f64> = traj
        .mean_gap
        .iter()
        .zip(&traj.std_err)
        .enumerate()
        .map(|(t, (&m, &se))| {
            let bound = (1.0 - eta).powi(t as i32) * d0 + epsilon_prime / 2.0;
            bound + 3.0 * se - m
        })
        .collect();
    let first_violation = margins.iter().position(|&m| m < 0.0);
    let worst_margin = margins.iter().copied().fold(f64::INFINITY, f64::min);
    RecurrenceCheck {
        verdict: if first_violation.is_some() {
            Verdict::Fail
        } else {
            Verdict::Pass
        },
        eta,
        margins,
        worst_margin,
        first_violation,
    }
}

/// First step at which the mean gap is at most `epsilon_prime`.
pub fn steps_to_gap(traj: &Trajectory, epsilon_prime: f64) -> Option<usize> {
    traj.mean_gap.iter().position(|&g| g <= epsilon_prime)
}

/// `⌈(ln(ε'/2) - ln ε) / ln(1 - η)⌉`, clamped at 0.
pub fn predicted_steps(epsilon: f64, epsilon_prime: f64, eta: f64) -> Result<usize> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::invalid(format!("contraction rate must be in (0, 1), got {eta}")));
    }
    if !(epsilon > 0.0 && epsilon_prime > 0.0) {
        return Err(Error::invalid("gaps must be positive"));
    }
    let raw = ((epsilon_prime / 2.0).ln() - epsilon.ln()) / (1.0 - eta).ln();
    Ok(raw.max(0.0).ceil() as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlCheck {
    pub samples: usize,
    pub smoothness_violations: usize,
    pub pl_violations: usize,
}

impl PlCheck {
    pub fn passed(&self) -> bool {
        self.smoothness_violations == 0 && self.pl_violations == 0
    }
}

/// Tests the smoothness lower bound and the PL inequality on random pairs
/// drawn from the ball of `radius` around the optimum.
pub fn verify_pl_and_smooth(obj: &ToyObjective, samples: usize, radius: f64, seed: u64) -> PlCheck {
    let mut rng = rng::stream(seed, Purpose::Theory, u64::MAX, 1, 0);
    let unit = Uniform::new(-1.0, 1.0).expect("valid range");
    let d = obj.dimension();
    let draw = |rng: &mut rng::Rng| -> Vec<f64> {
        obj.theta_star
            .iter()
            .map(|c| c + radius * unit.sample(rng) / (d as f64).sqrt())
            .collect()
    };
    let tol = 1e-12;
    let mut smooth_bad = 0;
    let mut pl_bad = 0;
    for _ in 0..samples {
        let a = draw(&mut rng);
        let b = draw(&mut rng);
        let g = obj.grad(&a);
        let step: Vec<f64> = b.iter().zip(&a).map(|(x, y)| x - y).collect();
        let inner: f64 = g.iter().zip(&step).map(|(x, y)| x * y).sum();
        let sq: f64 = step.iter().map(|x| x * x).sum();
        let lower = obj.value(&a) + inner - obj.smoothness / 2.0 * sq;
        let scale = 1.0 + obj.value(&b).abs().max(lower.abs());
        if obj.value(&b) < lower - tol * scale {
            smooth_bad += 1;
        }
        let grad_sq: f64 = g.iter().map(|x| x * x).sum();
        let rhs = obj.pl_constant * obj.gap(&a);
        if grad_sq < rhs - tol * (1.0 + rhs) {
            pl_bad += 1;
        }
    }
    PlCheck {
        samples,
        smoothness_violations: smooth_bad,
        pl_violations: pl_bad,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Regression {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `ys` on `xs`.
pub fn linear_regression(xs: &[f64], ys: &[f64]) -> Result<Regression> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::invalid("regression needs at least two paired points"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("regressor has zero variance"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(Regression {
        slope,
        intercept,
        r_squared,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub label: String,
    pub alpha: f64,
    pub noise_std: f64,
    pub epsilon: f64,
    pub epsilon_prime: f64,
    pub eta: f64,
    pub steps_observed: Option<usize>,
    pub steps_predicted: usize,
    pub recurrence: RecurrenceCheck,
    pub mean_gap: Vec<f64>,
    pub verdict: Verdict,
}

/// Runs one setting end to end: trajectory, recurrence, and `N_obs ≤ N_pred`.
#[allow(clippy::too_many_arguments)]
pub fn bound_report(
    label: &str,
    obj: &ToyObjective,
    alpha: f64,
    epsilon: f64,
    epsilon_prime: f64,
    steps: usize,
    repeats: usize,
    seed: u64,
) -> Result<BoundReport> {
    let theta0 = obj.point_with_gap(epsilon);
    let traj = sgd_trajectory(obj, &theta0, alpha, steps, repeats, seed)?;
    let eta = obj.contraction_rate(alpha);
    let recurrence = verify_recurrence(obj, alpha, &traj, epsilon_prime);
    let steps_observed = steps_to_gap(&traj, epsilon_prime);
    let steps_predicted = predicted_steps(epsilon, epsilon_prime, eta)?;
    let verdict = match (recurrence.verdict, steps_observed) {
        (Verdict::Vacuous, _) => Verdict::Vacuous,
        (Verdict::Fail, _) => Verdict::Fail,
        (_, None) => Verdict::Inconclusive,
        (_, Some(n)) if n <= steps_predicted => Verdict::Pass,
        _ => Verdict::Fail,
    };
    Ok(BoundReport {
        label: label.to_owned(),
        alpha,
        noise_std: obj.noise_std,
        epsilon,
        epsilon_prime,
        eta,
        steps_observed,
        steps_predicted,
        recurrence,
        mean_gap: traj.mean_gap,
        verdict,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub log_ratios: Vec<f64>,
    pub steps_observed: Vec<usize>,
    pub regression: Regression,
    pub passed: bool,
}

/// Sweeps `ε'` and regresses the observed step count on `ln(ε/ε')`.
pub fn log_scaling(
    obj: &ToyObjective,
    alpha: f64,
    epsilon: f64,
    epsilon_primes: &[f64],
    max_steps: usize,
    min_r_squared: f64,
) -> Result<ScalingReport> {
    let theta0 = obj.point_with_gap(epsilon);
    let traj = sgd_trajectory(obj, &theta0, alpha, max_steps, 1, 0)?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &ep in epsilon_primes {
        let n = steps_to_gap(&traj, ep)
            .ok_or_else(|| Error::invalid(format!("gap {ep} not reached in {max_steps} steps")))?;
        xs.push((epsilon / ep).ln());
        ys.push(n);
    }
    let yf: Vec<f64> = ys.iter().map(|&n| n as f64).collect();
    let regression = linear_regression(&xs, &yf)?;
    let passed = regression.slope > 0.0 && regression.r_squared >= min_r_squared;
    Ok(ScalingReport {
        log_ratios: xs,
        steps_observed: ys,
        regression,
        passed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoryConfig {
    pub dimension: usize,
    pub pl_constant: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub epsilon_prime: f64,
    pub steps: usize,
    pub repeats: usize,
    pub seed: u64,
    pub pl_samples: usize,
    pub scaling_alpha: f64,
    pub scaling_points: usize,
    pub min_r_squared: f64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        Self {
            dimension: 4,
            pl_constant: 2.0,
            alpha: 0.5,
            epsilon: 2.0,
            epsilon_prime: 0.02,
            steps: 40,
            repeats: 1000,
            seed: 0,
            pl_samples: 100_000,
            scaling_alpha: 0.1,
            scaling_points: 8,
            min_r_squared: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryReport {
    pub bounds: Vec<BoundReport>,
    pub scaling: ScalingReport,
    pub pl_check: PlCheck,
    pub negative_control: PlCheck,
    pub passed: bool,
}

/// The full verification suite: noiseless and boundary-noise bounds, a
/// dominance grid, log-scaling regression and the PL/smoothness checks.
pub fn verify_theory(cfg: &TheoryConfig) -> Result<TheoryReport> {
    let star: Vec<f64> = (0..cfg.dimension.max(1)).map(|i| 0.5 * i as f64).collect();
    let obj = ToyObjective::quadratic(star, cfg.pl_constant, 0.0)?;
    let mut bounds = vec![bound_report(
        "noiseless",
        &obj,
        cfg.alpha,
        cfg.epsilon,
        cfg.epsilon_prime,
        cfg.steps,
        1,
        cfg.seed,
    )?];
    let boundary = obj.clone().with_noise(obj.boundary_noise(cfg.alpha, cfg.epsilon_prime));
    bounds.push(bound_report(
        "noise at admissible boundary",
        &boundary,
        cfg.alpha,
        cfg.epsilon,
        cfg.epsilon_prime,
        cfg.steps,
        cfg.repeats,
        cfg.seed,
    )?);
    // Dominance grid over step size, noise fraction and target gap.
    let max_alpha = 1.0 / obj.smoothness;
    for (i, &af) in [0.25, 0.5, 0.9].iter().enumerate() {
        for (j, &nf) in [0.0, 0.5, 1.0].iter().enumerate() {
            for (k, &ep) in [0.2, 0.02].iter().enumerate() {
                let alpha = af * max_alpha;
                let noisy = obj.clone().with_noise(nf * obj.boundary_noise(alpha, ep));
                let repeats = if nf > 0.0 { cfg.repeats.min(400) } else { 1 };
                bounds.push(bound_report(
                    &format!("grid a{i} n{j} e{k}"),
                    &noisy,
                    alpha,
                    cfg.epsilon,
                    ep,
                    cfg.steps.max(4 * predicted_steps(cfg.epsilon, ep, noisy.contraction_rate(alpha))?),
                    repeats,
                    cfg.seed ^ ((i * 9 + j * 3 + k) as u64 + 1),
                )?);
            }
        }
    }

    let primes: Vec<f64> = (1..=cfg.scaling_points.max(6))
        .map(|k| cfg.epsilon * 10f64.powf(-(k as f64) * 0.75))
        .collect();
    let scaling = log_scaling(&obj, cfg.scaling_alpha, cfg.epsilon, &primes, 2000, cfg.min_r_squared)?;

    let radius = (4.0 * cfg.epsilon / cfg.pl_constant).sqrt() * 2.0;
    let pl_check = verify_pl_and_smooth(&obj, cfg.pl_samples, radius, cfg.seed);
    let wrong = obj.clone().with_declared_smoothness(obj.smoothness / 2.0);
    let negative_control = verify_pl_and_smooth(&wrong, cfg.pl_samples.min(1000), radius, cfg.seed);

    let passed = bounds.iter().all(|b| b.verdict == Verdict::Pass)
        && scaling.passed
        && pl_check.passed()
        && !negative_control.passed();
    Ok(TheoryReport {
        bounds,
        scaling,
        pl_check,
        negative_control,
        passed,
    })
}
