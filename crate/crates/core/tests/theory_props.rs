use dopr_core::theory::{
    bound_report, predicted_steps, sgd_trajectory, steps_to_gap, verify_pl_and_smooth, verify_theory,
    ToyObjective, TheoryConfig, Verdict,
};
use proptest::prelude::*;

fn objective(d: usize, c: f64) -> ToyObjective {
    let star = (0..d).map(|i| (i as f64 * 0.7).sin()).collect();
    ToyObjective::quadratic(star, c, 0.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn observed_steps_never_exceed_the_bound(
        d in 1usize..6,
        c in 0.5..4.0f64,
        alpha_frac in 0.05..0.95f64,
        noise_frac in 0.0..1.0f64,
        log_ratio in 0.5..8.0f64,
        seed in 0u64..1000,
    ) {
        let obj = objective(d, c);
        let alpha = alpha_frac / obj.smoothness;
        let epsilon = 2.0;
        let epsilon_prime = epsilon * (-log_ratio).exp();
        let noisy = obj.clone().with_noise(noise_frac * obj.boundary_noise(alpha, epsilon_prime));
        let eta = noisy.contraction_rate(alpha);
        let steps = 3 * predicted_steps(epsilon, epsilon_prime, eta).unwrap() + 5;
        let report = bound_report("p", &noisy, alpha, epsilon, epsilon_prime, steps, 200, seed).unwrap();
        prop_assert_eq!(report.verdict, Verdict::Pass, "{:?}", report.recurrence.first_violation);
        prop_assert!(report.steps_observed.unwrap() <= report.steps_predicted);
    }

    #[test]
    fn pl_identity_is_exact(d in 1usize..8, c in 0.1..10.0f64, theta in prop::collection::vec(-5.0..5.0f64, 8)) {
        let obj = objective(d, c);
        let point = &theta[..d];
        let grad_sq: f64 = obj.grad(point).iter().map(|g| g * g).sum();
        prop_assert!((grad_sq - c * obj.gap(point)).abs() <= 1e-12 * (1.0 + grad_sq));
    }
}

#[test]
fn closed_form_example() {
    let obj = objective(3, 2.0);
    let traj = sgd_trajectory(&obj, &obj.point_with_gap(2.0), 0.5, 10, 1, 0).unwrap();
    assert_eq!(steps_to_gap(&traj, 0.02), Some(4));
    assert!(traj.mean_gap[3] > 0.02);
    assert!((traj.mean_gap[4] - 2.0 * 0.25f64.powi(4)).abs() < 1e-15);
}

#[test]
fn too_few_steps_is_inconclusive_not_failure() {
    let obj = objective(2, 2.0);
    let r = bound_report("short", &obj, 0.5, 2.0, 0.02, 2, 1, 0).unwrap();
    assert_eq!(r.verdict, Verdict::Inconclusive);
    assert_eq!(r.steps_observed, None);
}

#[test]
fn excess_noise_is_vacuous() {
    let obj = objective(2, 2.0);
    let loud = obj.clone().with_noise(2.0 * obj.boundary_noise(0.5, 0.02));
    let r = bound_report("loud", &loud, 0.5, 2.0, 0.02, 20, 20, 0).unwrap();
    assert_eq!(r.verdict, Verdict::Vacuous);
}

#[test]
fn repeats_are_reproducible() {
    let obj = objective(3, 2.0).with_noise(0.1);
    let theta0 = obj.point_with_gap(1.0);
    let a = sgd_trajectory(&obj, &theta0, 0.4, 15, 64, 5).unwrap();
    let b = sgd_trajectory(&obj, &theta0, 0.4, 15, 64, 5).unwrap();
    assert_eq!(a, b);
}

#[test]
fn smoothness_control_only_fails_when_misdeclared() {
    let obj = objective(4, 2.0);
    assert!(verify_pl_and_smooth(&obj, 10_000, 2.0, 1).passed());
    let wrong = obj.clone().with_declared_smoothness(obj.smoothness / 2.0);
    assert!(verify_pl_and_smooth(&wrong, 100, 2.0, 1).smoothness_violations > 0);
    // Over-declaring L keeps the inequality valid.
    let loose = obj.clone().with_declared_smoothness(obj.smoothness * 2.0);
    assert!(verify_pl_and_smooth(&loose, 1000, 2.0, 1).passed());
}

#[test]
fn default_suite_passes() {
    let report = verify_theory(&TheoryConfig::default()).unwrap();
    assert!(report.passed);
    assert!(report.scaling.log_ratios.len() >= 6);
    assert!(report.scaling.regression.r_squared >= 0.95);
}
