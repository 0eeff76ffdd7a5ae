mod common;

use common::{compare_folds, library_fold, oracle_fold, random_history, winners_under_affine};
use dopr_core::selector::{
    argmax, update_stats, EntropyNorm, SampleStats, Selector, SelectorConfig, SelectorVariant, StatsTable,
};
use proptest::prelude::*;

fn cfg_with(rho1: f64, rho2: f64) -> SelectorConfig {
    SelectorConfig {
        rho1,
        rho2,
        ..SelectorConfig::default()
    }
}

proptest! {
    #[test]
    fn library_matches_oracle(seed in any::<u64>(), rho1 in 0.01..1.0f64, rho2 in 0.01..1.0f64, k in 1usize..9) {
        let cfg = cfg_with(rho1, rho2);
        let h = random_history(seed, 12, k, 40);
        let lib = library_fold(&h, 12, &cfg);
        let ora = oracle_fold(&h, 12, rho1, rho2, cfg.lambda, cfg.sigmoid_eps);
        let (worst, same) = compare_folds(&lib, &ora);
        prop_assert!(worst <= 1e-12, "worst disagreement {}", worst);
        prop_assert!(same);
    }

    #[test]
    fn selection_ignores_entropy_shift_and_scale(seed in any::<u64>(), shift in -8i32..8, log_scale in -3i32..4) {
        let cfg = SelectorConfig { sigmoid_eps: 0.0, ..SelectorConfig::default() };
        let h = random_history(seed, 16, 8, 30);
        let base = winners_under_affine(&h, 16, &cfg, 1.0, 0.0);
        let moved = winners_under_affine(&h, 16, &cfg, 2f64.powi(log_scale), shift as f64);
        prop_assert_eq!(base, moved);
    }

    #[test]
    fn ema_stays_in_range(rewards in prop::collection::vec(prop::bool::ANY, 1..50), rho1 in 0.0..1.0f64, rho2 in 0.0..1.0f64) {
        let cfg = cfg_with(rho1, rho2);
        let mut s = SampleStats::default();
        for r in rewards {
            s = update_stats(&s, if r { 1.0 } else { 0.0 }, &cfg);
            prop_assert!((0.0..=1.0).contains(&s.mu));
            prop_assert!((0.0..=1.0).contains(&s.var));
        }
    }

    #[test]
    fn argmax_prefers_lowest_index(scores in prop::collection::vec(-3i32..3, 1..12)) {
        let s: Vec<f64> = scores.iter().map(|&x| x as f64).collect();
        let i = argmax(&s).unwrap();
        let best = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(s[i], best);
        prop_assert!(s[..i].iter().all(|&x| x < best));
    }

    #[test]
    fn stats_table_round_trips(seed in any::<u64>()) {
        let cfg = SelectorConfig::default();
        let h = random_history(seed, 10, 4, 10);
        let mut table = StatsTable::new(10);
        let mut sel = Selector::new(cfg);
        let mut r = dopr_core::rng::stream(seed, dopr_core::rng::Purpose::Select, 0, 0, 0);
        for (i, step) in h.iter().enumerate() {
            for ((&id, &rew), &ent) in step.batch.iter().zip(&step.rewards).zip(&step.entropies) {
                table.observe(id, rew, ent, &cfg);
            }
            sel.select(&mut table, &step.batch, i as u64 + 1, &mut r).unwrap();
        }
        let back = StatsTable::from_text(&table.to_text()).unwrap();
        prop_assert_eq!(back, table);
    }
}

#[test]
fn selection_counts_sum_to_steps() {
    let cfg = SelectorConfig::default();
    let h = random_history(3, 10, 5, 60);
    let lib = library_fold(&h, 10, &cfg);
    let mut counts = [0u64; 10];
    for (v, step) in lib.iter().zip(&h) {
        counts[step.batch[v.winner]] += 1;
    }
    assert_eq!(counts.iter().sum::<u64>(), 60);
}

#[test]
fn variants_differ_only_in_the_exploration_term() {
    let h = random_history(11, 12, 6, 25);
    for variant in SelectorVariant::ALL {
        let cfg = SelectorConfig { variant, ..SelectorConfig::default() };
        let lib = library_fold(&h, 12, &cfg);
        for v in &lib {
            for ((&u, &s), &var) in v.ucb.iter().zip(&v.score).zip(&v.var) {
                match variant {
                    SelectorVariant::VarianceOnly => {
                        assert_eq!(u, 0.0);
                        assert_eq!(s, var.sqrt());
                    }
                    SelectorVariant::Random => assert!((0.0..1.0).contains(&s)),
                    _ => assert!((s - var.sqrt() - u).abs() < 1e-15),
                }
            }
        }
    }
}

#[test]
fn running_entropy_norm_is_deterministic() {
    let cfg = SelectorConfig {
        entropy_norm: EntropyNorm::Running { rho: 0.2 },
        ..SelectorConfig::default()
    };
    let h = random_history(5, 12, 6, 25);
    assert_eq!(library_fold(&h, 12, &cfg), library_fold(&h, 12, &cfg));
}
