use pbrl_core::dueling::{knockout_budget, DuelingConfig, DuelingSession, Winner};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn btl(values: &[f64], c: f64, a: usize, b: usize) -> f64 {
    1.0 / (1.0 + (-(values[a] - values[b]) / c).exp())
}

fn run_btl(session: &mut DuelingSession, values: &[f64], c: f64, rng: &mut ChaCha8Rng) {
    while let Some((a, b)) = session.next_query() {
        let w = if rng.random::<f64>() < btl(values, c, a, b) { Winner::First } else { Winner::Second };
        session.report_outcome(w).unwrap();
    }
}

#[test]
fn beat_the_mean_finds_the_best_of_three() {
    let values = [0.9, 0.5, 0.1];
    let config = DuelingConfig::BeatTheMean { delta: 0.1, gamma: 0.5, budget: Some(5000) };
    let mut hits = 0;
    for seed in 0..200 {
        let mut s = DuelingSession::new(config, 3, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10_000 + seed);
        run_btl(&mut s, &values, 1.0, &mut rng);
        assert!(s.comparisons_used() <= 5000);
        hits += usize::from(s.best_arm().unwrap() == 0);
    }
    assert!(hits >= 190, "{hits}/200");
}

#[test]
fn knockout_is_probably_approximately_correct() {
    let values = [1.0, 0.8, 0.6, 0.4, 0.2];
    let config = DuelingConfig::Knockout { epsilon: 0.1, delta: 0.1 };
    let mut good = 0;
    for seed in 0..200 {
        let mut s = DuelingSession::new(config, 5, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(20_000 + seed);
        run_btl(&mut s, &values, 1.0, &mut rng);
        assert!(s.comparisons_used() <= knockout_budget(0.1, 0.1, 5));
        let best = s.best_arm().unwrap();
        good += usize::from(btl(&values, 1.0, best, 0) >= 0.4);
    }
    assert!(good >= 180, "{good}/200");
}

#[test]
fn deterministic_total_order_is_solved() {
    for k in 2..8 {
        for config in [
            DuelingConfig::Knockout { epsilon: 0.2, delta: 0.2 },
            DuelingConfig::BeatTheMean { delta: 0.1, gamma: 1.0, budget: None },
        ] {
            let mut s = DuelingSession::new(config, k, k as u64).unwrap();
            // arm k-1 is the strongest
            while let Some((a, b)) = s.next_query() {
                s.report_outcome(if a > b { Winner::First } else { Winner::Second }).unwrap();
            }
            assert_eq!(s.best_arm().unwrap(), k - 1);
        }
    }
}

fn configs() -> impl Strategy<Value = DuelingConfig> {
    prop_oneof![
        (0.2f64..0.9, 0.05f64..0.5).prop_map(|(epsilon, delta)| DuelingConfig::Knockout { epsilon, delta }),
        (0.05f64..0.5, 0.2f64..1.0, proptest::option::of(1u64..400))
            .prop_map(|(delta, gamma, budget)| DuelingConfig::BeatTheMean { delta, gamma, budget }),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn sessions_respect_their_contract(config in configs(), k in 1usize..7, seed in any::<u64>(), outcomes in proptest::collection::vec(any::<bool>(), 0..400)) {
        let mut s = DuelingSession::new(config, k, seed).unwrap();
        for &o in &outcomes {
            let Some((a, b)) = s.next_query() else { break };
            prop_assert_ne!(a, b);
            let active = s.active_arms();
            prop_assert!(active.contains(&a) && active.contains(&b));
            prop_assert_eq!(s.next_query(), Some((a, b)));
            s.report_outcome(if o { Winner::First } else { Winner::Second }).unwrap();
            let stats = s.arm_stats();
            prop_assert!(stats.iter().all(|x| x.wins <= x.comparisons));
            let total: u64 = stats.iter().map(|x| x.comparisons).sum();
            prop_assert_eq!(total, 2 * s.comparisons_used());
            prop_assert!(!s.active_arms().is_empty());
            if let Some(b) = s.budget() {
                prop_assert!(s.comparisons_used() <= b);
            }
        }
        if s.is_finished() {
            let best = s.best_arm().unwrap();
            prop_assert_eq!(s.next_query(), None);
            prop_assert!(s.report_outcome(Winner::First).is_err());
            prop_assert_eq!(s.best_arm().unwrap(), best);
        }
    }

    #[test]
    fn same_seed_same_queries(config in configs(), k in 2usize..6, seed in any::<u64>(), outcomes in proptest::collection::vec(any::<bool>(), 1..200)) {
        let mut a = DuelingSession::new(config, k, seed).unwrap();
        let mut b = DuelingSession::new(config, k, seed).unwrap();
        for &o in &outcomes {
            prop_assert_eq!(a.next_query(), b.next_query());
            if a.next_query().is_none() {
                break;
            }
            let w = if o { Winner::First } else { Winner::Second };
            a.report_outcome(w).unwrap();
            b.report_outcome(w).unwrap();
        }
        prop_assert_eq!(a.to_json(), b.to_json());
    }
}
