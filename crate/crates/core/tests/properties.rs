use dvelab::analysis::{em_fit, tabular_set, variance_decomposition, EmOptions};
use dvelab::diffcore::{LstmState, Shape, Tape};
use dvelab::envs::{spl, EpisodeOutcome, Policy};
use dvelab::models::{confusion, ActorCritic, HeadKind, NetConfig};
use dvelab::seed::rng_from_seed;
use dvelab::train::gae;
use proptest::prelude::*;

fn simplex(raw: Vec<f64>) -> Vec<f64> {
    let total: f64 = raw.iter().sum();
    raw.iter().map(|x| x / total).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn confusion_lies_between_inverse_basis_count_and_one(raw in prop::collection::vec(0.001f64..1.0, 2..10)) {
        let alpha = simplex(raw);
        let d = confusion(&alpha).unwrap();
        let nb = alpha.len() as f64;
        prop_assert!(d >= 1.0 / nb - 1e-12 && d <= 1.0 + 1e-12);
    }

    #[test]
    fn dynamic_value_is_posterior_weighted_basis_values(seed in 0u64..1000, obs in prop::collection::vec(-2.0f64..2.0, 6)) {
        let cfg = NetConfig::new(6, 3, HeadKind::Dynamic { n_basis: 4 }).with_sizes(5, 5);
        let net = ActorCritic::new(cfg, &mut rng_from_seed(seed)).unwrap();
        let out = net.step(&obs, &LstmState::zeros(5)).unwrap();
        let alpha = out.critic.alpha.unwrap();
        let mu = out.critic.mu.unwrap();
        let mix: f64 = alpha.iter().zip(&mu).map(|(a, m)| a * m).sum();
        prop_assert!((out.critic.value - mix).abs() <= 1e-9);
        prop_assert!((alpha.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn softmax_rows_are_distributions(v in prop::collection::vec(-50.0f64..50.0, 12)) {
        let mut t = Tape::<f64>::new();
        let x = t.constant(v, Shape::new(3, 4)).unwrap();
        let p = t.softmax(x).unwrap();
        for row in t.value(p).chunks(4) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(row.iter().all(|&q| q >= 0.0));
        }
    }

    #[test]
    fn gae_returns_equal_advantages_plus_values(
        rewards in prop::collection::vec(-1.0f64..1.0, 1..40),
        lambda in 0.0f64..=1.0,
        gamma in 0.0f64..=1.0,
        seed in 0u64..100,
    ) {
        let n = rewards.len();
        let values: Vec<f64> = (0..n).map(|i| ((i as u64 + seed) as f64 * 0.37).sin()).collect();
        let next: Vec<f64> = (0..n).map(|i| ((i as u64 * 3 + seed) as f64 * 0.11).cos()).collect();
        let done: Vec<bool> = (0..n).map(|i| (i as u64 + seed).is_multiple_of(7)).collect();
        let trunc: Vec<bool> = done.iter().enumerate().map(|(i, &d)| d && i % 2 == 0).collect();
        let (adv, ret) = gae(&rewards, &values, &next, &done, &trunc, gamma, lambda).unwrap();
        for t in 0..n {
            prop_assert!((ret[t] - (adv[t] + values[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn spl_is_a_fraction(eps in prop::collection::vec((any::<bool>(), 1usize..50, 1usize..50), 1..30)) {
        let outcomes: Vec<EpisodeOutcome> = eps
            .iter()
            .map(|&(success, a, b)| EpisodeOutcome { success, path_len: a.max(b), optimal_len: a.min(b), total_reward: 0.0 })
            .collect();
        let r = spl(&outcomes).unwrap();
        prop_assert!(r.spl >= 0.0 && r.spl <= r.success_rate + 1e-12);
    }

    #[test]
    fn em_log_likelihood_never_decreases(data in prop::collection::vec(-10.0f64..10.0, 20..80), c in 1usize..4, seed in 0u64..50) {
        let fit = em_fit(&data, 2 - data.len() % 2, c, &EmOptions { restarts: 1, ..EmOptions::default() }, &mut rng_from_seed(seed));
        if let Ok(fit) = fit {
            prop_assert!((fit.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            prop_assert!(fit.variances.iter().all(|&v| v >= 1e-6));
            if !fit.reseeded {
                for w in fit.ll_trace.windows(2) {
                    prop_assert!(w[1] >= w[0] - 1e-9, "{:?}", fit.ll_trace);
                }
            }
        }
    }

    #[test]
    fn decomposition_identity_for_random_critics(seed in 0u64..200, scale in 0.1f64..20.0) {
        let levels = tabular_set(seed, 3).unwrap();
        let d = variance_decomposition(&levels, &Policy::uniform(8, 3), |m, s| scale * ((m * 8 + s) as f64 * 1.3 + seed as f64).sin()).unwrap();
        prop_assert!(d.residual().abs() <= 1e-9);
        prop_assert!(d.cross_term.abs() <= 1e-9);
    }
}
