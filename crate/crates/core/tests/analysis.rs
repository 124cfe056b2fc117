use dvelab::analysis::*;
use dvelab::envs::{solve_value, LevelHandle, Policy};
use dvelab::seed::rng_from_seed;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

#[test]
fn em_recovers_two_separated_clusters() {
    let mut rng = rng_from_seed(21);
    let mut data = Vec::new();
    for centre in [-10.0, 10.0] {
        let n = Normal::new(centre, 1.0).unwrap();
        data.extend((0..500).map(|_| n.sample(&mut rng)));
    }
    let fit = em_fit(&data, 1, 2, &EmOptions::default(), &mut rng).unwrap();
    let mut comps: Vec<(f64, f64)> = fit.means.iter().copied().zip(fit.weights.iter().copied()).collect();
    comps.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    assert!((comps[0].0 + 10.0).abs() < 0.3 && (comps[1].0 - 10.0).abs() < 0.3, "{comps:?}");
    assert!(comps.iter().all(|c| (c.1 - 0.5).abs() < 0.05));
    assert!((fit.weights.iter().sum::<f64>() - 1.0).abs() < 1e-9);
}

#[test]
fn aic_of_single_gaussian_matches_closed_form() {
    let mut rng = rng_from_seed(5);
    let data: Vec<f64> = (0..100).map(|_| StandardNormal.sample(&mut rng)).collect();
    let fit = em_fit(&data, 1, 1, &EmOptions::default(), &mut rng).unwrap();
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let ll = -0.5 * n * ((2.0 * std::f64::consts::PI * var).ln() + 1.0);
    assert!((fit.log_likelihood - ll).abs() < 1e-8);
    assert!((aic_score(&fit) - (4.0 - 2.0 * ll)).abs() < 1e-8);
    assert_eq!(fit.aic, aic_score(&fit));
}

#[test]
fn adding_a_component_at_equal_likelihood_costs_two_per_parameter() {
    let mut rng = rng_from_seed(2);
    let data: Vec<f64> = (0..60).map(|_| rng.random::<f64>()).collect();
    for d in [1, 2, 3] {
        let mut fit = em_fit(&data, d, 1, &EmOptions::default(), &mut rng).unwrap();
        let before = aic_score(&fit);
        fit.n_components = 2;
        fit.n_params = param_count(2, d);
        assert_eq!(aic_score(&fit) - before, 2.0 * (1 + 2 * d) as f64);
    }
}

/// `n` rows of dimension `k`: each row copies one of `templates` (chosen
/// at random) and adds Gaussian noise of scale `noise`.
fn synthetic_matrix(templates: usize, n: usize, k: usize, noise: f64, seed: u64) -> ValueMatrix {
    let mut rng = rng_from_seed(seed);
    let t: Vec<Vec<f64>> = (0..templates).map(|_| (0..k).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
    let noise = Normal::new(0.0, noise).unwrap();
    let mut values = Vec::new();
    for i in 0..n {
        let row = &t[if i < n / templates * templates { i % templates } else { rng.random_range(0..templates) }];
        values.extend(row.iter().map(|v| v + noise.sample(&mut rng)));
    }
    ValueMatrix::new(values, (0..n as u64).collect(), (0..k).collect(), "synthetic").unwrap()
}

#[test]
fn aic_selection_recovers_planted_counts() {
    for planted in [1, 2] {
        let mut hits = 0;
        for trial in 0..20 {
            let m = synthetic_matrix(planted, 50, 32, 0.2, 100 * planted as u64 + trial);
            let sel = select_num_clusters(&m, 5, &EmOptions::default(), &mut rng_from_seed(trial)).unwrap();
            assert_eq!(sel.curve.len(), 5);
            assert!(sel.curve.iter().all(|c| c.is_finite()));
            hits += (sel.best == planted) as usize;
        }
        assert!(hits >= 18, "planted {planted}: {hits}/20");
    }
}

fn gapworld_matrix(seeds: impl Iterator<Item = u64>) -> ValueMatrix {
    let levels: Vec<LevelHandle> = seeds.map(|s| LevelHandle::gapworld(s, 24).unwrap()).collect();
    let probe = levels[0].probe_state();
    assert!(levels.iter().all(|l| l.probe_state() == probe));
    exact_value_matrix(&levels, &[probe], "hazard-jump", |l| Ok(l.reference_policy())).unwrap()
}

#[test]
fn two_archetype_gapworld_values_cluster() {
    let m = gapworld_matrix(0..50);
    let r = clustering_hypothesis_test(&m, 0, 5, &EmOptions::default(), &mut rng_from_seed(0)).unwrap();
    assert!(r.prefers_multiple, "{:?}", r.selection.curve);
    assert_eq!(r.histogram.counts.iter().sum::<usize>(), 50);
}

#[test]
fn single_archetype_gapworld_values_do_not_cluster() {
    let m = gapworld_matrix((0..100).step_by(2));
    let r = clustering_hypothesis_test(&m, 0, 5, &EmOptions::default(), &mut rng_from_seed(0)).unwrap();
    assert_eq!(r.selection.best, 1, "{:?}", r.selection.curve);
}

#[test]
fn exact_matrix_entries_are_bellman_values() {
    let levels = tabular_set(4, 5).unwrap();
    let mut dup = levels.clone();
    dup.push(levels[0].clone());
    let policy = Policy::uniform(8, 3);
    let m = exact_value_matrix(&dup, &[0, 3, 5], "uniform", |_| Ok(policy.clone())).unwrap();
    for (i, level) in dup.iter().enumerate() {
        let v = solve_value(level.spec(), &policy).unwrap();
        for (j, &s) in [0, 3, 5].iter().enumerate() {
            assert!((m.row(i)[j] - v[s]).abs() <= 1e-8);
        }
    }
    assert_eq!(m.row(0), m.row(5));
}

fn values_of(levels: &[LevelHandle], policy: &Policy<f64>) -> Vec<Vec<f64>> {
    levels.iter().map(|l| solve_value(l.spec(), policy).unwrap()).collect()
}

#[test]
fn decomposition_identity_and_offset_critic() {
    let levels = default_tabular_set().unwrap();
    let mut rng = rng_from_seed(8);
    let logits: Vec<f64> = (0..24).map(|_| rng.random_range(-1.0..1.0)).collect();
    let policy = Policy::from_logits(8, 3, &logits).unwrap();
    let v = values_of(&levels, &policy);
    for _ in 0..20 {
        let table: Vec<f64> = (0..levels.len() * 8).map(|_| rng.random_range(-5.0..5.0)).collect();
        let d = variance_decomposition(&levels, &policy, |m, s| table[m * 8 + s]).unwrap();
        assert!(d.residual().abs() <= 1e-9, "{d:?}");
        assert!(d.cross_term.abs() <= 1e-9, "{d:?}");
    }
    let c = 1.7;
    let d = variance_decomposition(&levels, &policy, |m, s| v[m][s] + c).unwrap();
    assert!((d.prediction_error - c * c).abs() <= 1e-9, "{d:?}");
    assert!(d.cross_term.abs() <= 1e-9);
}

#[test]
fn policy_gradient_matches_finite_differences_of_return() {
    let levels = default_tabular_set().unwrap();
    let mut rng = rng_from_seed(3);
    let logits: Vec<f64> = (0..24).map(|_| rng.random_range(-1.0..1.0)).collect();
    let g = policy_gradient(&levels, &logits, |_, _| 0.0).unwrap();
    let h = 1e-5;
    for i in 0..24 {
        let mut plus = logits.clone();
        plus[i] += h;
        let mut minus = logits.clone();
        minus[i] -= h;
        let jp = expected_return(&levels, &Policy::from_logits(8, 3, &plus).unwrap()).unwrap();
        let jm = expected_return(&levels, &Policy::from_logits(8, 3, &minus).unwrap()).unwrap();
        let fd = (jp - jm) / (2.0 * h);
        assert!((g[i] - fd).abs() < 1e-6, "{i}: {} vs {fd}", g[i]);
    }
}

#[test]
fn baselines_do_not_change_the_exact_gradient() {
    let levels = default_tabular_set().unwrap();
    let mut rng = rng_from_seed(12);
    let logits: Vec<f64> = (0..24).map(|_| rng.random_range(-2.0..2.0)).collect();
    for _ in 0..20 {
        let f: Vec<f64> = (0..levels.len() * 8).map(|_| rng.random_range(-20.0..20.0)).collect();
        let r = lemma1_check(&levels, &logits, |m, s| f[m * 8 + s]).unwrap();
        assert!(r.passed, "{}", r.max_abs_diff);
    }
    let policy = Policy::from_logits(8, 3, &logits).unwrap();
    let v = values_of(&levels, &policy);
    assert!(lemma1_check(&levels, &logits, |m, s| v[m][s]).unwrap().passed);
}

#[test]
fn per_level_values_minimise_the_surrogate() {
    for set in 0..10 {
        let levels = tabular_set(set, 6).unwrap();
        let r = lemma2_sweep(&levels, &Policy::uniform(8, 3)).unwrap();
        assert_eq!(r.argmin_lambda, 1.0);
        assert!(r.curvature_spread() <= 1e-9, "{:?}", r.second_differences);
        let d = variance_decomposition(&levels, &Policy::uniform(8, 3), |_, _| 0.0).unwrap();
        assert!((r.minimal - d.minimal).abs() < 1e-12);
    }
}
