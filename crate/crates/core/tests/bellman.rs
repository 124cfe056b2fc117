use dvelab::envs::{discounted_occupancy, q_from_values, solve_q, solve_value, tabular, MdpSpec, Policy};
use dvelab::seed::rng_from_seed;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn random_policy(ns: usize, na: usize, seed: u64) -> Policy<f64> {
    let mut rng = rng_from_seed(seed);
    let logits: Vec<f64> = (0..ns * na).map(|_| rng.random_range(-2.0..2.0)).collect();
    Policy::from_logits(ns, na, &logits).unwrap()
}

/// `(I − γ P_π) v = r_π` restricted to nonterminal states, solved by LU.
fn linear_solve(spec: &MdpSpec<f64>, policy: &Policy<f64>) -> Vec<f64> {
    let (ns, na) = (spec.n_states(), spec.n_actions());
    let mut a = DMatrix::<f64>::identity(ns, ns);
    let mut b = DVector::<f64>::zeros(ns);
    for s in 0..ns {
        if spec.is_terminal(s) {
            continue;
        }
        for act in 0..na {
            let p = policy.row(s)[act];
            for s2 in 0..ns {
                let t = spec.row(s, act)[s2];
                b[s] += p * t * spec.reward_row(s, act)[s2];
                if !spec.is_terminal(s2) {
                    a[(s, s2)] -= spec.gamma() * p * t;
                }
            }
        }
    }
    a.lu().solve(&b).unwrap().iter().copied().collect()
}

#[test]
fn value_iteration_matches_linear_solve_on_random_mdps() {
    for seed in 0..50u64 {
        let terminal = if seed % 2 == 0 { Some(7) } else { None };
        let spec = tabular::random_mdp(seed, 8, 3, 0.9, terminal).unwrap();
        let policy = random_policy(8, 3, seed + 1000);
        let v = solve_value(&spec, &policy).unwrap();
        let oracle = linear_solve(&spec, &policy);
        for (a, b) in v.iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-8, "seed {seed}: {a} vs {b}");
        }
    }
}

#[test]
fn q_averages_to_v_under_the_policy() {
    let spec = tabular::generate(3).unwrap();
    let policy = random_policy(8, 3, 9);
    let v = solve_value(&spec, &policy).unwrap();
    let q = solve_q(&spec, &policy).unwrap();
    assert_eq!(q, q_from_values(&spec, &v));
    for s in 0..8 {
        let avg: f64 = (0..3).map(|a| policy.row(s)[a] * q[s * 3 + a]).sum();
        assert!((avg - v[s]).abs() < 1e-9);
    }
}

#[test]
fn occupancy_matches_linear_solve() {
    // d = μ0 + γ P_πᵀ d over nonterminal states
    let spec = tabular::generate(11).unwrap();
    let policy = random_policy(8, 3, 4);
    let d = discounted_occupancy(&spec, &policy).unwrap();
    let ns = 8;
    let mut a = DMatrix::<f64>::identity(ns, ns);
    let mut b = DVector::<f64>::zeros(ns);
    for s in 0..ns {
        if spec.is_terminal(s) {
            continue;
        }
        b[s] = spec.start_dist()[s];
        for s_prev in 0..ns {
            if spec.is_terminal(s_prev) {
                continue;
            }
            let p: f64 = (0..3).map(|act| policy.row(s_prev)[act] * spec.row(s_prev, act)[s]).sum();
            a[(s, s_prev)] -= spec.gamma() * p;
        }
    }
    let oracle = a.lu().solve(&b).unwrap();
    for s in 0..ns {
        assert!((d[s] - oracle[s]).abs() < 1e-8, "{d:?}");
    }
}
