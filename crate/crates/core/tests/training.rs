use dvelab::envs::{LevelHandle, MdpSpec};
use dvelab::models::{ActorCritic, Checkpoint, HeadKind, NetConfig};
use dvelab::seed::rng_from_seed;
use dvelab::train::*;

fn gap_levels(n: u64) -> Vec<LevelHandle> {
    (0..n).map(|s| LevelHandle::gapworld(s, 12).unwrap()).collect()
}

fn small_net(head: HeadKind, seed: u64) -> ActorCritic {
    ActorCritic::new(NetConfig::new(15, 2, head).with_sizes(8, 8), &mut rng_from_seed(seed)).unwrap()
}

fn rollout(net: &ActorCritic, levels: &[LevelHandle], steps: usize, seeds: &[u64]) -> RolloutBatch {
    let mut workers: Vec<WorkerState> = seeds.iter().map(|_| WorkerState::new(net.config().lstm_hidden)).collect();
    collect_rollouts(net, levels, &mut workers, steps, seeds, 50).unwrap()
}

#[test]
fn rollouts_are_reproducible() {
    let net = small_net(HeadKind::Dynamic { n_basis: 2 }, 0);
    let levels = gap_levels(6);
    let a = rollout(&net, &levels, 40, &[1, 2, 3]);
    let b = rollout(&net, &levels, 40, &[1, 2, 3]);
    assert_eq!(a, b);
    let c = rollout(&net, &levels, 40, &[1, 2, 4]);
    assert_eq!(a.actions[..80], c.actions[..80]);
    assert_ne!(a.actions[80..], c.actions[80..]);
}

#[test]
fn episode_levels_are_uniform() {
    let net = small_net(HeadKind::Baseline, 1);
    let levels: Vec<LevelHandle> = (0..5).map(|s| LevelHandle::gapworld(s, 6).unwrap()).collect();
    let batch = rollout(&net, &levels, 3000, &[10, 11, 12, 13]);
    let mut counts = [0usize; 5];
    for ep in &batch.episodes {
        counts[ep.level_id] += 1;
    }
    let n: usize = counts.iter().sum();
    let expected = n as f64 / 5.0;
    // chi-square with 4 degrees of freedom; 18.5 is the 0.1% tail
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    assert!(n > 1000 && chi2 < 18.5, "{counts:?} chi2 {chi2}");
}

#[test]
fn lambda_one_gives_discounted_monte_carlo_returns() {
    let rewards = [1.0, -0.5, 2.0, 0.0, 3.0, 1.0];
    let values = [0.3, 0.1, -0.2, 0.5, 0.4, 0.9];
    let done = [false, false, true, false, false, false];
    let truncated = [false; 6];
    let next_values = [0.0, 0.0, 0.0, 0.0, 0.0, 2.5];
    let gamma = 0.9;
    let (adv, ret) = gae(&rewards, &values, &next_values, &done, &truncated, gamma, 1.0).unwrap();
    // first episode ends at t = 2; the second is cut by the segment end and
    // bootstraps from next_values[5]
    let mc = |from: usize, to: usize, tail: f64| -> f64 {
        let mut g = tail;
        for t in (from..=to).rev() {
            g = rewards[t] + gamma * g;
        }
        g
    };
    let want = [mc(0, 2, 0.0), mc(1, 2, 0.0), mc(2, 2, 0.0), mc(3, 5, 2.5), mc(4, 5, 2.5), mc(5, 5, 2.5)];
    for t in 0..6 {
        assert!((ret[t] - want[t]).abs() < 1e-12, "t={t}: {} vs {}", ret[t], want[t]);
        assert!((adv[t] - (want[t] - values[t])).abs() < 1e-12);
    }
}

#[test]
fn lambda_zero_gives_td_residuals() {
    let rewards = [1.0, 2.0, 3.0];
    let values = [0.5, 0.25, 1.0];
    let next_values = [0.0, 7.0, 4.0];
    let done = [false, true, false];
    let truncated = [false, true, false];
    let (adv, _) = gae(&rewards, &values, &next_values, &done, &truncated, 0.5, 0.0).unwrap();
    // t = 1 is a truncation and bootstraps from its own next value
    let want = [1.0 + 0.5 * 0.25 - 0.5, 2.0 + 0.5 * 7.0 - 0.25, 3.0 + 0.5 * 4.0 - 1.0];
    for (a, w) in adv.iter().zip(want) {
        assert!((a - w).abs() < 1e-12);
    }
}

#[test]
fn zero_learning_rate_keeps_parameters() {
    let cfg = TrainConfig { lr: 0.0, n_workers: 2, steps_per_worker: 32, ..TrainConfig::default() };
    let net = NetConfig::new(15, 2, HeadKind::Control { hidden: 3 }).with_sizes(8, 8);
    let mut trainer = Trainer::new(net, cfg, gap_levels(3), 5).unwrap();
    let before = trainer.network().params().clone();
    trainer.iterate().unwrap();
    trainer.iterate().unwrap();
    assert_eq!(trainer.network().params().tensors(), before.tensors());
}

/// One nonterminal state; action 1 pays 1 and action 0 pays 0, both end
/// the episode.
fn bandit() -> LevelHandle {
    let (ns, na) = (2, 2);
    let mut p = vec![0.0; ns * na * ns];
    let mut r = vec![0.0; ns * na * ns];
    for a in 0..na {
        p[a * ns + 1] = 1.0;
        p[(na + a) * ns + 1] = 1.0;
    }
    r[ns + 1] = 1.0;
    let spec = MdpSpec::new(ns, na, p, r, 0.9, vec![false, true], vec![1.0, 0.0]).unwrap();
    LevelHandle::tabular_from_spec(0, 0, spec).unwrap()
}

#[test]
fn agents_learn_a_two_armed_bandit() {
    for algorithm in [Algorithm::Ppo, Algorithm::A2c] {
        let cfg = TrainConfig {
            algorithm,
            lr: 1e-2,
            n_workers: 2,
            steps_per_worker: 32,
            minibatches: 2,
            ..TrainConfig::default()
        };
        let net = NetConfig::new(2, 2, HeadKind::Baseline).with_sizes(4, 4);
        let mut trainer = Trainer::new(net, cfg, vec![bandit()], 3).unwrap();
        for _ in 0..60 {
            trainer.iterate().unwrap();
        }
        let p = trainer.network().markov_policy(&bandit()).unwrap();
        assert!(p.row(0)[1] > 0.9, "{algorithm}: {:?}", p.row(0));
    }
}

fn batch_with_advantages(net: &ActorCritic) -> RolloutBatch {
    let mut batch = rollout(net, &gap_levels(4), 16, &[7, 8]);
    compute_returns_advantages(&mut batch, 0.99, 0.95).unwrap();
    batch
}

#[test]
fn unclipped_ppo_gradient_equals_vanilla_gradient_at_old_policy() {
    let net = small_net(HeadKind::Dynamic { n_basis: 3 }, 2);
    let batch = batch_with_advantages(&net);
    let idx: Vec<usize> = (0..batch.len()).collect();
    let cfg = TrainConfig::default();
    let ppo = LossConfig { clip_eps: f64::INFINITY, ..LossConfig::ppo(&cfg) };
    let g1 = loss_gradient(&net, &batch, &idx, &ppo).unwrap();
    let g2 = loss_gradient(&net, &batch, &idx, &LossConfig::a2c(&cfg)).unwrap();
    let dot: f64 = g1.iter().zip(&g2).map(|(a, b)| a * b).sum();
    let cos = dot / (g1.iter().map(|a| a * a).sum::<f64>().sqrt() * g2.iter().map(|b| b * b).sum::<f64>().sqrt());
    assert!(cos > 1.0 - 1e-9, "cosine {cos}");
}

#[test]
fn kappa_matches_finite_difference_score_norms() {
    let net = small_net(HeadKind::Baseline, 4);
    let batch = batch_with_advantages(&net);
    let n = batch.len();
    let kappa = kappa_estimate(&batch, &net, n, &mut rng_from_seed(0)).unwrap();

    let log_prob = |net: &ActorCritic, i: usize| -> f64 {
        let out = net.step(batch.obs_row(i), &batch.state_row(i)).unwrap();
        out.policy.log_probs[batch.actions[i]]
    };
    let h = 1e-6;
    let mut total = 0.0;
    let mut probe = net.clone();
    for i in 0..n {
        let mut sq = 0.0;
        for p in net.policy_param_indices() {
            for k in 0..net.params().tensor(p).data.len() {
                let orig = net.params().tensor(p).data[k];
                probe.params_mut().data_mut(p)[k] = orig + h;
                let plus = log_prob(&probe, i);
                probe.params_mut().data_mut(p)[k] = orig - h;
                let minus = log_prob(&probe, i);
                probe.params_mut().data_mut(p)[k] = orig;
                sq += ((plus - minus) / (2.0 * h)).powi(2);
            }
        }
        total += sq;
    }
    let fd = total / n as f64;
    assert!((kappa - fd).abs() / fd < 1e-5, "{kappa} vs {fd}");
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let cfg = TrainConfig { n_workers: 2, steps_per_worker: 24, ..TrainConfig::default() };
    let net = NetConfig::new(15, 2, HeadKind::Dynamic { n_basis: 2 }).with_sizes(8, 8);
    let levels = gap_levels(5);
    let mut straight = Trainer::new(net, cfg.clone(), levels.clone(), 9).unwrap();
    let rows: Vec<MetricsRow> = (0..4).map(|_| straight.iterate().unwrap().0).collect();

    let mut first = Trainer::new(net, cfg.clone(), levels.clone(), 9).unwrap();
    first.iterate().unwrap();
    first.iterate().unwrap();
    let text = first.checkpoint().to_json();
    let mut resumed = Trainer::resume(&Checkpoint::from_json(&text).unwrap(), cfg, levels).unwrap();
    let tail: Vec<MetricsRow> = (0..2).map(|_| resumed.iterate().unwrap().0).collect();
    assert_eq!(tail[..], rows[2..]);
    assert_eq!(resumed.network().params(), straight.network().params());
}
