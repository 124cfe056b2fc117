use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dvelab::analysis::ValueMatrix;
use dvelab::envs::{gapworld, LevelHandle};
use dvelab::models::{ActorCritic, Checkpoint, HeadKind, NetConfig};
use dvelab::seed::rng_from_seed;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use tempfile::TempDir;

const TINY: &str = r#"
[experiment]
name = "tiny"
seed = 7

[env]
levels = "tabular:4"

[model]
head = "dynamic"
n_basis = 2
encoder_hidden = 8
lstm_hidden = 8

[train]
n_workers = 2
steps_per_worker = 16
minibatches = 2

[run]
total_steps = 6400
eval_every = 20
eval_episodes = 10
checkpoint_every = 50
"#;

fn dvelab(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dvelab")).args(args).env("DVELAB_OUT", root).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn assert_ok(out: &Output) {
    assert!(out.status.success(), "exit {:?}\nstderr: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("tiny.toml");
    fs::write(&path, text).unwrap();
    path
}

fn train(cfg: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    dvelab(&args, out.parent().unwrap())
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn save_net(net: &ActorCritic, path: &Path) {
    Checkpoint::new(net, 0, 0, 0).save(path).unwrap();
}

#[test]
fn tiny_run_writes_metrics_checkpoints_and_summary() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let run = tmp.path().join("run");
    assert_ok(&train(&cfg, &run, &[]));

    let metrics = read(&run.join("metrics.csv"));
    let mut lines = metrics.lines();
    assert!(lines.next().unwrap().starts_with("step,mean_episode_reward,"));
    let steps: Vec<u64> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert!(steps.len() >= 200, "{} rows", steps.len());
    assert!(steps.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(metrics.matches("step,").count(), 1);

    assert_eq!(read(&run.join("evals.csv")).lines().count(), 1 + 10);
    for name in ["update-000050.json", "update-000200.json", "final.json"] {
        assert!(run.join("checkpoints").join(name).exists(), "{name}");
    }
    let summary: serde_json::Value = serde_json::from_str(&read(&run.join("summary.json"))).unwrap();
    assert_eq!(summary["updates"], 200);
    assert!(summary["final_mean_reward"].as_f64().unwrap().is_finite());
    assert!(!run.join(".lock").exists());
}

#[test]
fn identical_configs_give_identical_csvs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &TINY.replace("total_steps = 6400", "total_steps = 1600"));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assert_ok(&train(&cfg, &a, &[]));
    assert_ok(&train(&cfg, &b, &[]));
    for f in ["metrics.csv", "evals.csv", "checkpoints/final.json"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f}");
    }
}

#[test]
fn resumed_runs_reproduce_the_uninterrupted_csvs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let whole = tmp.path().join("whole");
    assert_ok(&train(&cfg, &whole, &[]));

    // stop cleanly at update 70
    let split = tmp.path().join("split");
    assert_ok(&train(&cfg, &split, &["--max-updates", "70"]));
    assert!(split.join("checkpoints/update-000070.json").exists());
    assert!(!split.join("summary.json").exists());
    assert_ok(&train(&cfg, &split, &["--resume"]));

    // lose everything after the update-50 checkpoint, as a crash would
    let crashed = tmp.path().join("crashed");
    assert_ok(&train(&cfg, &crashed, &["--max-updates", "70"]));
    fs::remove_file(crashed.join("checkpoints/update-000070.json")).unwrap();
    assert_ok(&train(&cfg, &crashed, &["--resume"]));

    for f in ["metrics.csv", "evals.csv", "checkpoints/final.json"] {
        let expected = read(&whole.join(f));
        assert_eq!(read(&split.join(f)), expected, "split {f}");
        assert_eq!(read(&crashed.join(f)), expected, "crashed {f}");
    }
}

#[test]
fn resume_rejects_a_changed_config() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let run = tmp.path().join("run");
    assert_ok(&train(&cfg, &run, &["--max-updates", "5"]));
    let out = train(&cfg, &run, &["--resume", "--set", "train.lr=0.01"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn exit_codes_follow_the_error_category() {
    let tmp = TempDir::new().unwrap();
    let root = tmp.path();
    assert_eq!(dvelab(&[], root).status.code(), Some(1));
    assert_eq!(dvelab(&["train"], root).status.code(), Some(1));
    assert_eq!(dvelab(&["frobnicate"], root).status.code(), Some(1));
    assert_eq!(dvelab(&["--help"], root).status.code(), Some(0));

    let bad = write_config(root, &format!("{TINY}\nbogus_key = 1\n"));
    let out = dvelab(&["train", bad.to_str().unwrap()], root);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bogus_key") && err.contains("line"), "{err}");

    let missing = root.join("nope.toml");
    assert_eq!(dvelab(&["train", missing.to_str().unwrap()], root).status.code(), Some(2));
    assert_eq!(
        dvelab(&["eval", "--checkpoint", missing.to_str().unwrap(), "--levels", "tabular:2"], root).status.code(),
        Some(2)
    );
}

#[test]
fn runs_never_reuse_or_share_an_output_directory() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), TINY);
    let run = tmp.path().join("run");
    assert_ok(&train(&cfg, &run, &["--max-updates", "2"]));
    let before = read(&run.join("metrics.csv"));
    assert_eq!(train(&cfg, &run, &[]).status.code(), Some(2));
    assert_eq!(read(&run.join("metrics.csv")), before);

    let locked = tmp.path().join("locked");
    fs::create_dir_all(&locked).unwrap();
    fs::write(locked.join(".lock"), "1\n").unwrap();
    let out = train(&cfg, &locked, &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("locked"));
    assert!(!locked.join("metrics.csv").exists());
}

#[test]
fn default_output_root_comes_from_the_environment() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), &TINY.replace("total_steps = 6400", "total_steps = 64"));
    assert_ok(&dvelab(&["train", cfg.to_str().unwrap()], tmp.path()));
    assert!(tmp.path().join("tiny/metrics.csv").exists());
}

fn gapworld_net(head: HeadKind, seed: u64) -> ActorCritic {
    let cfg = NetConfig::new(gapworld::OBS_DIM, gapworld::N_ACTIONS, head).with_sizes(8, 8);
    ActorCritic::new(cfg, &mut rng_from_seed(seed)).unwrap()
}

#[test]
fn eval_rejects_zero_episodes_and_mismatched_levels() {
    let tmp = TempDir::new().unwrap();
    let ckpt = tmp.path().join("net.json");
    save_net(&gapworld_net(HeadKind::Baseline, 1), &ckpt);
    let c = ckpt.to_str().unwrap();
    let out = dvelab(&["eval", "--checkpoint", c, "--levels", "gapworld:3", "--episodes", "0"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    let out = dvelab(&["eval", "--checkpoint", c, "--levels", "tabular:3"], tmp.path());
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn greedy_eval_is_repeatable() {
    let tmp = TempDir::new().unwrap();
    let ckpt = tmp.path().join("net.json");
    save_net(&gapworld_net(HeadKind::Dynamic { n_basis: 3 }, 2), &ckpt);
    let args =
        ["eval", "--checkpoint", ckpt.to_str().unwrap(), "--levels", "gapworld:5", "--episodes", "20", "--greedy"];
    let a = dvelab(&args, tmp.path());
    assert_ok(&a);
    let report: serde_json::Value = serde_json::from_str(stdout(&a).trim()).unwrap();
    assert_eq!(report["episodes"], 20);
    assert_eq!(stdout(&a), stdout(&dvelab(&args, tmp.path())));
}

/// Probability that a walker choosing each action with equal probability
/// reaches the goal, from the absorbing chain `x = P x + b`.
fn uniform_success_probability(level: &LevelHandle) -> f64 {
    let spec = level.spec();
    let (ns, na) = (spec.n_states(), spec.n_actions());
    let mut a = DMatrix::<f64>::identity(ns, ns);
    let mut b = DVector::<f64>::zeros(ns);
    for s in (0..ns).filter(|&s| !spec.is_terminal(s)) {
        for act in 0..na {
            for (s2, &p) in spec.row(s, act).iter().enumerate() {
                let p = p / na as f64;
                if level.is_success(s2) {
                    b[s] += p;
                } else if !spec.is_terminal(s2) {
                    a[(s, s2)] -= p;
                }
            }
        }
    }
    let x = a.lu().solve(&b).unwrap();
    spec.start_dist().iter().enumerate().map(|(s, &p)| p * x[s]).sum()
}

#[test]
fn random_policy_success_rate_matches_absorption_probability() {
    let tmp = TempDir::new().unwrap();
    let net = gapworld_net(HeadKind::Baseline, 3);
    let mut ckpt = Checkpoint::new(&net, 0, 0, 0);
    for t in ckpt.tensors.iter_mut().filter(|t| t.name.starts_with("actor.")) {
        t.data.iter_mut().for_each(|w| *w = 0.0);
    }
    let path = tmp.path().join("uniform.json");
    ckpt.save(&path).unwrap();

    let level = LevelHandle::gapworld(3, 8).unwrap();
    let exact = uniform_success_probability(&level);
    assert!(exact > 0.05 && exact < 0.95, "{exact}");
    let n = 4000;
    let args = [
        "eval",
        "--checkpoint",
        path.to_str().unwrap(),
        "--levels",
        "gapworld:3..4",
        "--gapworld-length",
        "8",
        "--episodes",
        "4000",
        "--horizon",
        "1000",
        "--seed",
        "11",
    ];
    let out = dvelab(&args, tmp.path());
    assert_ok(&out);
    let report: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    let rate = report["success_rate"].as_f64().unwrap();
    let se = (exact * (1.0 - exact) / n as f64).sqrt();
    assert!((rate - exact).abs() < 4.0 * se, "rate {rate}, exact {exact}, se {se}");
}

#[test]
fn lemmas_pass_on_the_default_tabular_set() {
    let tmp = TempDir::new().unwrap();
    let out_dir = tmp.path().join("lemmas");
    let out = dvelab(&["analyze", "lemmas", "--out", out_dir.to_str().unwrap()], tmp.path());
    assert_ok(&out);
    let text = stdout(&out);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 2, "{text}");
    let worst = read(&out_dir.join("lemma1.csv"))
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap())
        .fold(0.0, f64::max);
    assert!(worst <= 1e-9, "{worst}");
    assert_eq!(read(&out_dir.join("lemma1.csv")).lines().count(), 21);
}

#[test]
fn decompose_reports_the_identity() {
    let tmp = TempDir::new().unwrap();
    let out = dvelab(&["analyze", "decompose", "--out", tmp.path().join("d").to_str().unwrap()], tmp.path());
    assert_ok(&out);
    assert!(stdout(&out).starts_with("PASS"), "{}", stdout(&out));
    let gap = dvelab(&["analyze", "decompose", "--levels", "gapworld:3"], tmp.path());
    assert_eq!(gap.status.code(), Some(2));
}

/// Fifty rows around two random templates of 32 values each.
fn two_archetype_matrix(seed: u64) -> ValueMatrix {
    let mut rng = rng_from_seed(seed);
    let (n, k) = (50, 32);
    let templates: Vec<Vec<f64>> = (0..2).map(|_| (0..k).map(|_| rng.random_range(-5.0..5.0)).collect()).collect();
    let noise = Normal::new(0.0, 0.2).unwrap();
    let values = (0..n).flat_map(|i| templates[i % 2].iter().map(|v| v + noise.sample(&mut rng)).collect::<Vec<_>>());
    ValueMatrix::new(values.collect(), (0..n as u64).collect(), (0..k).collect(), "synthetic").unwrap()
}

#[test]
fn aic_curve_has_its_minimum_at_two_archetypes() {
    let tmp = TempDir::new().unwrap();
    let matrix = tmp.path().join("values.json");
    fs::write(&matrix, two_archetype_matrix(4).to_json()).unwrap();
    let dir = tmp.path().join("aic");
    let out = dvelab(
        &["analyze", "aic", "--matrix", matrix.to_str().unwrap(), "--out", dir.to_str().unwrap(), "--trials", "3"],
        tmp.path(),
    );
    assert_ok(&out);
    assert!(stdout(&out).contains("C=2"), "{}", stdout(&out));

    let mut r = csv::Reader::from_path(dir.join("aic.csv")).unwrap();
    let curve: Vec<(f64, f64)> = r
        .records()
        .map(|rec| {
            let rec = rec.unwrap();
            (rec[0].parse().unwrap(), rec[1].parse().unwrap())
        })
        .collect();
    assert_eq!(curve.len(), 5);
    let best = curve.iter().min_by(|a, b| a.1.partial_cmp(&b.1).unwrap()).unwrap();
    assert_eq!(best.0, 2.0);
}

#[test]
fn clusters_on_gapworld_probe_values_prefer_several_components() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path().join("clusters");
    let out = dvelab(&["analyze", "clusters", "--out", dir.to_str().unwrap()], tmp.path());
    assert_ok(&out);
    assert!(stdout(&out).contains("(clustered)"), "{}", stdout(&out));
    let hist = read(&dir.join("histograms.csv"));
    let total: usize = hist.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse::<usize>().unwrap()).sum();
    assert_eq!(total, 50);
}

#[test]
fn confusion_rows_stay_within_bounds() {
    let tmp = TempDir::new().unwrap();
    let n_basis = 4;
    let ckpt = tmp.path().join("dyn.json");
    save_net(&gapworld_net(HeadKind::Dynamic { n_basis }, 5), &ckpt);
    let dir = tmp.path().join("conf");
    let c = ckpt.to_str().unwrap();
    let out = dvelab(
        &[
            "analyze",
            "confusion",
            "--checkpoint",
            c,
            "--levels",
            "gapworld:6",
            "--episodes",
            "12",
            "--out",
            dir.to_str().unwrap(),
        ],
        tmp.path(),
    );
    assert_ok(&out);

    let mut r = csv::Reader::from_path(dir.join("confusion.csv")).unwrap();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec.unwrap();
        let delta: f64 = rec[4].parse().unwrap();
        assert!(delta >= 1.0 / n_basis as f64 - 1e-12 && delta <= 1.0 + 1e-12, "{delta}");
        let alpha: f64 = (5..5 + n_basis).map(|i| rec[i].parse::<f64>().unwrap()).sum();
        assert!((alpha - 1.0).abs() < 1e-9);
        rows += 1;
    }
    assert!(rows > 12);
    let per_ep = read(&dir.join("contributions.csv"));
    assert_eq!(per_ep.lines().count(), 13);

    let base = tmp.path().join("base.json");
    save_net(&gapworld_net(HeadKind::Baseline, 5), &base);
    let out = dvelab(&["analyze", "confusion", "--checkpoint", base.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn analyses_are_reproducible() {
    let tmp = TempDir::new().unwrap();
    let run = |name: &str| {
        let dir = tmp.path().join(name);
        assert_ok(&dvelab(&["analyze", "aic", "--levels", "gapworld:40", "--out", dir.to_str().unwrap()], tmp.path()));
        assert_ok(&dvelab(&["analyze", "lemmas", "--out", dir.to_str().unwrap()], tmp.path()));
        dir
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["aic.csv", "values.json", "lemma1.csv", "lemma2.csv"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f}");
    }
}
