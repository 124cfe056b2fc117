use std::path::{Path, PathBuf};

use dvelab::analysis::{
    clustering_hypothesis_test, default_tabular_set, estimate_true_values, exact_value_matrix, lemma1_check,
    lemma2_sweep, select_num_clusters, tabular_set, variance_decomposition, variance_vs_levels, write_curve_csv,
    CurvePoint, EmOptions, FineTuneConfig, ValueMatrix, VarianceCurveConfig, LEMMA1_TOLERANCE,
};
use dvelab::envs::{gapworld, solve_value, Family, LevelHandle, Policy};
use dvelab::models::{confusion, contribution, HeadKind, NetConfig};
use dvelab::seed::{component_rng, derive_seed};
use dvelab::train::{evaluate_detailed, Algorithm, TrainConfig};
use rand::Rng;

use super::{level_set, load_network, runtime};
use crate::output::{csv_writer, num, output_root, write_json};
use crate::{AnalyzeCommand, CliError, CommonArgs, ValueSourceArgs};

/// Largest identity residual or oracle error `decompose` accepts.
const DECOMPOSE_TOLERANCE: f64 = 1e-9;

fn prepare_dir(common: &CommonArgs, name: &str) -> Result<PathBuf, CliError> {
    let dir = common.out.clone().unwrap_or_else(|| output_root().join("analyze").join(name));
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(dir)
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Runtime(e.to_string())
}

fn finish(w: &mut csv::Writer<std::fs::File>, path: &Path) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::io(path, e))
}

/// States every level shares, as given on the command line: `probe`,
/// `all`, or a comma-separated list.
fn parse_states(spec: &str, levels: &[LevelHandle]) -> Result<Vec<usize>, CliError> {
    let n = levels[0].n_states();
    if levels.iter().any(|l| l.n_states() != n) {
        return Err(CliError::Config("levels have different state counts".into()));
    }
    match spec.trim() {
        "probe" => {
            let probe = levels[0].probe_state();
            if levels.iter().any(|l| l.probe_state() != probe) {
                return Err(CliError::Config("levels disagree on the probe state; pass --states".into()));
            }
            Ok(vec![probe])
        }
        "all" => Ok((0..n).collect()),
        list => {
            let states: Vec<usize> = list
                .split(',')
                .map(|s| s.trim().parse().map_err(|_| CliError::Usage(format!("bad state `{s}` in --states"))))
                .collect::<Result<_, _>>()?;
            if let Some(&s) = states.iter().find(|&&s| s >= n) {
                return Err(CliError::Config(format!("state {s} out of range for levels with {n} states")));
            }
            Ok(states)
        }
    }
}

/// Values of `levels` at `states`: exact under each level's reference
/// policy, or fine-tuned critic estimates at probe snapshots when a
/// checkpoint is given (the state selection then does not apply).
fn value_matrix(source: &ValueSourceArgs, states: &str, seed: u64) -> Result<ValueMatrix, CliError> {
    let levels = level_set(&source.levels, source.gapworld_length)?;
    match &source.checkpoint {
        Some(path) => {
            let net = load_network(path)?;
            let cfg = FineTuneConfig { seed, ..FineTuneConfig::default() };
            let result = estimate_true_values(&levels, &net, &cfg).map_err(runtime)?;
            for f in &result.flagged {
                eprintln!("warning: level {} fine-tuning flagged: {:?}", f.level_id, f);
            }
            Ok(result.matrix)
        }
        None => {
            let states = parse_states(states, &levels)?;
            exact_value_matrix(&levels, &states, "reference", |l| Ok(l.reference_policy())).map_err(runtime)
        }
    }
}

pub fn run(cmd: AnalyzeCommand) -> Result<(), CliError> {
    match cmd {
        AnalyzeCommand::Clusters { common, source, states, c_max } => clusters(&common, &source, &states, c_max),
        AnalyzeCommand::Aic { common, source, matrix, states, c_max, trials } => {
            aic(&common, &source, matrix.as_deref(), &states, c_max, trials as usize)
        }
        AnalyzeCommand::Decompose { common, levels, checkpoint } => {
            decompose(&common, levels.as_deref(), checkpoint.as_deref())
        }
        AnalyzeCommand::Lemmas { common, baselines, sets } => lemmas(&common, baselines, sets),
        AnalyzeCommand::VarianceCurve {
            common,
            counts,
            seeds,
            updates,
            fraction,
            workers,
            steps_per_worker,
            gapworld_length,
            encoder_hidden,
            lstm_hidden,
        } => {
            let cfg = VarianceCurveConfig {
                level_counts: counts,
                seeds,
                updates,
                fraction,
                gapworld_length,
                net: NetConfig::new(gapworld::OBS_DIM, gapworld::N_ACTIONS, HeadKind::Baseline)
                    .with_sizes(encoder_hidden, lstm_hidden),
                train: TrainConfig {
                    algorithm: Algorithm::Ppo,
                    n_workers: workers,
                    steps_per_worker,
                    ..TrainConfig::default()
                },
            };
            variance_curve(&common, &cfg)
        }
        AnalyzeCommand::Confusion { common, checkpoint, levels, gapworld_length, episodes, horizon } => {
            confusion_tables(&common, &checkpoint, &levels, gapworld_length, episodes as usize, horizon)
        }
    }
}

fn clusters(common: &CommonArgs, source: &ValueSourceArgs, states: &str, c_max: usize) -> Result<(), CliError> {
    let dir = prepare_dir(common, "clusters")?;
    let matrix = value_matrix(source, states, common.seed)?;
    std::fs::write(dir.join("values.json"), matrix.to_json()).map_err(|e| CliError::io(&dir, e))?;
    let curve_path = dir.join("clusters.csv");
    let hist_path = dir.join("histograms.csv");
    let mut curves = csv_writer(&curve_path)?;
    let mut hists = csv_writer(&hist_path)?;
    curves.write_record(["state", "c", "aic_per_n", "eligible", "selected"]).map_err(csv_err)?;
    hists.write_record(["state", "bin_lo", "bin_hi", "count"]).map_err(csv_err)?;
    for j in 0..matrix.n_states {
        let mut rng = component_rng(common.seed, &format!("clusters/{j}"));
        let report = clustering_hypothesis_test(&matrix, j, c_max, &EmOptions::default(), &mut rng).map_err(runtime)?;
        let sel = &report.selection;
        for (i, (&a, &ok)) in sel.curve.iter().zip(&sel.eligible).enumerate() {
            curves
                .write_record([
                    report.state_id.to_string(),
                    (i + 1).to_string(),
                    num(a),
                    ok.to_string(),
                    (i + 1 == sel.best).to_string(),
                ])
                .map_err(csv_err)?;
        }
        let h = &report.histogram;
        for (b, &count) in h.counts.iter().enumerate() {
            hists
                .write_record([report.state_id.to_string(), num(h.edges[b]), num(h.edges[b + 1]), count.to_string()])
                .map_err(csv_err)?;
        }
        println!(
            "state {}: AIC prefers C={} ({})",
            report.state_id,
            sel.best,
            if report.prefers_multiple { "clustered" } else { "single cluster" }
        );
    }
    finish(&mut curves, &curve_path)?;
    finish(&mut hists, &hist_path)
}

fn aic(
    common: &CommonArgs,
    source: &ValueSourceArgs,
    matrix_path: Option<&Path>,
    states: &str,
    c_max: usize,
    trials: usize,
) -> Result<(), CliError> {
    let dir = prepare_dir(common, "aic")?;
    let matrix = match matrix_path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
            ValueMatrix::from_json(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => {
            let m = value_matrix(source, states, common.seed)?;
            std::fs::write(dir.join("values.json"), m.to_json()).map_err(|e| CliError::io(&dir, e))?;
            m
        }
    };
    let mut per_c: Vec<Vec<f64>> = vec![Vec::new(); c_max];
    let mut eligible = vec![true; c_max];
    for t in 0..trials {
        let mut rng = component_rng(common.seed, &format!("aic/{t}"));
        let sel = select_num_clusters(&matrix, c_max, &EmOptions::default(), &mut rng).map_err(runtime)?;
        for (c, (&a, &ok)) in sel.curve.iter().zip(&sel.eligible).enumerate() {
            per_c[c].push(a);
            eligible[c] &= ok;
        }
    }
    let points: Vec<CurvePoint> =
        per_c.iter().enumerate().map(|(c, s)| CurvePoint::from_samples((c + 1) as f64, s)).collect();
    let mut best = 0;
    for (c, p) in points.iter().enumerate() {
        if eligible[c] && p.mean < points[best].mean {
            best = c;
        }
    }
    let path = dir.join("aic.csv");
    let file = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
    write_curve_csv(&points, file).map_err(csv_err)?;
    println!("AIC/N argmin: C={} ({} levels, {} values each)", best + 1, matrix.n_levels, matrix.n_states);
    Ok(())
}

fn decompose(common: &CommonArgs, levels: Option<&str>, checkpoint: Option<&Path>) -> Result<(), CliError> {
    let dir = prepare_dir(common, "decompose")?;
    let levels = match levels {
        Some(spec) => level_set(spec, gapworld::DEFAULT_LENGTH)?,
        None => default_tabular_set().map_err(runtime)?,
    };
    if levels[0].family() != Family::Tabular {
        return Err(CliError::Config("decompose needs a tabular level set".into()));
    }
    let net = checkpoint.map(load_network).transpose()?;
    let (ns, na) = (levels[0].n_states(), levels[0].n_actions());
    let policy = match &net {
        Some(net) => net.markov_policy(&levels[0]).map_err(runtime)?,
        None => Policy::uniform(ns, na),
    };
    let values: Vec<Vec<f64>> =
        levels.iter().map(|l| solve_value(l.spec(), &policy)).collect::<Result<_, _>>().map_err(runtime)?;
    let mean: Vec<f64> = (0..ns).map(|s| values.iter().map(|v| v[s]).sum::<f64>() / levels.len() as f64).collect();
    let mut rows = vec![
        ("state_mean", variance_decomposition(&levels, &policy, |_, s| mean[s]).map_err(runtime)?),
        ("oracle", variance_decomposition(&levels, &policy, |m, s| values[m][s]).map_err(runtime)?),
    ];
    if let Some(net) = &net {
        let mut predicted = Vec::with_capacity(levels.len());
        for l in &levels {
            let obs: Vec<f64> = (0..ns).flat_map(|s| l.observe(s)).collect();
            let zero = dvelab::diffcore::LstmState::zeros(net.config().lstm_hidden);
            let outs = net.infer(&obs, &vec![zero; ns]).map_err(runtime)?;
            predicted.push(outs.iter().map(|o| o.critic.value).collect::<Vec<f64>>());
        }
        rows.push(("network", variance_decomposition(&levels, &policy, |m, s| predicted[m][s]).map_err(runtime)?));
    }
    let path = dir.join("decompose.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["predictor", "total", "minimal", "prediction_error", "cross_term", "residual"]).map_err(csv_err)?;
    for (name, d) in &rows {
        w.write_record([
            name.to_string(),
            num(d.total),
            num(d.minimal),
            num(d.prediction_error),
            num(d.cross_term),
            num(d.residual()),
        ])
        .map_err(csv_err)?;
    }
    finish(&mut w, &path)?;
    let worst_residual = rows.iter().map(|(_, d)| d.residual().abs()).fold(0.0, f64::max);
    let worst_cross = rows.iter().map(|(_, d)| d.cross_term.abs()).fold(0.0, f64::max);
    let oracle_error = rows[1].1.prediction_error;
    let pass = worst_residual <= DECOMPOSE_TOLERANCE
        && worst_cross <= DECOMPOSE_TOLERANCE
        && oracle_error <= DECOMPOSE_TOLERANCE;
    println!(
        "{} decompose: identity residual {worst_residual:.3e}, cross term {worst_cross:.3e}, oracle prediction error {oracle_error:.3e}",
        if pass { "PASS" } else { "FAIL" }
    );
    if pass {
        Ok(())
    } else {
        Err(CliError::Runtime("variance decomposition check failed".into()))
    }
}

fn lemmas(common: &CommonArgs, baselines: usize, sets: usize) -> Result<(), CliError> {
    let dir = prepare_dir(common, "lemmas")?;
    let levels = default_tabular_set().map_err(runtime)?;
    let (ns, na) = (levels[0].n_states(), levels[0].n_actions());
    let mut rng = component_rng(common.seed, "lemmas/policy");
    let logits: Vec<f64> = (0..ns * na).map(|_| rng.random_range(-2.0..2.0)).collect();

    let path1 = dir.join("lemma1.csv");
    let mut w1 = csv_writer(&path1)?;
    w1.write_record(["baseline", "max_abs_diff"]).map_err(csv_err)?;
    let mut worst: f64 = 0.0;
    for b in 0..baselines {
        let mut rng = component_rng(common.seed, &format!("lemmas/baseline/{b}"));
        let f: Vec<f64> = (0..levels.len() * ns).map(|_| rng.random_range(-20.0..20.0)).collect();
        let r = lemma1_check(&levels, &logits, |m, s| f[m * ns + s]).map_err(runtime)?;
        worst = worst.max(r.max_abs_diff);
        w1.write_record([b.to_string(), num(r.max_abs_diff)]).map_err(csv_err)?;
    }
    finish(&mut w1, &path1)?;
    let lemma1_pass = worst <= LEMMA1_TOLERANCE;
    println!(
        "{} lemma1: max gradient deviation {worst:.3e} over {baselines} baselines (tolerance {LEMMA1_TOLERANCE:e})",
        if lemma1_pass { "PASS" } else { "FAIL" }
    );

    let path2 = dir.join("lemma2.csv");
    let mut w2 = csv_writer(&path2)?;
    w2.write_record(["set", "lambda", "objective"]).map_err(csv_err)?;
    let mut at_one = 0;
    let mut spread: f64 = 0.0;
    for k in 0..sets {
        let set = tabular_set(derive_seed(common.seed, &format!("lemmas/set/{k}")), levels.len()).map_err(runtime)?;
        let r = lemma2_sweep(&set, &Policy::uniform(ns, na)).map_err(runtime)?;
        at_one += (r.argmin_lambda == 1.0) as usize;
        spread = spread.max(r.curvature_spread());
        for (l, o) in r.lambdas.iter().zip(&r.objective) {
            w2.write_record([k.to_string(), num(*l), num(*o)]).map_err(csv_err)?;
        }
    }
    finish(&mut w2, &path2)?;
    let lemma2_pass = at_one == sets && spread <= 1e-9;
    println!(
        "{} lemma2: minimiser at lambda = 1 on {at_one}/{sets} sets, second-difference spread {spread:.3e}",
        if lemma2_pass { "PASS" } else { "FAIL" }
    );
    if lemma1_pass && lemma2_pass {
        Ok(())
    } else {
        Err(CliError::Runtime("lemma checks failed".into()))
    }
}

fn variance_curve(common: &CommonArgs, cfg: &VarianceCurveConfig) -> Result<(), CliError> {
    let dir = prepare_dir(common, "variance-curve")?;
    write_json(&dir.join("variance_curve_config.json"), cfg)?;
    let points = variance_vs_levels(cfg).map_err(runtime)?;
    let path = dir.join("variance_curve.csv");
    let file = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
    write_curve_csv(&points, file).map_err(csv_err)?;
    for p in &points {
        println!("levels {:>4}: E[psi^2] {:.4} +- {:.4} ({} seeds)", p.x, p.mean, p.stderr, p.n_seeds);
    }
    Ok(())
}

fn confusion_tables(
    common: &CommonArgs,
    checkpoint: &Path,
    levels: &str,
    gapworld_length: usize,
    episodes: usize,
    horizon: usize,
) -> Result<(), CliError> {
    let net = load_network(checkpoint)?;
    let Some(n_basis) = net.head().n_basis() else {
        return Err(CliError::Config(format!(
            "confusion needs a dynamic-head checkpoint, {} has a {} head",
            checkpoint.display(),
            net.head().name()
        )));
    };
    let levels = level_set(levels, gapworld_length)?;
    let dir = prepare_dir(common, "confusion")?;
    let eps = evaluate_detailed(&net, &levels, episodes, derive_seed(common.seed, "confusion"), horizon, false, true)
        .map_err(runtime)?;
    let step_path = dir.join("confusion.csv");
    let ep_path = dir.join("contributions.csv");
    let mut steps = csv_writer(&step_path)?;
    let mut per_ep = csv_writer(&ep_path)?;
    let alpha_cols: Vec<String> = (0..n_basis).map(|i| format!("alpha_{i}")).collect();
    let rho_cols: Vec<String> = (0..n_basis).map(|i| format!("rho_{i}")).collect();
    let mut header = vec!["episode".to_string(), "level_id".into(), "archetype".into(), "t".into(), "delta".into()];
    header.extend(alpha_cols);
    steps.write_record(&header).map_err(csv_err)?;
    let mut header =
        vec!["episode".to_string(), "level_id".into(), "archetype".into(), "length".into(), "total_reward".into()];
    header.extend(rho_cols);
    per_ep.write_record(&header).map_err(csv_err)?;
    let (lo, hi) = (1.0 / n_basis as f64, 1.0);
    let mut out_of_bounds = 0;
    let mut n_steps = 0;
    for (k, ep) in eps.iter().enumerate() {
        let level = &levels[ep.level_id];
        let trace: Vec<&[f64]> = ep.steps.iter().filter_map(|s| s.alpha.as_deref()).collect();
        for (t, alpha) in trace.iter().enumerate() {
            let delta = confusion(alpha).map_err(runtime)?;
            n_steps += 1;
            out_of_bounds += (delta < lo - 1e-12 || delta > hi + 1e-12) as usize;
            let mut rec =
                vec![k.to_string(), level.seed().to_string(), level.archetype().to_string(), t.to_string(), num(delta)];
            rec.extend(alpha.iter().map(|&a| num(a)));
            steps.write_record(&rec).map_err(csv_err)?;
        }
        let rho = contribution(&trace).map_err(runtime)?;
        let mut rec = vec![
            k.to_string(),
            level.seed().to_string(),
            level.archetype().to_string(),
            ep.length.to_string(),
            num(ep.total_reward),
        ];
        rec.extend(rho.iter().map(|&r| num(r)));
        per_ep.write_record(&rec).map_err(csv_err)?;
    }
    finish(&mut steps, &step_path)?;
    finish(&mut per_ep, &ep_path)?;
    println!("{n_steps} steps over {} episodes; {out_of_bounds} confusion values outside [1/{n_basis}, 1]", eps.len());
    Ok(())
}
