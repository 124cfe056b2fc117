use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use dvelab::models::Checkpoint;
use dvelab::train::{evaluate, MetricsRow, Trainer, METRICS_COLUMNS};
use serde::{Deserialize, Serialize};

use super::runtime;
use crate::config::RunConfig;
use crate::output::{csv_appender, num, opt_num, output_root, write_json, DirLock};
use crate::{CliError, TrainArgs};

pub const CONFIG_FILE: &str = "config.toml";
pub const METRICS_FILE: &str = "metrics.csv";
pub const EVALS_FILE: &str = "evals.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const FINAL_CHECKPOINT: &str = "final.json";

pub const EVAL_COLUMNS: [&str; 6] = ["update", "step", "mean_total_reward", "success_rate", "spl", "mean_length"];

/// Evaluations averaged into the summary's final reward.
const FINAL_EVAL_WINDOW: usize = 10;

#[derive(Debug, Serialize, Deserialize)]
pub struct Summary {
    pub experiment: String,
    pub updates: u64,
    pub env_steps: u64,
    /// Mean reward over the last (up to) ten evaluations.
    pub final_mean_reward: f64,
    pub best_eval: f64,
    pub best_eval_update: u64,
    pub wall_clock_secs: f64,
}

pub fn checkpoint_name(update: u64) -> String {
    format!("update-{update:06}.json")
}

fn latest_checkpoint(dir: &Path) -> Result<Option<PathBuf>, CliError> {
    let ckpts = dir.join(CHECKPOINT_DIR);
    if !ckpts.is_dir() {
        return Ok(None);
    }
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in fs::read_dir(&ckpts).map_err(|e| CliError::io(&ckpts, e))? {
        let path = entry.map_err(|e| CliError::io(&ckpts, e))?.path();
        let update = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("update-")?.strip_suffix(".json")?.parse::<u64>().ok());
        if let Some(u) = update {
            if best.as_ref().is_none_or(|(b, _)| u > *b) {
                best = Some((u, path));
            }
        }
    }
    Ok(best.map(|(_, p)| p))
}

/// Drops CSV rows whose first column is beyond `limit`, so a resumed run
/// rewrites exactly the rows it lost.
fn truncate_rows(path: &Path, limit: u64, key_column: usize) -> Result<(), CliError> {
    if !path.exists() {
        return Ok(());
    }
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut kept = String::new();
    for (i, line) in text.lines().enumerate() {
        let keep =
            i == 0 || line.split(',').nth(key_column).and_then(|v| v.parse::<u64>().ok()).is_some_and(|v| v <= limit);
        if keep {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    fs::write(path, kept).map_err(|e| CliError::io(path, e))
}

fn metrics_record(row: &MetricsRow) -> Vec<String> {
    vec![
        row.step.to_string(),
        num(row.mean_episode_reward),
        num(row.policy_loss),
        num(row.value_loss),
        num(row.entropy),
        num(row.kl_old_new),
        num(row.sample_variance_psi2),
        num(row.kappa_estimate),
        num(row.clip_fraction),
        opt_num(row.mean_confusion),
    ]
}

fn read_eval_rewards(path: &Path) -> Result<Vec<(u64, f64)>, CliError> {
    let mut out = Vec::new();
    if !path.exists() {
        return Ok(out);
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Runtime(e.to_string()))?;
    for rec in r.records() {
        let rec = rec.map_err(|e| CliError::Runtime(e.to_string()))?;
        let update = rec[0].parse().map_err(|_| CliError::Runtime(format!("bad row in {}", path.display())))?;
        let reward = rec[2].parse().map_err(|_| CliError::Runtime(format!("bad row in {}", path.display())))?;
        out.push((update, reward));
    }
    Ok(out)
}

pub fn output_dir(args: &TrainArgs, cfg: &RunConfig) -> PathBuf {
    args.out
        .clone()
        .or_else(|| cfg.experiment.output_dir.clone())
        .unwrap_or_else(|| output_root().join(&cfg.experiment.name))
}

pub fn run(args: &TrainArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let cfg = RunConfig::load(&args.config, &args.overrides)?;
    let dir = output_dir(args, &cfg);
    let _lock = DirLock::acquire(&dir)?;
    let config_path = dir.join(CONFIG_FILE);
    let metrics_path = dir.join(METRICS_FILE);
    let evals_path = dir.join(EVALS_FILE);

    let levels = cfg.levels()?;
    let eval_levels = cfg.eval_levels()?;
    let mut trainer = if args.resume {
        let saved = fs::read_to_string(&config_path)
            .map_err(|_| CliError::Config(format!("nothing to resume in {}", dir.display())))?;
        if RunConfig::from_toml(&saved)? != cfg {
            return Err(CliError::Config(format!("config differs from the one saved in {}", config_path.display())));
        }
        match latest_checkpoint(&dir)? {
            Some(path) => {
                let ckpt =
                    Checkpoint::load(&path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
                let trainer = Trainer::resume(&ckpt, cfg.train.clone(), levels).map_err(runtime)?;
                truncate_rows(&metrics_path, trainer.env_steps(), 0)?;
                truncate_rows(&evals_path, trainer.updates(), 0)?;
                eprintln!("resuming {} from update {}", dir.display(), trainer.updates());
                trainer
            }
            None => {
                for p in [&metrics_path, &evals_path] {
                    if p.exists() {
                        fs::remove_file(p).map_err(|e| CliError::io(p, e))?;
                    }
                }
                Trainer::new(cfg.net_config()?, cfg.train.clone(), levels, cfg.experiment.seed).map_err(runtime)?
            }
        }
    } else {
        if config_path.exists() || metrics_path.exists() {
            return Err(CliError::Config(format!(
                "{} already holds a run; pass --resume or choose a fresh output directory",
                dir.display()
            )));
        }
        fs::write(&config_path, cfg.to_toml()).map_err(|e| CliError::io(&config_path, e))?;
        Trainer::new(cfg.net_config()?, cfg.train.clone(), levels, cfg.experiment.seed).map_err(runtime)?
    };
    let ckpt_dir = dir.join(CHECKPOINT_DIR);
    fs::create_dir_all(&ckpt_dir).map_err(|e| CliError::io(&ckpt_dir, e))?;

    let total = cfg.total_updates();
    let mut metrics = csv_appender(&metrics_path, &METRICS_COLUMNS)?;
    let mut evals = csv_appender(&evals_path, &EVAL_COLUMNS)?;
    let save = |trainer: &Trainer, path: &Path| {
        trainer.checkpoint().save(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
    };
    let mut done_here = 0u64;
    while trainer.updates() < total {
        if args.max_updates.is_some_and(|m| done_here >= m) {
            save(&trainer, &ckpt_dir.join(checkpoint_name(trainer.updates())))?;
            eprintln!("stopped after update {} of {total}; continue with --resume", trainer.updates());
            return Ok(());
        }
        let (row, _) = trainer.iterate().map_err(runtime)?;
        done_here += 1;
        let u = trainer.updates();
        metrics.write_record(metrics_record(&row)).map_err(|e| CliError::Runtime(e.to_string()))?;
        metrics.flush().map_err(|e| CliError::io(&metrics_path, e))?;
        if u % cfg.run.eval_every == 0 || u == total {
            let report = evaluate(
                trainer.network(),
                &eval_levels,
                cfg.run.eval_episodes,
                cfg.eval_seed(),
                cfg.train.horizon,
                false,
            )
            .map_err(runtime)?;
            evals
                .write_record([
                    u.to_string(),
                    trainer.env_steps().to_string(),
                    num(report.mean_total_reward),
                    num(report.success_rate),
                    opt_num(report.spl),
                    num(report.mean_length),
                ])
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            evals.flush().map_err(|e| CliError::io(&evals_path, e))?;
        }
        if u % cfg.run.checkpoint_every == 0 {
            save(&trainer, &ckpt_dir.join(checkpoint_name(u)))?;
        }
    }
    save(&trainer, &ckpt_dir.join(checkpoint_name(trainer.updates())))?;
    save(&trainer, &ckpt_dir.join(FINAL_CHECKPOINT))?;

    let rewards = read_eval_rewards(&evals_path)?;
    let tail = &rewards[rewards.len().saturating_sub(FINAL_EVAL_WINDOW)..];
    let (best_eval_update, best_eval) =
        rewards.iter().copied().fold((0, f64::NEG_INFINITY), |acc, (u, r)| if r > acc.1 { (u, r) } else { acc });
    let summary = Summary {
        experiment: cfg.experiment.name.clone(),
        updates: trainer.updates(),
        env_steps: trainer.env_steps(),
        final_mean_reward: tail.iter().map(|(_, r)| r).sum::<f64>() / tail.len().max(1) as f64,
        best_eval,
        best_eval_update,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    write_json(&dir.join(SUMMARY_FILE), &summary)?;
    println!(
        "{}: {} updates, {} steps, final reward {:.3}, best {:.3} at update {}",
        summary.experiment,
        summary.updates,
        summary.env_steps,
        summary.final_mean_reward,
        summary.best_eval,
        summary.best_eval_update
    );
    Ok(())
}
