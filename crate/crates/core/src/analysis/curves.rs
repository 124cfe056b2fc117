use std::io::Write;

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::envs::LevelHandle;
use crate::models::{HeadKind, NetConfig};
use crate::train::{TrainConfig, Trainer};

/// One point of a curve aggregated over seeds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub mean: f64,
    /// Standard error of the mean (zero for a single seed).
    pub stderr: f64,
    pub n_seeds: usize,
}

impl CurvePoint {
    pub fn from_samples(x: f64, samples: &[f64]) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let stderr = if n > 1 {
            let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        CurvePoint { x, mean, stderr, n_seeds: n }
    }
}

/// Writes `x,mean,stderr,n_seeds` rows with a header.
pub fn write_curve_csv<W: Write>(points: &[CurvePoint], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(p)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceCurveConfig {
    pub level_counts: Vec<usize>,
    pub seeds: Vec<u64>,
    /// Updates per run.
    pub updates: usize,
    /// Leading fraction of the updates whose `E[ψ²]` is averaged.
    pub fraction: f64,
    pub gapworld_length: usize,
    pub net: NetConfig,
    pub train: TrainConfig,
}

/// Trains a baseline-head agent on `n` gapworld levels for each `n` in
/// `level_counts` and each seed, and reports the mean sample `E[ψ²]` over
/// the early part of training.
///
/// The run for the `i`-th seed uses levels `i..i + n`. Single-level runs
/// therefore see different levels (and both archetypes, given two or more
/// seeds) instead of repeating level 0.
pub fn variance_vs_levels(cfg: &VarianceCurveConfig) -> Result<Vec<CurvePoint>, AnalysisError> {
    if cfg.seeds.is_empty() || cfg.updates == 0 || !(cfg.fraction > 0.0 && cfg.fraction <= 1.0) {
        return Err(AnalysisError::InvalidInput("need seeds, at least one update and a fraction in (0, 1]".into()));
    }
    let head_updates = ((cfg.updates as f64 * cfg.fraction).ceil() as usize).max(1);
    let net = cfg.net.with_head(HeadKind::Baseline);
    let mut points = Vec::with_capacity(cfg.level_counts.len());
    for &count in &cfg.level_counts {
        if count == 0 {
            return Err(AnalysisError::InvalidInput("level counts must be positive".into()));
        }
        let mut samples = Vec::with_capacity(cfg.seeds.len());
        for (i, &seed) in cfg.seeds.iter().enumerate() {
            let first = i as u64;
            let levels: Vec<LevelHandle> = (first..first + count as u64)
                .map(|s| LevelHandle::gapworld(s, cfg.gapworld_length))
                .collect::<Result<_, _>>()?;
            let mut trainer = Trainer::new(net, cfg.train.clone(), levels, seed)?;
            let mut acc = 0.0;
            for _ in 0..head_updates {
                acc += trainer.iterate()?.1.sample_variance_psi2;
            }
            samples.push(acc / head_updates as f64);
        }
        points.push(CurvePoint::from_samples(count as f64, &samples));
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standard_error_of_known_samples() {
        let p = CurvePoint::from_samples(1.0, &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(p.mean, 2.5);
        // sample sd = sqrt(5/3), stderr = sd / 2
        assert!((p.stderr - (5.0f64 / 3.0).sqrt() / 2.0).abs() < 1e-15);
        assert_eq!(CurvePoint::from_samples(0.0, &[7.0]).stderr, 0.0);
    }

    #[test]
    fn csv_has_expected_columns() {
        let mut buf = Vec::new();
        write_curve_csv(&[CurvePoint { x: 1.0, mean: 2.0, stderr: 0.5, n_seeds: 3 }], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x,mean,stderr,n_seeds\n1.0,2.0,0.5,3\n");
    }
}
