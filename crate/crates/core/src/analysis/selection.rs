use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{em_fit, AnalysisError, EmOptions, GmmFit, ValueMatrix};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClusterSelection {
    /// Component count with the smallest AIC/N.
    pub best: usize,
    /// AIC/N for C = 1..=C_max.
    pub curve: Vec<f64>,
    /// Whether each fit is eligible; degenerate fits are reported in the
    /// curve but never selected.
    pub eligible: Vec<bool>,
    pub fits: Vec<GmmFit<f64>>,
}

/// Fits mixtures with 1..=`c_max` components to the rows of `matrix` and
/// picks the count minimising AIC/N, preferring fewer components on ties.
pub fn select_num_clusters<R: Rng + ?Sized>(
    matrix: &ValueMatrix,
    c_max: usize,
    opts: &EmOptions,
    rng: &mut R,
) -> Result<ClusterSelection, AnalysisError> {
    select_rows(&matrix.values, matrix.n_states, c_max, opts, rng)
}

fn select_rows<R: Rng + ?Sized>(
    data: &[f64],
    dim: usize,
    c_max: usize,
    opts: &EmOptions,
    rng: &mut R,
) -> Result<ClusterSelection, AnalysisError> {
    let n = data.len() / dim;
    if c_max == 0 || c_max >= n {
        return Err(AnalysisError::InvalidInput(format!("C_max must lie in [1, {}), got {c_max}", n)));
    }
    let first = &data[..dim];
    if data.chunks(dim).all(|row| row == first) {
        return Err(AnalysisError::Degenerate);
    }
    let mut fits = Vec::with_capacity(c_max);
    let mut curve = Vec::with_capacity(c_max);
    for c in 1..=c_max {
        let fit = em_fit(data, dim, c, opts, rng)?;
        curve.push(fit.aic / n as f64);
        fits.push(fit);
    }
    let eligible: Vec<bool> = fits.iter().map(|f| !f.degenerate).collect();
    // C = 1 can only be degenerate for fewer than two points, which the
    // size check above excludes
    let mut best = 0;
    for (i, &v) in curve.iter().enumerate() {
        if eligible[i] && v < curve[best] {
            best = i;
        }
    }
    Ok(ClusterSelection { best: best + 1, curve, eligible, fits })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `bins + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Equal-width histogram over the data range. Every point lands in a bin.
pub fn histogram(values: &[f64], bins: usize) -> Histogram {
    let bins = bins.max(1);
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if values.is_empty() {
        (0.0, 1.0)
    } else if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    };
    let width = (hi - lo) / bins as f64;
    let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0; bins];
    for &v in values {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    Histogram { edges, counts }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClusterReport {
    pub state_id: usize,
    pub values: Vec<f64>,
    pub selection: ClusterSelection,
    pub prefers_multiple: bool,
    pub histogram: Histogram,
}

/// One-dimensional mixture selection on a single column of `matrix`: do
/// the levels' values at this state form more than one cluster?
pub fn clustering_hypothesis_test<R: Rng + ?Sized>(
    matrix: &ValueMatrix,
    state_idx: usize,
    c_max: usize,
    opts: &EmOptions,
    rng: &mut R,
) -> Result<ClusterReport, AnalysisError> {
    if state_idx >= matrix.n_states {
        return Err(AnalysisError::InvalidInput(format!("column {state_idx} out of range")));
    }
    let values = matrix.column(state_idx);
    let selection = select_rows(&values, 1, c_max.min(values.len() - 1), opts, rng)?;
    let bins = (values.len() as f64).sqrt().ceil() as usize;
    Ok(ClusterReport {
        state_id: matrix.state_ids[state_idx],
        prefers_multiple: selection.best >= 2,
        histogram: histogram(&values, bins),
        values,
        selection,
    })
}
