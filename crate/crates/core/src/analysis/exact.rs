//! Exact enumeration over (level, state, action) on tabular level sets.
//!
//! All levels in a set share one state and action space and are driven by
//! one policy table, so `P(a | s, M) = π(a | s)` holds by construction.

use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::envs::{discounted_occupancy, solve_q, solve_value, Family, LevelHandle, Policy};
use crate::seed::derive_seed;

/// Largest gradient deviation accepted by [`lemma1_check`].
pub const LEMMA1_TOLERANCE: f64 = 1e-9;

/// Baseline mixing weights swept by [`lemma2_sweep`].
pub const LAMBDA_GRID: [f64; 6] = [0.0, 0.25, 0.5, 0.75, 1.0, 1.25];

/// The eight tabular levels with seeds `0..8`.
pub fn default_tabular_set() -> Result<Vec<LevelHandle>, AnalysisError> {
    Ok((0..8).map(LevelHandle::tabular).collect::<Result<_, _>>()?)
}

/// `n` tabular levels whose seeds are derived from `seed`.
pub fn tabular_set(seed: u64, n: usize) -> Result<Vec<LevelHandle>, AnalysisError> {
    Ok((0..n)
        .map(|i| LevelHandle::tabular(derive_seed(seed, &format!("tabular-set/{i}"))))
        .collect::<Result<_, _>>()?)
}

/// Per-level exact quantities under one policy.
struct Solved {
    q: Vec<f64>,
    v: Vec<f64>,
    /// Unnormalised discounted occupancy.
    occupancy: Vec<f64>,
}

fn solve_all(levels: &[LevelHandle], policy: &Policy<f64>) -> Result<Vec<Solved>, AnalysisError> {
    let first = levels.first().ok_or_else(|| AnalysisError::InvalidInput("empty level set".into()))?;
    for l in levels {
        if l.family() != Family::Tabular {
            return Err(AnalysisError::NotTabular(format!("level {} is {}", l.seed(), l.family())));
        }
        if l.n_states() != first.n_states() || l.n_actions() != first.n_actions() {
            return Err(AnalysisError::InvalidInput("levels must share state and action spaces".into()));
        }
    }
    levels
        .iter()
        .map(|l| {
            Ok(Solved {
                q: solve_q(l.spec(), policy)?,
                v: solve_value(l.spec(), policy)?,
                occupancy: discounted_occupancy(l.spec(), policy)?,
            })
        })
        .collect()
}

/// Calls `visit(level, s, a, w, Q, V)` for every nonterminal triple with
/// weight `w = (1/N) · d_M(s)/Σd_M · π(a|s)`.
fn for_each_weighted(
    levels: &[LevelHandle],
    solved: &[Solved],
    policy: &Policy<f64>,
    mut visit: impl FnMut(usize, usize, usize, f64, f64, f64),
) {
    let per_level = 1.0 / levels.len() as f64;
    let na = policy.n_actions();
    for (m, (level, sol)) in levels.iter().zip(solved).enumerate() {
        let total: f64 = sol.occupancy.iter().sum();
        for s in 0..level.n_states() {
            if level.is_terminal(s) || sol.occupancy[s] == 0.0 {
                continue;
            }
            let ds = per_level * sol.occupancy[s] / total;
            for a in 0..na {
                visit(m, s, a, ds * policy.row(s)[a], sol.q[s * na + a], sol.v[s]);
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceDecomposition {
    pub total: f64,
    pub minimal: f64,
    pub prediction_error: f64,
    pub cross_term: f64,
}

impl VarianceDecomposition {
    /// `total − (minimal + prediction_error + cross_term)`.
    pub fn residual(&self) -> f64 {
        self.total - (self.minimal + self.prediction_error + self.cross_term)
    }
}

/// Splits `E[(Q − V̂)²]` into the irreducible `E[(Q − V)²]`, the critic's
/// prediction error `E[(V − V̂)²]` and the cross term, where `critic(m, s)`
/// is the predicted value of state `s` in level `m`.
pub fn variance_decomposition(
    levels: &[LevelHandle],
    policy: &Policy<f64>,
    critic: impl Fn(usize, usize) -> f64,
) -> Result<VarianceDecomposition, AnalysisError> {
    let solved = solve_all(levels, policy)?;
    let mut d = VarianceDecomposition { total: 0.0, minimal: 0.0, prediction_error: 0.0, cross_term: 0.0 };
    for_each_weighted(levels, &solved, policy, |m, s, _, w, q, v| {
        let vh = critic(m, s);
        d.total += w * (q - vh) * (q - vh);
        d.minimal += w * (q - v) * (q - v);
        d.prediction_error += w * (v - vh) * (v - vh);
        d.cross_term += 2.0 * w * (q - v) * (v - vh);
    });
    Ok(d)
}

/// Mean start-state value over the level set.
pub fn expected_return(levels: &[LevelHandle], policy: &Policy<f64>) -> Result<f64, AnalysisError> {
    let mut total = 0.0;
    for l in levels {
        let v = solve_value(l.spec(), policy)?;
        total += l.spec().start_dist().iter().zip(&v).map(|(p, v)| p * v).sum::<f64>();
    }
    Ok(total / levels.len() as f64)
}

/// Exact policy gradient of [`expected_return`] with respect to a tabular
/// softmax logit table `logits` (`S × A`), using `Q − f(m, s)` in place of
/// `Q`.
pub fn policy_gradient(
    levels: &[LevelHandle],
    logits: &[f64],
    f: impl Fn(usize, usize) -> f64,
) -> Result<Vec<f64>, AnalysisError> {
    let first = levels.first().ok_or_else(|| AnalysisError::InvalidInput("empty level set".into()))?;
    let (ns, na) = (first.n_states(), first.n_actions());
    let policy = Policy::from_logits(ns, na, logits)?;
    let solved = solve_all(levels, &policy)?;
    let per_level = 1.0 / levels.len() as f64;
    let mut grad = vec![0.0; ns * na];
    for (m, (level, sol)) in levels.iter().zip(&solved).enumerate() {
        for s in 0..ns {
            if level.is_terminal(s) {
                continue;
            }
            let pi = policy.row(s);
            let baseline = f(m, s);
            for a in 0..na {
                let psi = sol.q[s * na + a] - baseline;
                let w = per_level * sol.occupancy[s] * pi[a] * psi;
                // ∂ log π(a|s) / ∂θ(s, b) = 1[a = b] − π(b|s)
                for b in 0..na {
                    let score = if a == b { 1.0 } else { 0.0 } - pi[b];
                    grad[s * na + b] += w * score;
                }
            }
        }
    }
    Ok(grad)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    pub gradient: Vec<f64>,
    pub gradient_with_baseline: Vec<f64>,
    pub max_abs_diff: f64,
    pub passed: bool,
}

/// Compares the exact policy gradient with and without the baseline `f`.
pub fn lemma1_check(
    levels: &[LevelHandle],
    logits: &[f64],
    f: impl Fn(usize, usize) -> f64,
) -> Result<Lemma1Report, AnalysisError> {
    let gradient = policy_gradient(levels, logits, |_, _| 0.0)?;
    let gradient_with_baseline = policy_gradient(levels, logits, f)?;
    let max_abs_diff = gradient.iter().zip(&gradient_with_baseline).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    Ok(Lemma1Report { gradient, gradient_with_baseline, max_abs_diff, passed: max_abs_diff <= LEMMA1_TOLERANCE })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lemma2Report {
    pub lambdas: Vec<f64>,
    /// `E[(Q − f_λ)²]` at each λ.
    pub objective: Vec<f64>,
    pub argmin_lambda: f64,
    /// Second differences of the objective along the grid.
    pub second_differences: Vec<f64>,
    /// `E[(Q − V)²]`.
    pub minimal: f64,
}

impl Lemma2Report {
    /// Spread of the second differences; zero for an exact quadratic.
    pub fn curvature_spread(&self) -> f64 {
        let lo = self.second_differences.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.second_differences.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    }
}

/// `E[ψ²]` for baselines `f_λ = λ V(s, M) + (1 − λ) V̄(s)` over
/// [`LAMBDA_GRID`], where `V̄` averages the levels' values.
pub fn lemma2_sweep(levels: &[LevelHandle], policy: &Policy<f64>) -> Result<Lemma2Report, AnalysisError> {
    let solved = solve_all(levels, policy)?;
    let ns = levels[0].n_states();
    let n = levels.len() as f64;
    let v_bar: Vec<f64> = (0..ns).map(|s| solved.iter().map(|sol| sol.v[s]).sum::<f64>() / n).collect();
    let mut objective = vec![0.0; LAMBDA_GRID.len()];
    let mut minimal = 0.0;
    for_each_weighted(levels, &solved, policy, |_, s, _, w, q, v| {
        minimal += w * (q - v) * (q - v);
        for (obj, &lam) in objective.iter_mut().zip(&LAMBDA_GRID) {
            let f = lam * v + (1.0 - lam) * v_bar[s];
            *obj += w * (q - f) * (q - f);
        }
    });
    let mut best = 0;
    for (i, &o) in objective.iter().enumerate() {
        if o < objective[best] {
            best = i;
        }
    }
    let second_differences = objective.windows(3).map(|w| w[2] - 2.0 * w[1] + w[0]).collect();
    Ok(Lemma2Report {
        lambdas: LAMBDA_GRID.to_vec(),
        objective,
        argmin_lambda: LAMBDA_GRID[best],
        second_differences,
        minimal,
    })
}
