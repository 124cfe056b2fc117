//! Small dense random MDPs with exactly computable values.

use rand::Rng;
use rand_distr::{Distribution, Exp1};

use super::{EnvError, MdpSpec};
use crate::seed::{derive_seed, rng_from_seed};

pub const N_STATES: usize = 8;
pub const N_ACTIONS: usize = 3;
pub const GAMMA: f64 = 0.9;
/// The last state is the single absorbing state.
pub const TERMINAL_STATE: usize = N_STATES - 1;

/// Seeded tabular level: Dirichlet(1) transition rows over all states
/// (including the absorbing one) and rewards uniform in `[-1, 1]`.
pub fn generate(seed: u64) -> Result<MdpSpec<f64>, EnvError> {
    random_mdp(derive_seed(seed, "tabular/spec"), N_STATES, N_ACTIONS, GAMMA, Some(TERMINAL_STATE))
}

/// A dense random MDP of any size, optionally with one absorbing state.
pub fn random_mdp(
    seed: u64,
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    terminal: Option<usize>,
) -> Result<MdpSpec<f64>, EnvError> {
    let mut rng = rng_from_seed(seed);
    let (ns, na) = (n_states, n_actions);
    let mut p = vec![0.0; ns * na * ns];
    let mut r = vec![0.0; ns * na * ns];
    let mut flags = vec![false; ns];
    if let Some(t) = terminal {
        flags[t] = true;
    }
    for s in 0..ns {
        for a in 0..na {
            let base = (s * na + a) * ns;
            if flags[s] {
                p[base + s] = 1.0;
                continue;
            }
            let weights: Vec<f64> = (0..ns).map(|_| Exp1.sample(&mut rng)).collect();
            let total: f64 = weights.iter().sum();
            for s2 in 0..ns {
                p[base + s2] = weights[s2] / total;
                r[base + s2] = rng.random_range(-1.0..=1.0);
            }
            renormalise(&mut p[base..base + ns]);
        }
    }
    let live = flags.iter().filter(|f| !**f).count();
    let start: Vec<f64> = flags.iter().map(|&t| if t { 0.0 } else { 1.0 / live as f64 }).collect();
    MdpSpec::new(ns, na, p, r, gamma, flags, start)
}

/// Pushes the rounding residue of a probability row into its largest entry.
fn renormalise(row: &mut [f64]) {
    let total: f64 = row.iter().sum();
    let (imax, _) = row.iter().enumerate().fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    row[imax] += 1.0 - total;
}

/// One-hot encoding of `state` among `n_states`.
pub fn observe(state: usize, n_states: usize) -> Vec<f64> {
    let mut obs = vec![0.0; n_states];
    obs[state] = 1.0;
    obs
}
