//! Procedural one-dimensional platformer levels.
//!
//! A level is a row of cells; the agent starts on cell 0 and must reach the
//! last cell. `walk` advances one cell, `jump` advances two, except that a
//! jump slips with a per-level probability (see [`slip_for`]) and moves
//! like a walk. Walking into
//! an obstacle or landing a jump on one leaves the agent in place; entering
//! a gap ends the episode with reward 0; reaching the goal pays +10; every
//! other step costs 0.1. Slips make every gap a risk that good play cannot
//! remove, so a level's value depends on the hazards still ahead.
//!
//! Hazards are placed stratified over the two halves of the level (the
//! midpoint cell is always floor). The archetype's density fixes the number
//! of hazard cells per half, at least one; half of them (rounded up) are
//! gaps and the rest obstacles. Hazards are never adjacent, so every level
//! is solvable by jumping. Exact counts keep levels of one archetype close
//! in value and levels of different archetypes apart.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{EnvError, MdpSpec, Policy};
use crate::seed::{derive_seed, rng_from_seed};

pub const DEFAULT_LENGTH: usize = 24;
pub const MIN_LENGTH: usize = 5;
pub const WINDOW_RADIUS: usize = 3;
/// Two indicator features (gap, obstacle) per window cell plus the
/// normalised position.
pub const OBS_DIM: usize = 2 * (2 * WINDOW_RADIUS + 1) + 1;
pub const N_ACTIONS: usize = 2;
pub const WALK: usize = 0;
pub const JUMP: usize = 1;
pub const GAMMA: f64 = 0.99;
pub const GOAL_REWARD: f64 = 10.0;
pub const STEP_REWARD: f64 = -0.1;
/// Mean and spread of the per-level probability that a jump degrades to a
/// walk.
pub const SLIP_MEAN: f64 = 0.2;
pub const SLIP_SD: f64 = 0.02;
/// Hard bounds on the slip probability.
pub const SLIP_RANGE: (f64, f64) = (0.1, 0.3);

/// Jump slip probability of the level with this seed: normal around
/// [`SLIP_MEAN`], clamped to [`SLIP_RANGE`]. The continuous spread keeps
/// levels of one archetype from collapsing onto a few identical values.
pub fn slip_for(seed: u64) -> f64 {
    let normal = Normal::new(SLIP_MEAN, SLIP_SD).expect("valid slip distribution");
    let x: f64 = normal.sample(&mut rng_from_seed(derive_seed(seed, "gapworld/slip")));
    x.clamp(SLIP_RANGE.0, SLIP_RANGE.1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cell {
    Floor,
    Gap,
    Obstacle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Archetype {
    Sparse,
    Dense,
}

impl Archetype {
    /// Even seeds are sparse, odd seeds dense.
    pub fn from_seed(seed: u64) -> Self {
        if seed.is_multiple_of(2) {
            Archetype::Sparse
        } else {
            Archetype::Dense
        }
    }

    /// Fraction of hazard cells (gaps and obstacles) in each half.
    pub fn obstacle_density(self) -> f64 {
        match self {
            Archetype::Sparse => 0.1,
            Archetype::Dense => 0.3,
        }
    }

    pub fn label(self) -> u32 {
        match self {
            Archetype::Sparse => 0,
            Archetype::Dense => 1,
        }
    }
}

pub fn midpoint(length: usize) -> usize {
    length / 2
}

pub fn layout(seed: u64, length: usize) -> Result<(Vec<Cell>, Archetype), EnvError> {
    if length < MIN_LENGTH {
        return Err(EnvError::InvalidSpec(format!("gapworld length must be at least {MIN_LENGTH}, got {length}")));
    }
    let archetype = Archetype::from_seed(seed);
    let mut rng = rng_from_seed(derive_seed(seed, "gapworld/layout"));
    let mut cells = vec![Cell::Floor; length];
    let mid = midpoint(length);
    for (lo, hi) in [(1, mid), (mid + 1, length - 1)] {
        place_segment(&mut cells[lo..hi], archetype.obstacle_density(), &mut rng);
    }
    Ok((cells, archetype))
}

fn place_segment<R: Rng>(segment: &mut [Cell], density: f64, rng: &mut R) {
    let n = segment.len();
    if n == 0 {
        return;
    }
    // at most ⌈n/2⌉ pairwise non-adjacent hazards fit
    let k = ((density * n as f64).round() as usize).clamp(1, n.div_ceil(2));
    let gaps = k.div_ceil(2);
    // k non-adjacent slots out of n: choose k of n-k+1 and spread by rank
    let mut slots: Vec<usize> = (0..n - k + 1).collect();
    slots.shuffle(rng);
    let mut chosen: Vec<usize> = slots[..k].to_vec();
    chosen.sort_unstable();
    let mut kinds: Vec<Cell> = (0..k).map(|i| if i < gaps { Cell::Gap } else { Cell::Obstacle }).collect();
    kinds.shuffle(rng);
    for (rank, (&c, kind)) in chosen.iter().zip(kinds).enumerate() {
        segment[c + rank] = kind;
    }
}

/// Outcomes of `action` from floor position `pos` as
/// `(probability, next position, reward)`.
pub fn outcomes(cells: &[Cell], pos: usize, action: usize, slip: f64) -> Vec<(f64, usize, f64)> {
    let walk = move_by(cells, pos, 1);
    if action == JUMP {
        let jump = move_by(cells, pos, 2);
        vec![(1.0 - slip, jump.0, jump.1), (slip, walk.0, walk.1)]
    } else {
        vec![(1.0, walk.0, walk.1)]
    }
}

/// Next position and reward for a successful (non-slipping) `action`.
pub fn transition(cells: &[Cell], pos: usize, action: usize) -> (usize, f64) {
    move_by(cells, pos, if action == JUMP { 2 } else { 1 })
}

fn move_by(cells: &[Cell], pos: usize, stride: usize) -> (usize, f64) {
    let goal = cells.len() - 1;
    let target = (pos + stride).min(goal);
    match cells[target] {
        Cell::Obstacle => (pos, STEP_REWARD),
        Cell::Gap => (target, 0.0),
        Cell::Floor if target == goal => (target, GOAL_REWARD),
        Cell::Floor => (target, STEP_REWARD),
    }
}

pub fn is_terminal(cells: &[Cell], pos: usize) -> bool {
    pos == cells.len() - 1 || cells[pos] == Cell::Gap
}

pub fn build_spec(cells: &[Cell], slip: f64) -> Result<MdpSpec<f64>, EnvError> {
    if !(0.0..1.0).contains(&slip) {
        return Err(EnvError::InvalidSpec(format!("slip probability must lie in [0, 1), got {slip}")));
    }
    let ns = cells.len();
    let na = N_ACTIONS;
    let mut p = vec![0.0; ns * na * ns];
    let mut r = vec![0.0; ns * na * ns];
    let terminal: Vec<bool> = (0..ns).map(|s| is_terminal(cells, s)).collect();
    for s in 0..ns {
        for a in 0..na {
            let base = (s * na + a) * ns;
            if terminal[s] {
                p[base + s] = 1.0;
                continue;
            }
            for (prob, next, reward) in outcomes(cells, s, a, slip) {
                p[base + next] += prob;
                r[base + next] = reward;
            }
        }
    }
    let mut start = vec![0.0; ns];
    start[0] = 1.0;
    MdpSpec::new(ns, na, p, r, GAMMA, terminal, start)
}

pub fn observe(cells: &[Cell], pos: usize) -> Vec<f64> {
    let mut obs = Vec::with_capacity(OBS_DIM);
    let radius = WINDOW_RADIUS as isize;
    for off in -radius..=radius {
        let q = pos as isize + off;
        let cell = if q >= 0 && (q as usize) < cells.len() { cells[q as usize] } else { Cell::Floor };
        obs.push(if cell == Cell::Gap { 1.0 } else { 0.0 });
        obs.push(if cell == Cell::Obstacle { 1.0 } else { 0.0 });
    }
    obs.push(pos as f64 / (cells.len() - 1) as f64);
    obs
}

/// Fewest steps from the start to the goal when no jump slips.
pub fn shortest_path(cells: &[Cell]) -> Option<usize> {
    let goal = cells.len() - 1;
    let mut dist = vec![usize::MAX; cells.len()];
    dist[0] = 0;
    let mut queue = std::collections::VecDeque::from([0usize]);
    while let Some(pos) = queue.pop_front() {
        if pos == goal {
            return Some(dist[pos]);
        }
        if is_terminal(cells, pos) {
            continue;
        }
        for a in [WALK, JUMP] {
            let (next, _) = transition(cells, pos, a);
            if dist[next] == usize::MAX {
                dist[next] = dist[pos] + 1;
                queue.push_back(next);
            }
        }
    }
    None
}

/// First floor cell at or after the midpoint: the probe state used for
/// cross-level value comparisons.
pub fn probe_state(cells: &[Cell]) -> usize {
    let mid = midpoint(cells.len());
    (mid..cells.len()).find(|&p| cells[p] == Cell::Floor).unwrap_or(mid)
}

/// Scripted policy that jumps exactly when the next cell is a gap or an
/// obstacle. Since hazards are never adjacent it only fails through slips,
/// which makes it a reasonable fixed reference for comparing levels.
pub fn hazard_jump_policy(cells: &[Cell]) -> Policy<f64> {
    let n = cells.len();
    let probs = (0..n)
        .flat_map(|s| {
            let hazard = s + 1 < n && cells[s + 1] != Cell::Floor;
            if hazard {
                [0.0, 1.0]
            } else {
                [1.0, 0.0]
            }
        })
        .collect();
    Policy::new(n, N_ACTIONS, probs).expect("deterministic rows are valid")
}
