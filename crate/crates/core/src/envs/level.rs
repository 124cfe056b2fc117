use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::gapworld::{self, Cell};
use super::{tabular, EnvError, EpisodeOutcome, MdpSpec, Policy};

/// Episode step cap for rollouts and evaluation.
pub const DEFAULT_HORIZON: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Tabular,
    Gapworld,
}

impl Family {
    pub fn name(self) -> &'static str {
        match self {
            Family::Tabular => "tabular",
            Family::Gapworld => "gapworld",
        }
    }

    pub fn obs_dim(self) -> usize {
        match self {
            Family::Tabular => tabular::N_STATES,
            Family::Gapworld => gapworld::OBS_DIM,
        }
    }

    pub fn n_actions(self) -> usize {
        match self {
            Family::Tabular => tabular::N_ACTIONS,
            Family::Gapworld => gapworld::N_ACTIONS,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tabular" => Ok(Family::Tabular),
            "gapworld" => Ok(Family::Gapworld),
            other => Err(EnvError::UnknownFamily(other.to_string())),
        }
    }
}

/// One materialised level. Cheap to clone; the MDP arrays are shared.
#[derive(Clone, Debug)]
pub struct LevelHandle {
    family: Family,
    seed: u64,
    archetype: u32,
    spec: Arc<MdpSpec<f64>>,
    cells: Option<Arc<[Cell]>>,
    optimal_len: Option<usize>,
}

impl PartialEq for LevelHandle {
    fn eq(&self, other: &Self) -> bool {
        self.family == other.family
            && self.seed == other.seed
            && self.archetype == other.archetype
            && self.cells == other.cells
            && self.spec == other.spec
    }
}

/// Builds the level for `(family, seed)`; a pure function of its inputs.
pub fn generate_level(family: Family, seed: u64) -> Result<LevelHandle, EnvError> {
    match family {
        Family::Tabular => LevelHandle::tabular(seed),
        Family::Gapworld => LevelHandle::gapworld(seed, gapworld::DEFAULT_LENGTH),
    }
}

impl LevelHandle {
    pub fn tabular(seed: u64) -> Result<Self, EnvError> {
        Ok(LevelHandle {
            family: Family::Tabular,
            seed,
            archetype: 0,
            spec: Arc::new(tabular::generate(seed)?),
            cells: None,
            optimal_len: None,
        })
    }

    /// Tabular-family level around an explicit spec, e.g. one read back
    /// from disk or a hand-built test MDP of any size. Observations are
    /// one-hot over the spec's states.
    pub fn tabular_from_spec(seed: u64, archetype: u32, spec: MdpSpec<f64>) -> Result<Self, EnvError> {
        spec.validate()?;
        Ok(LevelHandle {
            family: Family::Tabular,
            seed,
            archetype,
            spec: Arc::new(spec),
            cells: None,
            optimal_len: None,
        })
    }

    pub fn gapworld(seed: u64, length: usize) -> Result<Self, EnvError> {
        let (cells, archetype) = gapworld::layout(seed, length)?;
        Self::from_cells(seed, archetype.label(), cells)
    }

    /// Gapworld level with a hand-made layout. Cell 0 and the goal must be
    /// floor. The slip probability is derived from `seed`.
    pub fn from_cells(seed: u64, archetype: u32, cells: Vec<Cell>) -> Result<Self, EnvError> {
        Self::from_cells_with_slip(seed, archetype, cells, gapworld::slip_for(seed))
    }

    pub fn from_cells_with_slip(seed: u64, archetype: u32, cells: Vec<Cell>, slip: f64) -> Result<Self, EnvError> {
        if cells.len() < 2 || cells[0] != Cell::Floor || cells[cells.len() - 1] != Cell::Floor {
            return Err(EnvError::InvalidSpec("gapworld layout needs floor at the start and the goal".into()));
        }
        let spec = gapworld::build_spec(&cells, slip)?;
        let optimal_len = gapworld::shortest_path(&cells);
        Ok(LevelHandle {
            family: Family::Gapworld,
            seed,
            archetype,
            spec: Arc::new(spec),
            cells: Some(cells.into()),
            optimal_len,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn archetype(&self) -> u32 {
        self.archetype
    }

    pub fn spec(&self) -> &MdpSpec<f64> {
        &self.spec
    }

    pub fn cells(&self) -> Option<&[Cell]> {
        self.cells.as_deref()
    }

    pub fn n_states(&self) -> usize {
        self.spec.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.spec.n_actions()
    }

    pub fn obs_dim(&self) -> usize {
        match self.family {
            Family::Tabular => self.spec.n_states(),
            Family::Gapworld => gapworld::OBS_DIM,
        }
    }

    pub fn gamma(&self) -> f64 {
        self.spec.gamma()
    }

    /// Shortest start-to-goal path, for families that define one.
    pub fn optimal_len(&self) -> Option<usize> {
        self.optimal_len
    }

    pub fn is_terminal(&self, state: usize) -> bool {
        self.spec.is_terminal(state)
    }

    /// Whether `state` counts as a successful finish. Only gapworld defines
    /// success (reaching the goal cell).
    pub fn is_success(&self, state: usize) -> bool {
        match &self.cells {
            Some(cells) => state == cells.len() - 1,
            None => false,
        }
    }

    pub fn observe(&self, state: usize) -> Vec<f64> {
        match &self.cells {
            Some(cells) => gapworld::observe(cells, state),
            None => tabular::observe(state, self.spec.n_states()),
        }
    }

    /// A fixed nonterminal state used to compare values across levels.
    pub fn probe_state(&self) -> usize {
        match &self.cells {
            Some(cells) => gapworld::probe_state(cells),
            None => 0,
        }
    }

    /// Fixed scripted policy for gapworld levels (see
    /// [`gapworld::hazard_jump_policy`]); uniform for tabular levels.
    pub fn reference_policy(&self) -> Policy<f64> {
        match &self.cells {
            Some(cells) => gapworld::hazard_jump_policy(cells),
            None => Policy::uniform(self.n_states(), self.n_actions()),
        }
    }

    pub fn sample_start<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        sample_index(self.spec.start_dist(), rng)
    }

    pub fn to_record(&self) -> LevelRecord {
        LevelRecord {
            family: self.family,
            seed: self.seed,
            archetype: self.archetype,
            length: self.cells.as_ref().map(|c| c.len()),
            cells: self.cells.as_ref().map(|c| c.to_vec()),
            spec: match self.family {
                Family::Tabular => Some((*self.spec).clone()),
                Family::Gapworld => None,
            },
        }
    }

    pub fn from_record(record: LevelRecord) -> Result<Self, EnvError> {
        match record.family {
            Family::Tabular => {
                let spec = record.spec.ok_or_else(|| EnvError::Record("tabular record without spec".into()))?;
                Self::tabular_from_spec(record.seed, record.archetype, spec)
            }
            Family::Gapworld => {
                let level = match record.cells {
                    Some(cells) => Self::from_cells(record.seed, record.archetype, cells)?,
                    None => Self::gapworld(record.seed, record.length.unwrap_or(gapworld::DEFAULT_LENGTH))?,
                };
                if level.archetype != record.archetype {
                    return Err(EnvError::Record(format!(
                        "archetype {} does not match seed {} (expected {})",
                        record.archetype, record.seed, level.archetype
                    )));
                }
                if record.length.is_some_and(|l| l != level.n_states()) {
                    return Err(EnvError::Record("length does not match the layout".into()));
                }
                Ok(level)
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_record()).expect("level records always serialise")
    }

    pub fn from_json(text: &str) -> Result<Self, EnvError> {
        let record: LevelRecord = serde_json::from_str(text).map_err(|e| EnvError::Record(e.to_string()))?;
        Self::from_record(record)
    }
}

/// Serialised form of a level. Gapworld levels are stored by seed and
/// layout; tabular levels carry their full arrays.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelRecord {
    pub family: Family,
    pub seed: u64,
    pub archetype: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells: Option<Vec<Cell>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<MdpSpec<f64>>,
}

/// Parses a level-set description into levels.
///
/// Accepted forms: `gapworld:50` (seeds 0..50), `gapworld:10..20`,
/// `gapworld:0..100:2` (every second seed) and `tabular:3,7,11`.
/// `gapworld_length` applies to gapworld levels.
pub fn parse_level_set(text: &str, gapworld_length: usize) -> Result<Vec<LevelHandle>, EnvError> {
    let bad = || EnvError::InvalidLevelSet(text.to_string());
    let mut parts = text.splitn(2, ':');
    let family: Family = parts.next().unwrap_or_default().parse()?;
    let rest = parts.next().ok_or_else(bad)?.trim();
    let seeds: Vec<u64> = if rest.contains("..") {
        let mut fields = rest.split(':');
        let range = fields.next().ok_or_else(bad)?;
        let stride: u64 = match fields.next() {
            Some(s) => s.trim().parse().map_err(|_| bad())?,
            None => 1,
        };
        if fields.next().is_some() || stride == 0 {
            return Err(bad());
        }
        let (lo, hi) = range.split_once("..").ok_or_else(bad)?;
        let lo: u64 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u64 = hi.trim().parse().map_err(|_| bad())?;
        (lo..hi).step_by(stride as usize).collect()
    } else if rest.contains(',') {
        rest.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect::<Result<_, _>>()?
    } else {
        let n: u64 = rest.parse().map_err(|_| bad())?;
        (0..n).collect()
    };
    if seeds.is_empty() {
        return Err(bad());
    }
    seeds
        .into_iter()
        .map(|seed| match family {
            Family::Tabular => LevelHandle::tabular(seed),
            Family::Gapworld => LevelHandle::gapworld(seed, gapworld_length),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    /// Episode over: terminal state reached or horizon hit.
    pub done: bool,
    /// Set when the episode was cut by the horizon rather than absorbed.
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub transition: Transition,
    pub next_state: usize,
    /// The next state is absorbing.
    pub terminal: bool,
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

/// Samples one transition from a nonterminal `state`. The returned
/// transition is never marked truncated; horizons belong to the caller.
pub fn step<R: Rng + ?Sized>(
    level: &LevelHandle,
    state: usize,
    action: usize,
    rng: &mut R,
) -> Result<StepResult, EnvError> {
    let spec = level.spec();
    if state >= spec.n_states() {
        return Err(EnvError::InvalidState { state, n_states: spec.n_states() });
    }
    if action >= spec.n_actions() {
        return Err(EnvError::InvalidAction { action, n_actions: spec.n_actions() });
    }
    if spec.is_terminal(state) {
        return Err(EnvError::TerminalStep(state));
    }
    let next = sample_index(spec.row(state, action), rng);
    let terminal = spec.is_terminal(next);
    Ok(StepResult {
        transition: Transition {
            obs: level.observe(state),
            action,
            reward: spec.reward_row(state, action)[next],
            next_obs: level.observe(next),
            done: terminal,
            truncated: false,
        },
        next_state: next,
        terminal,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTrace {
    pub level: LevelHandle,
    pub transitions: Vec<Transition>,
    /// Discounted return `Σ γ^t r_t` under the level's discount.
    pub total_reward: f64,
    pub undiscounted_reward: f64,
    pub length: usize,
    pub success: bool,
}

impl EpisodeTrace {
    pub fn outcome(&self) -> Option<EpisodeOutcome> {
        self.level.optimal_len().map(|optimal_len| EpisodeOutcome {
            success: self.success,
            path_len: self.length,
            optimal_len,
            total_reward: self.undiscounted_reward,
        })
    }
}

/// Plays one episode from a sampled start state, asking `choose` for an
/// action given the current observation.
pub fn run_episode<R, F>(
    level: &LevelHandle,
    horizon: usize,
    rng: &mut R,
    mut choose: F,
) -> Result<EpisodeTrace, EnvError>
where
    R: Rng + ?Sized,
    F: FnMut(&[f64], &mut R) -> usize,
{
    let gamma = level.gamma();
    let mut state = level.sample_start(rng);
    let mut transitions = Vec::new();
    let (mut discounted, mut undiscounted, mut discount) = (0.0, 0.0, 1.0);
    let mut success = false;
    for t in 0..horizon {
        let obs = level.observe(state);
        let action = choose(&obs, rng);
        let mut out = step(level, state, action, rng)?;
        discounted += discount * out.transition.reward;
        undiscounted += out.transition.reward;
        discount *= gamma;
        if !out.terminal && t + 1 == horizon {
            out.transition.done = true;
            out.transition.truncated = true;
        }
        state = out.next_state;
        let done = out.transition.done;
        transitions.push(out.transition);
        if out.terminal {
            success = level.is_success(state);
        }
        if done {
            break;
        }
    }
    Ok(EpisodeTrace {
        level: level.clone(),
        length: transitions.len(),
        transitions,
        total_reward: discounted,
        undiscounted_reward: undiscounted,
        success,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    #[test]
    fn generation_is_pure() {
        let a = generate_level(Family::Gapworld, 42).unwrap();
        let b = generate_level(Family::Gapworld, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.spec().transitions(), b.spec().transitions());
        assert_eq!(generate_level(Family::Tabular, 9).unwrap(), generate_level(Family::Tabular, 9).unwrap());
        assert_ne!(generate_level(Family::Tabular, 9).unwrap(), generate_level(Family::Tabular, 10).unwrap());
    }

    #[test]
    fn archetype_follows_parity() {
        for seed in 0..10 {
            let level = generate_level(Family::Gapworld, seed).unwrap();
            assert_eq!(level.archetype(), (seed % 2) as u32);
        }
    }

    #[test]
    fn unknown_family_rejected() {
        assert!(matches!("procgen".parse::<Family>(), Err(EnvError::UnknownFamily(_))));
    }

    #[test]
    fn stepping_terminal_is_an_error() {
        let level = generate_level(Family::Tabular, 1).unwrap();
        let mut rng = rng_from_seed(0);
        assert!(matches!(step(&level, tabular::TERMINAL_STATE, 0, &mut rng), Err(EnvError::TerminalStep(_))));
        assert!(step(&level, 99, 0, &mut rng).is_err());
        assert!(step(&level, 0, 3, &mut rng).is_err());
    }

    #[test]
    fn deterministic_level_ignores_rng() {
        let level = generate_level(Family::Gapworld, 3).unwrap();
        let mut first = None;
        for seed in 0..20 {
            let mut rng = rng_from_seed(seed);
            let out = step(&level, 0, gapworld::WALK, &mut rng).unwrap();
            assert_eq!(*first.get_or_insert(out.clone()), out);
        }
    }

    #[test]
    fn records_round_trip() {
        for level in [generate_level(Family::Tabular, 5).unwrap(), generate_level(Family::Gapworld, 8).unwrap()] {
            let back = LevelHandle::from_json(&level.to_json()).unwrap();
            assert_eq!(back, level);
        }
    }

    #[test]
    fn level_sets() {
        assert_eq!(parse_level_set("gapworld:5", 24).unwrap().len(), 5);
        let evens = parse_level_set("gapworld:0..10:2", 24).unwrap();
        assert!(evens.iter().all(|l| l.archetype() == 0));
        assert_eq!(evens.len(), 5);
        let picked = parse_level_set("tabular:3, 7", 24).unwrap();
        assert_eq!(picked.iter().map(|l| l.seed()).collect::<Vec<_>>(), vec![3, 7]);
        for bad in ["gapworld", "gapworld:", "gapworld:0..4:0", "maze:3", "gapworld:5..5"] {
            assert!(parse_level_set(bad, 24).is_err(), "{bad}");
        }
    }

    #[test]
    fn episode_discounting_and_truncation() {
        let level = LevelHandle::from_cells(0, 0, vec![Cell::Floor; 6]).unwrap();
        let mut rng = rng_from_seed(1);
        let trace = run_episode(&level, 100, &mut rng, |_, _| gapworld::WALK).unwrap();
        assert!(trace.success);
        assert_eq!(trace.length, 5);
        let g = gapworld::GAMMA;
        let want = -0.1 * (1.0 + g + g * g + g * g * g) + 10.0 * g.powi(4);
        assert!((trace.total_reward - want).abs() < 1e-12);
        assert!((trace.undiscounted_reward - 9.6).abs() < 1e-12);
        assert!(!trace.transitions.last().unwrap().truncated);

        let short = run_episode(&level, 3, &mut rng, |_, _| gapworld::WALK).unwrap();
        let last = short.transitions.last().unwrap();
        assert!(last.done && last.truncated && !short.success);
    }
}
