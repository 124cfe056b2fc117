use serde::{Deserialize, Serialize};

use super::EnvError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub success: bool,
    /// Steps actually taken.
    pub path_len: usize,
    /// Length of the shortest successful path.
    pub optimal_len: usize,
    pub total_reward: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NavReport {
    pub spl: f64,
    pub success_rate: f64,
    pub mean_total_reward: f64,
    pub episodes: usize,
}

/// Success weighted by path length: `(1/N) Σ S_i L_i / max(P_i, L_i)`.
pub fn spl(episodes: &[EpisodeOutcome]) -> Result<NavReport, EnvError> {
    if episodes.is_empty() {
        return Err(EnvError::EmptyEpisodes);
    }
    let mut weighted = 0.0;
    let mut successes = 0usize;
    let mut reward = 0.0;
    for (i, ep) in episodes.iter().enumerate() {
        if ep.optimal_len == 0 {
            return Err(EnvError::InvalidEpisode(format!("episode {i} has optimal_len 0")));
        }
        if ep.success {
            if ep.path_len == 0 {
                return Err(EnvError::InvalidEpisode(format!("successful episode {i} has path_len 0")));
            }
            successes += 1;
            weighted += ep.optimal_len as f64 / ep.path_len.max(ep.optimal_len) as f64;
        }
        reward += ep.total_reward;
    }
    let n = episodes.len() as f64;
    Ok(NavReport {
        spl: weighted / n,
        success_rate: successes as f64 / n,
        mean_total_reward: reward / n,
        episodes: episodes.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ep(success: bool, path_len: usize, optimal_len: usize) -> EpisodeOutcome {
        EpisodeOutcome { success, path_len, optimal_len, total_reward: 0.0 }
    }

    #[test]
    fn worked_examples() {
        assert_eq!(spl(&[ep(false, 5, 3), ep(false, 9, 2)]).unwrap().spl, 0.0);
        assert_eq!(spl(&[ep(true, 4, 4)]).unwrap().spl, 1.0);
        let r = spl(&[ep(true, 8, 4), ep(false, 3, 4)]).unwrap();
        assert_eq!(r.spl, 0.25);
        assert_eq!(r.success_rate, 0.5);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(spl(&[]), Err(EnvError::EmptyEpisodes)));
        assert!(spl(&[ep(true, 0, 3)]).is_err());
        assert!(spl(&[ep(false, 3, 0)]).is_err());
    }
}
