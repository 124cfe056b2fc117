use super::{RolloutBatch, TrainError};

fn check_unit(name: &'static str, value: f64) -> Result<(), TrainError> {
    if (0.0..=1.0).contains(&value) {
        Ok(())
    } else {
        Err(TrainError::OutOfUnitRange { name, value })
    }
}

/// GAE(λ) over one contiguous segment of a single worker's steps.
///
/// `done[t]` marks the last step of an episode and `truncated[t]` the
/// subset of those cut by the horizon. Absorbed steps bootstrap with zero;
/// truncated steps and the segment's final step bootstrap from
/// `next_values[t]`; every other step from `values[t + 1]`. The advantage
/// recursion restarts at every episode boundary. Returns
/// `(advantages, returns)` with `returns = advantages + values`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    done: &[bool],
    truncated: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), TrainError> {
    check_unit("gamma", gamma)?;
    check_unit("lambda", lambda)?;
    let n = rewards.len();
    if [values.len(), next_values.len(), done.len(), truncated.len()].iter().any(|&l| l != n) {
        return Err(TrainError::Config("advantage inputs differ in length".into()));
    }
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let last = t + 1 == n;
        let absorbed = done[t] && !truncated[t];
        let bootstrap = if absorbed {
            0.0
        } else if truncated[t] || last {
            next_values[t]
        } else {
            values[t + 1]
        };
        let delta = rewards[t] + gamma * bootstrap - values[t];
        if done[t] || last {
            running = 0.0;
        }
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Shifts and scales to mean 0 and standard deviation 1 (with 1e-8 added
/// to the deviation).
pub(crate) fn standardize(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let scale = 1.0 / (var.sqrt() + 1e-8);
    x.iter().map(|v| (v - mean) * scale).collect()
}

/// Fills `returns`, `advantages` and `normalized_advantages` worker by
/// worker.
pub fn compute_returns_advantages(batch: &mut RolloutBatch, gamma: f64, lambda: f64) -> Result<(), TrainError> {
    check_unit("gamma", gamma)?;
    check_unit("lambda", lambda)?;
    let t = batch.steps_per_worker;
    let mut advantages = Vec::with_capacity(batch.len());
    let mut returns = Vec::with_capacity(batch.len());
    for w in 0..batch.n_workers {
        let r = w * t..(w + 1) * t;
        let (adv, ret) = gae(
            &batch.rewards[r.clone()],
            &batch.value_pred[r.clone()],
            &batch.next_value[r.clone()],
            &batch.done[r.clone()],
            &batch.truncated[r],
            gamma,
            lambda,
        )?;
        advantages.extend(adv);
        returns.extend(ret);
    }
    batch.normalized_advantages = standardize(&advantages);
    batch.advantages = advantages;
    batch.returns = returns;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monte_carlo_case() {
        let (adv, ret) = gae(&[1.0; 3], &[0.0; 3], &[0.0; 3], &[false, false, true], &[false; 3], 1.0, 1.0).unwrap();
        assert_eq!(ret, vec![3.0, 2.0, 1.0]);
        assert_eq!(adv, ret);
    }

    #[test]
    fn td_residual_case() {
        let r = [0.5, -1.0, 2.0, 0.25];
        let v = [0.1, 0.2, -0.3, 0.4];
        let nv = [0.0, 0.0, 0.0, 0.7];
        let done = [false, true, false, false];
        let (adv, _) = gae(&r, &v, &nv, &done, &[false; 4], 0.9, 0.0).unwrap();
        let want = [0.5 + 0.9 * 0.2 - 0.1, -1.0 - 0.2, 2.0 + 0.9 * 0.4 + 0.3, 0.25 + 0.9 * 0.7 - 0.4];
        for (a, w) in adv.iter().zip(want) {
            assert!((a - w).abs() < 1e-15, "{adv:?}");
        }
    }

    #[test]
    fn truncation_bootstraps() {
        let (adv, _) = gae(&[1.0, 1.0], &[0.0, 0.0], &[0.0, 5.0], &[false, true], &[false, true], 0.5, 1.0).unwrap();
        assert_eq!(adv, vec![1.0 + 0.5 * (1.0 + 0.5 * 5.0), 1.0 + 0.5 * 5.0]);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(gae(&[0.0], &[0.0], &[0.0], &[true], &[false], 1.1, 0.5).is_err());
        assert!(gae(&[0.0], &[0.0], &[0.0], &[true], &[false], 0.9, -0.1).is_err());
    }
}
