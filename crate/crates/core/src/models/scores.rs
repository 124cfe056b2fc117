use super::ModelError;

const PROB_TOL: f64 = 1e-9;

fn check_probability(alpha: &[f64]) -> Result<(), ModelError> {
    if alpha.is_empty() {
        return Err(ModelError::NotProbability("empty vector".into()));
    }
    if alpha.iter().any(|&a| !(a >= 0.0)) {
        return Err(ModelError::NotProbability(format!("negative or non-finite entry in {alpha:?}")));
    }
    let total: f64 = alpha.iter().sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(ModelError::NotProbability(format!("entries sum to {total}")));
    }
    Ok(())
}

/// Confusion `δ = 1 / (N_b Σ α_i²)`: 1 for a uniform posterior, `1/N_b`
/// for a one-hot one. The lower end is `1/N_b`, not 0.
pub fn confusion(alpha: &[f64]) -> Result<f64, ModelError> {
    check_probability(alpha)?;
    // rescaling by the largest weight makes both endpoints exact in floating point
    let top = alpha.iter().copied().fold(0.0, f64::max);
    let (sum, sq) = alpha.iter().map(|a| a / top).fold((0.0, 0.0), |(s, q), a| (s + a, q + a * a));
    Ok(sum * sum / (alpha.len() as f64 * sq))
}

/// Confusion-weighted contribution `ρ_i = (1/T) Σ_t δ(t) α_i(t)` of each
/// basis value over one episode.
pub fn contribution<A: AsRef<[f64]>>(trace: &[A]) -> Result<Vec<f64>, ModelError> {
    let first = trace.first().ok_or(ModelError::EmptyTrace)?.as_ref().len();
    let mut rho = vec![0.0; first];
    for step in trace {
        let alpha = step.as_ref();
        if alpha.len() != first {
            return Err(ModelError::NotProbability(format!(
                "posterior length changed from {first} to {}",
                alpha.len()
            )));
        }
        let delta = confusion(alpha)?;
        for (r, a) in rho.iter_mut().zip(alpha) {
            *r += delta * a;
        }
    }
    let t = trace.len() as f64;
    rho.iter_mut().for_each(|r| *r /= t);
    Ok(rho)
}
