//! Diagonal-covariance Gaussian mixtures fitted by EM.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::diffcore::log_sum_exp;
use crate::Scalar;

/// Lower bound on every component variance.
pub const VARIANCE_FLOOR: f64 = 1e-6;

/// Smallest effective number of points a component needs before its
/// variances carry at least two degrees of freedom. Fits with a lighter
/// component are marked degenerate: their likelihood is dominated by a
/// near-singular spike.
pub const MIN_COMPONENT_MASS: f64 = 3.0;

const LLOYD_ITERS: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmFit<T> {
    pub n_components: usize,
    pub dim: usize,
    pub n_points: usize,
    pub weights: Vec<T>,
    /// `C × d`, row-major.
    pub means: Vec<T>,
    /// `C × d`, row-major.
    pub variances: Vec<T>,
    pub log_likelihood: T,
    pub aic: T,
    pub n_params: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Log-likelihood after every E-step of the winning restart.
    pub ll_trace: Vec<T>,
    /// Some component was re-seeded after emptying out, which can break
    /// monotonicity of `ll_trace` at that iteration.
    pub reseeded: bool,
    /// Some component carries less than [`MIN_COMPONENT_MASS`] points.
    pub degenerate: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmOptions {
    pub restarts: usize,
    /// Stop once an iteration improves the log-likelihood by less than this.
    pub tol: f64,
    pub max_iter: usize,
    /// Per-dimension variance floor as a fraction of the data's variance
    /// in that dimension; never below [`VARIANCE_FLOOR`].
    pub relative_floor: f64,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions { restarts: 5, tol: 1e-8, max_iter: 500, relative_floor: 1e-2 }
    }
}

/// Free parameters of a `C`-component diagonal mixture in `d` dimensions.
pub fn param_count(c: usize, d: usize) -> usize {
    (c - 1) + 2 * c * d
}

pub fn aic_score<T: Scalar>(fit: &GmmFit<T>) -> T {
    T::lit(2.0) * T::from_usize(fit.n_params).unwrap() - T::lit(2.0) * fit.log_likelihood
}

fn log_normal<T: Scalar>(x: &[T], mean: &[T], var: &[T]) -> T {
    let ln2pi = T::lit((2.0 * std::f64::consts::PI).ln());
    let half = T::lit(0.5);
    x.iter().zip(mean).zip(var).map(|((&xi, &m), &v)| -half * (ln2pi + v.ln() + (xi - m) * (xi - m) / v)).sum()
}

/// Log-likelihood of `data` (`n × d`) under a fitted mixture.
pub fn log_likelihood<T: Scalar>(fit: &GmmFit<T>, data: &[T]) -> T {
    let d = fit.dim;
    let mut comp = vec![T::zero(); fit.n_components];
    data.chunks(d)
        .map(|x| {
            for (c, slot) in comp.iter_mut().enumerate() {
                let r = c * d..(c + 1) * d;
                *slot = fit.weights[c].ln() + log_normal(x, &fit.means[r.clone()], &fit.variances[r]);
            }
            log_sum_exp(&comp)
        })
        .sum()
}

struct State<T> {
    weights: Vec<T>,
    means: Vec<T>,
    vars: Vec<T>,
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding: centres drawn with probability proportional to the
/// squared distance from the nearest centre chosen so far.
fn seed_centres<T: Scalar, R: Rng + ?Sized>(data: &[T], n: usize, d: usize, c: usize, rng: &mut R) -> Vec<usize> {
    let mut centres = vec![rng.random_range(0..n)];
    let mut nearest: Vec<f64> = (0..n)
        .map(|i| sq_dist(&data[i * d..(i + 1) * d], &data[centres[0] * d..(centres[0] + 1) * d]).as_f64())
        .collect();
    while centres.len() < c {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in nearest.iter().enumerate() {
                acc += w;
                if u < acc {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centres.push(pick);
        let p = &data[pick * d..(pick + 1) * d];
        for (i, slot) in nearest.iter_mut().enumerate() {
            *slot = slot.min(sq_dist(&data[i * d..(i + 1) * d], p).as_f64());
        }
    }
    centres
}

/// Lloyd's k-means from the given seed rows. Returns each row's cluster.
/// A cluster that empties keeps its previous centre.
fn lloyd<T: Scalar>(data: &[T], n: usize, d: usize, c: usize, seeds: &[usize]) -> Vec<usize> {
    let mut centres: Vec<T> = seeds.iter().flat_map(|&i| data[i * d..(i + 1) * d].iter().copied()).collect();
    let mut assign = vec![usize::MAX; n];
    for _ in 0..LLOYD_ITERS {
        let mut changed = false;
        for (i, slot) in assign.iter_mut().enumerate() {
            let x = &data[i * d..(i + 1) * d];
            let mut best = 0;
            let mut best_d = sq_dist(x, &centres[..d]);
            for k in 1..c {
                let dk = sq_dist(x, &centres[k * d..(k + 1) * d]);
                if dk < best_d {
                    best = k;
                    best_d = dk;
                }
            }
            if *slot != best {
                *slot = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![T::zero(); c * d];
        let mut counts = vec![0usize; c];
        for (i, &k) in assign.iter().enumerate() {
            counts[k] += 1;
            for j in 0..d {
                sums[k * d + j] += data[i * d + j];
            }
        }
        for k in 0..c {
            if counts[k] > 0 {
                let m = T::from_usize(counts[k]).unwrap();
                for j in 0..d {
                    centres[k * d + j] = sums[k * d + j] / m;
                }
            }
        }
    }
    assign
}

/// Per-dimension (biased) variance of the whole data set, floored.
fn global_variance<T: Scalar>(data: &[T], n: usize, d: usize) -> Vec<T> {
    let nn = T::from_usize(n).unwrap();
    let floor = T::lit(VARIANCE_FLOOR);
    (0..d)
        .map(|j| {
            let mean = (0..n).map(|i| data[i * d + j]).sum::<T>() / nn;
            let var = (0..n).map(|i| (data[i * d + j] - mean) * (data[i * d + j] - mean)).sum::<T>() / nn;
            var.max(floor)
        })
        .collect()
}

/// M-step from responsibilities `resp` (`n × C`). Returns whether a
/// component had to be re-seeded.
fn m_step<T: Scalar, R: Rng + ?Sized>(
    data: &[T],
    resp: &[T],
    n: usize,
    d: usize,
    c: usize,
    global_var: &[T],
    floors: &[T],
    st: &mut State<T>,
    rng: &mut R,
) -> bool {
    let empty = T::lit(1e-10);
    let nn = T::from_usize(n).unwrap();
    let mut reseeded = false;
    for k in 0..c {
        let nk: T = (0..n).map(|i| resp[i * c + k]).sum();
        let r = k * d..(k + 1) * d;
        if nk <= empty {
            let i = rng.random_range(0..n);
            st.means[r.clone()].copy_from_slice(&data[i * d..(i + 1) * d]);
            st.vars[r].copy_from_slice(global_var);
            st.weights[k] = T::one() / nn;
            reseeded = true;
            continue;
        }
        for j in 0..d {
            let mean = (0..n).map(|i| resp[i * c + k] * data[i * d + j]).sum::<T>() / nk;
            let var =
                (0..n).map(|i| resp[i * c + k] * (data[i * d + j] - mean) * (data[i * d + j] - mean)).sum::<T>() / nk;
            st.means[k * d + j] = mean;
            st.vars[k * d + j] = var.max(floors[j]);
        }
        st.weights[k] = nk / nn;
    }
    let total: T = st.weights.iter().copied().sum();
    st.weights.iter_mut().for_each(|w| *w /= total);
    reseeded
}

/// E-step: fills `resp` and returns the log-likelihood.
fn e_step<T: Scalar>(data: &[T], d: usize, c: usize, st: &State<T>, resp: &mut [T]) -> T {
    let mut ll = T::zero();
    for (i, x) in data.chunks(d).enumerate() {
        let row = &mut resp[i * c..(i + 1) * c];
        for (k, slot) in row.iter_mut().enumerate() {
            let r = k * d..(k + 1) * d;
            *slot = st.weights[k].ln() + log_normal(x, &st.means[r.clone()], &st.vars[r]);
        }
        let lse = log_sum_exp(row);
        row.iter_mut().for_each(|v| *v = (*v - lse).exp());
        ll += lse;
    }
    ll
}

/// Fits a `c`-component diagonal Gaussian mixture to `data` (`n × dim`,
/// row-major), keeping the best of `opts.restarts` k-means++ seeded runs.
pub fn em_fit<T: Scalar, R: Rng + ?Sized>(
    data: &[T],
    dim: usize,
    c: usize,
    opts: &EmOptions,
    rng: &mut R,
) -> Result<GmmFit<T>, AnalysisError> {
    if dim == 0 || !data.len().is_multiple_of(dim) {
        return Err(AnalysisError::InvalidInput(format!("data length {} is not a multiple of dim {dim}", data.len())));
    }
    let n = data.len() / dim;
    if c == 0 || n <= c {
        return Err(AnalysisError::InvalidInput(format!("need more points ({n}) than components ({c})")));
    }
    if data.iter().any(|x| !x.is_finite()) {
        return Err(AnalysisError::InvalidInput("data contains non-finite values".into()));
    }
    let d = dim;
    let global_var = global_variance(data, n, d);
    let floors: Vec<T> =
        global_var.iter().map(|&v| (v * T::lit(opts.relative_floor)).max(T::lit(VARIANCE_FLOOR))).collect();
    let mut best: Option<GmmFit<T>> = None;
    for _ in 0..opts.restarts.max(1) {
        let seeds = seed_centres(data, n, d, c, rng);
        let assign = lloyd(data, n, d, c, &seeds);
        // hard k-means assignment gives the first M-step
        let mut resp = vec![T::zero(); n * c];
        for (i, &k) in assign.iter().enumerate() {
            resp[i * c + k] = T::one();
        }
        let mut st = State { weights: vec![T::zero(); c], means: vec![T::zero(); c * d], vars: vec![T::one(); c * d] };
        let mut reseeded = m_step(data, &resp, n, d, c, &global_var, &floors, &mut st, rng);
        let mut trace = Vec::new();
        let mut converged = false;
        let mut iterations = 0;
        let tol = T::lit(opts.tol);
        for _ in 0..opts.max_iter {
            let ll = e_step(data, d, c, &st, &mut resp);
            iterations += 1;
            let done = trace.last().is_some_and(|&prev: &T| ll - prev < tol);
            trace.push(ll);
            if done {
                converged = true;
                break;
            }
            reseeded |= m_step(data, &resp, n, d, c, &global_var, &floors, &mut st, rng);
        }
        let ll = *trace.last().unwrap();
        let nn = T::from_usize(n).unwrap();
        let degenerate = st.weights.iter().any(|&w| w * nn < T::lit(MIN_COMPONENT_MASS));
        // a non-degenerate restart always beats a degenerate one
        let better = match &best {
            None => true,
            Some(b) => (b.degenerate && !degenerate) || (b.degenerate == degenerate && ll > b.log_likelihood),
        };
        if better {
            let k = param_count(c, d);
            let mut fit = GmmFit {
                n_components: c,
                dim: d,
                n_points: n,
                weights: st.weights,
                means: st.means,
                variances: st.vars,
                log_likelihood: ll,
                aic: T::zero(),
                n_params: k,
                iterations,
                converged,
                ll_trace: trace,
                reseeded,
                degenerate,
            };
            fit.aic = aic_score(&fit);
            best = Some(fit);
        }
    }
    Ok(best.unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn single_component_is_closed_form() {
        let mut rng = rng_from_seed(4);
        let data: Vec<f64> = (0..300)
            .map(|_| {
                3.0 + 2.0 * {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z
                }
            })
            .collect();
        let fit = em_fit(&data, 1, 1, &EmOptions::default(), &mut rng).unwrap();
        let n = data.len() as f64;
        let mean = data.iter().sum::<f64>() / n;
        let var = data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!((fit.means[0] - mean).abs() < 1e-9);
        assert!((fit.variances[0] - var).abs() < 1e-9);
        assert_eq!(fit.n_params, 2);
    }

    #[test]
    fn parameter_count_formula() {
        assert_eq!(param_count(1, 1), 2);
        assert_eq!(param_count(2, 1), 5);
        assert_eq!(param_count(3, 4), 2 + 24);
        assert_eq!(param_count(2, 3) - param_count(1, 3), 1 + 2 * 3);
    }

    #[test]
    fn relative_floor_bounds_component_variances() {
        let mut rng = rng_from_seed(8);
        // three near-identical points would otherwise form a spike
        let mut data: Vec<f64> = (0..40).map(|_| StandardNormal.sample(&mut rng)).collect();
        data.extend([5.0, 5.0 + 1e-7, 5.0 - 1e-7]);
        let opts = EmOptions { relative_floor: 0.05, ..EmOptions::default() };
        let fit = em_fit(&data, 1, 2, &opts, &mut rng).unwrap();
        let n = data.len() as f64;
        let mean = data.iter().sum::<f64>() / n;
        let var = data.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        assert!(fit.variances.iter().all(|&v| v >= 0.05 * var * (1.0 - 1e-12)), "{:?}", fit.variances);
        let raw = em_fit(&data, 1, 2, &EmOptions { relative_floor: 0.0, ..opts }, &mut rng).unwrap();
        assert!(raw.variances.iter().any(|&v| v < 1e-6 * (1.0 + 1e-9)));
    }

    #[test]
    fn rejects_too_few_points() {
        let mut rng = rng_from_seed(0);
        assert!(em_fit(&[1.0, 2.0], 1, 2, &EmOptions::default(), &mut rng).is_err());
        assert!(em_fit(&[1.0, 2.0, 3.0], 2, 1, &EmOptions::default(), &mut rng).is_err());
    }

    #[test]
    fn works_in_single_precision() {
        let mut rng = rng_from_seed(2);
        let data: Vec<f32> = (0..200).map(|i| if i % 2 == 0 { -5.0 } else { 5.0 } + (i as f32 * 0.37).sin()).collect();
        let fit = em_fit(&data, 1, 2, &EmOptions::default(), &mut rng).unwrap();
        let mut means = fit.means.clone();
        means.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((means[0] + 5.0).abs() < 0.3 && (means[1] - 5.0).abs() < 0.3, "{means:?}");
    }
}
