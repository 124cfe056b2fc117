//! Exact policy evaluation on tabular MDPs.

use super::{EnvError, MdpSpec, Policy};
use crate::Scalar;

/// Iteration cap for the fixed-point solvers. With γ ≤ 0.99 and bounded
/// rewards, convergence takes a few thousand sweeps.
pub const MAX_SWEEPS: usize = 200_000;

#[derive(Clone, Debug)]
pub struct Evaluation<T> {
    pub values: Vec<T>,
    pub sweeps: usize,
    pub residual: T,
}

fn residual_tol<T: Scalar>(gamma: T, scale: T) -> T {
    (T::lit(1e-10) * (T::one() - gamma) / gamma).max(T::epsilon() * T::lit(16.0) * scale.max(T::one()))
}

/// `V^π` by repeated Bellman backups. Iteration stops once the distance to
/// the fixed point, bounded by `γ/(1−γ)` times the sup-norm residual, is
/// below 1e-10 (or the scalar type's resolution, for `f32`).
pub fn evaluate_policy<T: Scalar>(spec: &MdpSpec<T>, policy: &Policy<T>) -> Result<Evaluation<T>, EnvError> {
    policy.check_fits(spec)?;
    let (ns, na) = (spec.n_states(), spec.n_actions());
    let gamma = spec.gamma();
    // expected immediate reward under π, fixed across sweeps
    let r_pi: Vec<T> = (0..ns).map(|s| (0..na).map(|a| policy.row(s)[a] * spec.expected_reward(s, a)).sum()).collect();
    let r_max = r_pi.iter().fold(T::zero(), |m, r| m.max(r.abs()));
    let tol = residual_tol(gamma, r_max / (T::one() - gamma));

    let mut v = vec![T::zero(); ns];
    let mut next = vec![T::zero(); ns];
    for sweep in 1..=MAX_SWEEPS {
        let mut residual = T::zero();
        for s in 0..ns {
            if spec.is_terminal(s) {
                next[s] = T::zero();
                continue;
            }
            let mut acc = r_pi[s];
            for a in 0..na {
                let pa = policy.row(s)[a];
                if pa == T::zero() {
                    continue;
                }
                let ev: T = spec.row(s, a).iter().zip(&v).map(|(&p, &vv)| p * vv).sum();
                acc += pa * gamma * ev;
            }
            residual = residual.max((acc - v[s]).abs());
            next[s] = acc;
        }
        std::mem::swap(&mut v, &mut next);
        if residual < tol {
            return Ok(Evaluation { values: v, sweeps: sweep, residual });
        }
    }
    Err(EnvError::NoConvergence { what: "policy evaluation", sweeps: MAX_SWEEPS })
}

pub fn solve_value<T: Scalar>(spec: &MdpSpec<T>, policy: &Policy<T>) -> Result<Vec<T>, EnvError> {
    Ok(evaluate_policy(spec, policy)?.values)
}

/// `Q^π(s, a) = Σ_s' P(s'|s,a) [r(s,a,s') + γ V^π(s')]`, row-major `S × A`.
pub fn solve_q<T: Scalar>(spec: &MdpSpec<T>, policy: &Policy<T>) -> Result<Vec<T>, EnvError> {
    let v = solve_value(spec, policy)?;
    Ok(q_from_values(spec, &v))
}

pub fn q_from_values<T: Scalar>(spec: &MdpSpec<T>, v: &[T]) -> Vec<T> {
    let (ns, na) = (spec.n_states(), spec.n_actions());
    let gamma = spec.gamma();
    let mut q = vec![T::zero(); ns * na];
    for s in 0..ns {
        if spec.is_terminal(s) {
            continue;
        }
        for a in 0..na {
            q[s * na + a] = spec
                .row(s, a)
                .iter()
                .zip(spec.reward_row(s, a))
                .zip(v)
                .map(|((&p, &r), &vv)| p * (r + gamma * vv))
                .sum();
        }
    }
    q
}

/// Unnormalised discounted state-visitation `d(s) = Σ_t γ^t P(s_t = s)` from
/// the start distribution, with absorbed (terminal) states excluded.
/// Computed by power iteration to within 1e-10 of the fixed point.
pub fn discounted_occupancy<T: Scalar>(spec: &MdpSpec<T>, policy: &Policy<T>) -> Result<Vec<T>, EnvError> {
    policy.check_fits(spec)?;
    let (ns, na) = (spec.n_states(), spec.n_actions());
    let gamma = spec.gamma();
    let tol = residual_tol(gamma, T::one() / (T::one() - gamma));
    let start: Vec<T> = (0..ns).map(|s| if spec.is_terminal(s) { T::zero() } else { spec.start_dist()[s] }).collect();
    let mut d = start.clone();
    for _ in 0..MAX_SWEEPS {
        let mut next = start.clone();
        for s in 0..ns {
            if spec.is_terminal(s) || d[s] == T::zero() {
                continue;
            }
            for a in 0..na {
                let w = gamma * d[s] * policy.row(s)[a];
                if w == T::zero() {
                    continue;
                }
                for (s2, &p) in spec.row(s, a).iter().enumerate() {
                    if !spec.is_terminal(s2) {
                        next[s2] += w * p;
                    }
                }
            }
        }
        let residual = d.iter().zip(&next).fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs()));
        d = next;
        if residual < tol {
            return Ok(d);
        }
    }
    Err(EnvError::NoConvergence { what: "occupancy power iteration", sweeps: MAX_SWEEPS })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> MdpSpec<f64> {
        // 0 -> 1 -> 2 -> 3 (terminal); reward 10 on the last hop
        let (ns, na) = (4, 1);
        let mut p = vec![0.0; ns * na * ns];
        let mut r = vec![0.0; ns * na * ns];
        for s in 0..3 {
            p[s * ns + s + 1] = 1.0;
        }
        r[2 * ns + 3] = 10.0;
        p[3 * ns + 3] = 1.0;
        MdpSpec::new(ns, na, p, r, 0.5, vec![false, false, false, true], vec![1.0, 0.0, 0.0, 0.0]).unwrap()
    }

    #[test]
    fn self_loop_geometric_series() {
        let spec = MdpSpec::<f64>::new(1, 1, vec![1.0], vec![1.0], 0.9, vec![false], vec![1.0]).unwrap();
        let v = solve_value(&spec, &Policy::uniform(1, 1)).unwrap();
        assert!((v[0] - 10.0).abs() <= 1e-9, "{}", v[0]);
    }

    #[test]
    fn deterministic_chain_backward_induction() {
        let v = solve_value(&chain(), &Policy::uniform(4, 1)).unwrap();
        let want = [2.5, 5.0, 10.0, 0.0];
        for (a, b) in v.iter().zip(want) {
            assert!((a - b).abs() < 1e-9, "{v:?}");
        }
    }

    #[test]
    fn terminal_adjacent_q() {
        let q = solve_q(&chain(), &Policy::uniform(4, 1)).unwrap();
        assert!((q[2] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_policy_rejected() {
        let bad = Policy::<f64>::new(4, 1, vec![1.0, 1.0, 0.5, 1.0]);
        assert!(bad.is_err());
        let wrong_size = Policy::<f64>::uniform(3, 1);
        assert!(solve_value(&chain(), &wrong_size).is_err());
    }

    #[test]
    fn occupancy_of_chain() {
        let d = discounted_occupancy(&chain(), &Policy::uniform(4, 1)).unwrap();
        let want = [1.0, 0.5, 0.25, 0.0];
        for (a, b) in d.iter().zip(want) {
            assert!((a - b).abs() < 1e-12, "{d:?}");
        }
    }

    #[test]
    fn f32_solver_runs() {
        let spec = MdpSpec::<f32>::new(1, 1, vec![1.0], vec![1.0], 0.9, vec![false], vec![1.0]).unwrap();
        let v = solve_value(&spec, &Policy::uniform(1, 1)).unwrap();
        assert!((v[0] - 10.0).abs() < 1e-3);
    }
}
