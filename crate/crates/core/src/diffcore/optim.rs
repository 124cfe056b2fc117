use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::Scalar;

/// Adam with per-tensor first and second moment buffers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    steps: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(lr: T, store: &ParamStore<T>) -> Self {
        let zeros: Vec<Vec<T>> = store.tensors().iter().map(|t| vec![T::zero(); t.data.len()]).collect();
        Adam { lr, beta1: T::lit(0.9), beta2: T::lit(0.999), eps: T::lit(1e-8), steps: 0, m: zeros.clone(), v: zeros }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, store: &mut ParamStore<T>) {
        let all: Vec<usize> = (0..store.len()).collect();
        self.step_only(store, &all);
    }

    /// Updates only the listed tensors; the others are left bit-identical.
    pub fn step_only(&mut self, store: &mut ParamStore<T>, which: &[usize]) {
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = T::one() - self.beta1.powi(t);
        let c2 = T::one() - self.beta2.powi(t);
        for &i in which {
            let grad = store.grad(i).to_vec();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let data = store.data_mut(i);
            for k in 0..data.len() {
                let g = grad[k];
                m[k] = self.beta1 * m[k] + (T::one() - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (T::one() - self.beta2) * g * g;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                data[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{Shape, Tape};

    fn store_with_grad(g: f64) -> ParamStore<f64> {
        let mut store = ParamStore::new();
        store.add("x", Shape::SCALAR, vec![1.0]).unwrap();
        store.add("y", Shape::SCALAR, vec![5.0]).unwrap();
        let mut tape = Tape::new();
        let bound = store.bind(&mut tape);
        let s = tape.scale(bound.id(0), g).unwrap();
        tape.backward(s).unwrap();
        store.accumulate(&tape, &bound);
        store
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // with bias correction the first update is lr · g / (|g| + eps)
        let mut store = store_with_grad(-3.0);
        let mut adam = Adam::new(0.1, &store);
        adam.step(&mut store);
        let want = 1.0 + 0.1 * 3.0 / (3.0 + 1e-8);
        assert!((store.tensor(0).data[0] - want).abs() < 1e-15);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn step_only_leaves_other_tensors_alone() {
        let mut store = store_with_grad(2.0);
        store.data_mut(1)[0] = 5.0;
        let mut adam = Adam::new(0.5, &store);
        adam.step_only(&mut store, &[0]);
        assert_eq!(store.tensor(1).data[0].to_bits(), 5.0f64.to_bits());
        assert!(store.tensor(0).data[0] < 1.0);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut store = store_with_grad(1.0);
        let before = store.flat_values();
        let mut adam = Adam::new(0.0, &store);
        for _ in 0..5 {
            adam.step(&mut store);
        }
        assert_eq!(store.flat_values(), before);
    }
}
