use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{DiffError, NodeId, Shape, Tape};
use crate::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamTensor<T> {
    pub name: String,
    pub shape: Shape,
    pub data: Vec<T>,
}

/// Named parameter tensors plus their accumulated gradients.
///
/// Parameters live outside any tape. Each forward pass binds them onto a
/// fresh tape with [`ParamStore::bind`], and [`ParamStore::accumulate`] adds
/// the tape's gradients back after `backward`. Gradients keep accumulating
/// until [`ParamStore::zero_grads`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    tensors: Vec<ParamTensor<T>>,
    grads: Vec<Vec<T>>,
    index: HashMap<String, usize>,
}

/// Tape ids of every parameter, in store order.
#[derive(Clone, Debug)]
pub struct Bound {
    ids: Vec<NodeId>,
}

impl Bound {
    pub fn id(&self, param: usize) -> NodeId {
        self.ids[param]
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }
}

impl<T: Scalar> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { tensors: Vec::new(), grads: Vec::new(), index: HashMap::new() }
    }

    pub fn from_tensors(tensors: Vec<ParamTensor<T>>) -> Result<Self, DiffError> {
        let mut store = Self::new();
        for t in tensors {
            store.add(&t.name, t.shape, t.data)?;
        }
        Ok(store)
    }

    pub fn add(&mut self, name: &str, shape: Shape, data: Vec<T>) -> Result<usize, DiffError> {
        if data.len() != shape.len() {
            return Err(DiffError::LengthMismatch { len: data.len(), shape });
        }
        if self.index.contains_key(name) {
            return Err(DiffError::DuplicateParam(name.to_string()));
        }
        let i = self.tensors.len();
        self.grads.push(vec![T::zero(); data.len()]);
        self.tensors.push(ParamTensor { name: name.to_string(), shape, data });
        self.index.insert(name.to_string(), i);
        Ok(i)
    }

    /// Adds a tensor initialised uniformly in `[-1/√fan_in, 1/√fan_in]`.
    pub fn add_uniform<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        shape: Shape,
        fan_in: usize,
        rng: &mut R,
    ) -> Result<usize, DiffError> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..shape.len()).map(|_| T::lit(rng.random_range(-bound..=bound))).collect();
        self.add(name, shape, data)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn index_of(&self, name: &str) -> Result<usize, DiffError> {
        self.index.get(name).copied().ok_or_else(|| DiffError::UnknownParam(name.to_string()))
    }

    pub fn tensor(&self, i: usize) -> &ParamTensor<T> {
        &self.tensors[i]
    }

    pub fn tensors(&self) -> &[ParamTensor<T>] {
        &self.tensors
    }

    pub fn get(&self, name: &str) -> Result<&ParamTensor<T>, DiffError> {
        Ok(&self.tensors[self.index_of(name)?])
    }

    pub fn data_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.tensors[i].data
    }

    pub fn grad(&self, i: usize) -> &[T] {
        &self.grads[i]
    }

    pub fn grads(&self) -> &[Vec<T>] {
        &self.grads
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    /// Records every parameter on `tape` as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Bound {
        let ids = self
            .tensors
            .iter()
            .map(|t| tape.leaf(t.data.clone(), t.shape).expect("stored tensors match their shapes"))
            .collect();
        Bound { ids }
    }

    /// Like [`bind`](Self::bind), but the parameters are recorded as
    /// constants: no gradient work is done for them.
    pub fn bind_frozen(&self, tape: &mut Tape<T>, trainable: impl Fn(usize) -> bool) -> Bound {
        let ids = self
            .tensors
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if trainable(i) { tape.leaf(t.data.clone(), t.shape) } else { tape.constant(t.data.clone(), t.shape) }
                    .expect("stored tensors match their shapes")
            })
            .collect();
        Bound { ids }
    }

    pub fn accumulate(&mut self, tape: &Tape<T>, bound: &Bound) {
        for (g, &id) in self.grads.iter_mut().zip(&bound.ids) {
            for (dst, &src) in g.iter_mut().zip(tape.grad(id)) {
                *dst += src;
            }
        }
    }

    pub fn grad_norm(&self) -> T {
        self.grads.iter().flatten().map(|&g| g * g).sum::<T>().sqrt()
    }

    /// Rescales gradients so their global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: T) -> T {
        let norm = self.grad_norm();
        if norm > max_norm && norm > T::zero() {
            let s = max_norm / norm;
            self.grads.iter_mut().flatten().for_each(|g| *g *= s);
        }
        norm
    }

    pub fn flat_grads(&self) -> Vec<T> {
        self.grads.iter().flatten().copied().collect()
    }

    pub fn flat_values(&self) -> Vec<T> {
        self.tensors.iter().flat_map(|t| t.data.iter().copied()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    #[test]
    fn names_are_unique_and_indexed() {
        let mut s = ParamStore::<f64>::new();
        assert_eq!(s.add("w", Shape::new(2, 2), vec![0.0; 4]).unwrap(), 0);
        assert!(matches!(s.add("w", Shape::SCALAR, vec![0.0]), Err(DiffError::DuplicateParam(_))));
        assert!(matches!(s.add("v", Shape::new(2, 2), vec![0.0; 3]), Err(DiffError::LengthMismatch { .. })));
        assert_eq!(s.index_of("w").unwrap(), 0);
        assert!(s.get("nope").is_err());
    }

    #[test]
    fn uniform_init_respects_fan_in_bound() {
        let mut s = ParamStore::<f64>::new();
        s.add_uniform("w", Shape::new(50, 20), 25, &mut rng_from_seed(3)).unwrap();
        assert!(s.tensor(0).data.iter().all(|x| x.abs() <= 0.2));
        assert!(s.tensor(0).data.iter().any(|x| x.abs() > 0.15));
    }

    #[test]
    fn clipping_rescales_to_max_norm() {
        let mut s = ParamStore::<f64>::new();
        s.add("w", Shape::row(2), vec![0.0; 2]).unwrap();
        let mut tape = Tape::new();
        let b = s.bind(&mut tape);
        let w = tape.scale(b.id(0), 1.0).unwrap();
        let sq = tape.square(w).unwrap();
        let shifted = tape.add_scalar(sq, 0.0).unwrap();
        let root = tape.sum(shifted).unwrap();
        tape.backward(root).unwrap();
        s.accumulate(&tape, &b);
        assert_eq!(s.grad_norm(), 0.0);
        s.grads[0] = vec![3.0, 4.0];
        assert_eq!(s.clip_grad_norm(1.0), 5.0);
        assert!((s.grad_norm() - 1.0).abs() < 1e-15);
        assert_eq!(s.clip_grad_norm(10.0), 1.0);
    }

    #[test]
    fn frozen_binding_records_constants() {
        let mut s = ParamStore::<f64>::new();
        s.add("a", Shape::SCALAR, vec![1.0]).unwrap();
        s.add("b", Shape::SCALAR, vec![2.0]).unwrap();
        let mut tape = Tape::new();
        let bound = s.bind_frozen(&mut tape, |i| i == 1);
        assert!(!tape.node(bound.id(0)).unwrap().requires_grad());
        assert!(tape.node(bound.id(1)).unwrap().requires_grad());
    }
}
