use serde::{Deserialize, Serialize};

use super::{DiffError, NodeId, Shape, Tape};
use crate::Scalar;

/// Recurrent state carried between steps of one episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmState<T> {
    pub hidden: Vec<T>,
    pub cell: Vec<T>,
}

impl<T: Scalar> LstmState<T> {
    pub fn zeros(size: usize) -> Self {
        LstmState { hidden: vec![T::zero(); size], cell: vec![T::zero(); size] }
    }

    pub fn new(hidden: Vec<T>, cell: Vec<T>) -> Result<Self, DiffError> {
        let state = LstmState { hidden, cell };
        state.validate()?;
        Ok(state)
    }

    pub fn size(&self) -> usize {
        self.hidden.len()
    }

    pub fn validate(&self) -> Result<(), DiffError> {
        if self.hidden.len() != self.cell.len() {
            return Err(DiffError::BadState("hidden and cell lengths differ"));
        }
        if self.hidden.iter().chain(&self.cell).any(|x| !x.is_finite()) {
            return Err(DiffError::BadState("non-finite entries"));
        }
        Ok(())
    }

    /// Records the state as `1 × H` constants.
    pub fn to_nodes(&self, tape: &mut Tape<T>) -> Result<(NodeId, NodeId), DiffError> {
        let shape = Shape::row(self.size());
        Ok((tape.constant(self.hidden.clone(), shape)?, tape.constant(self.cell.clone(), shape)?))
    }

    pub fn from_nodes(tape: &Tape<T>, hidden: NodeId, cell: NodeId) -> Result<Self, DiffError> {
        Self::new(tape.value(hidden).to_vec(), tape.value(cell).to_vec())
    }
}

/// Tape ids of one LSTM cell's parameters. Gate columns are ordered
/// input, forget, candidate, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmParams {
    /// `[D × 4H]`
    pub w_x: NodeId,
    /// `[H × 4H]`
    pub w_h: NodeId,
    /// `[1 × 4H]`
    pub bias: NodeId,
}

/// One LSTM step on a batch: `x: [B × D]`, `hidden`, `cell: [B × H]`.
/// Returns the new `(hidden, cell)`.
pub fn lstm_step<T: Scalar>(
    tape: &mut Tape<T>,
    x: NodeId,
    hidden: NodeId,
    cell: NodeId,
    params: &LstmParams,
) -> Result<(NodeId, NodeId), DiffError> {
    let sh = tape.node(hidden)?.shape();
    let sc = tape.node(cell)?.shape();
    let sx = tape.node(x)?.shape();
    let sw = tape.node(params.w_h)?.shape();
    let h = sh.cols;
    if sc != sh || sx.rows != sh.rows {
        return Err(DiffError::ShapeMismatch { op: "lstm_step(state)", lhs: sh, rhs: sc });
    }
    if sw != Shape::new(h, 4 * h) {
        return Err(DiffError::ShapeMismatch { op: "lstm_step(w_h)", lhs: sh, rhs: sw });
    }
    let from_input = tape.affine(x, params.w_x, params.bias)?;
    if tape.shape(from_input).cols != 4 * h {
        return Err(DiffError::ShapeMismatch { op: "lstm_step(w_x)", lhs: sh, rhs: tape.shape(params.w_x) });
    }
    let from_hidden = tape.matmul(hidden, params.w_h)?;
    let gates = tape.add(from_input, from_hidden)?;

    let i = tape.slice_cols(gates, 0, h)?;
    let f = tape.slice_cols(gates, h, h)?;
    let g = tape.slice_cols(gates, 2 * h, h)?;
    let o = tape.slice_cols(gates, 3 * h, h)?;
    let i = tape.sigmoid(i)?;
    let f = tape.sigmoid(f)?;
    let g = tape.tanh(g)?;
    let o = tape.sigmoid(o)?;

    let kept = tape.mul(f, cell)?;
    let written = tape.mul(i, g)?;
    let new_cell = tape.add(kept, written)?;
    let squashed = tape.tanh(new_cell)?;
    let new_hidden = tape.mul(o, squashed)?;
    Ok((new_hidden, new_cell))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::{grad_check, GradCheckOptions, ParamStore};
    use crate::seed::rng_from_seed;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn gate_order_matches_hand_computation() {
        // D = H = 1, W_h = 0, so gates are x·w_x + b column by column
        let mut t = Tape::<f64>::new();
        let x = t.constant(vec![0.5], Shape::row(1)).unwrap();
        let h = t.constant(vec![0.0], Shape::row(1)).unwrap();
        let c = t.constant(vec![0.8], Shape::row(1)).unwrap();
        let w_x = t.leaf(vec![1.0, -1.0, 2.0, 0.5], Shape::new(1, 4)).unwrap();
        let w_h = t.leaf(vec![0.0; 4], Shape::new(1, 4)).unwrap();
        let bias = t.leaf(vec![0.1, 0.2, -0.3, 0.0], Shape::row(4)).unwrap();
        let (h2, c2) = lstm_step(&mut t, x, h, c, &LstmParams { w_x, w_h, bias }).unwrap();
        let (i, f, g, o) = (sig(0.6), sig(-0.3), (0.7f64).tanh(), sig(0.25));
        let cell = f * 0.8 + i * g;
        assert!((t.value(c2)[0] - cell).abs() < 1e-15);
        assert!((t.value(h2)[0] - o * cell.tanh()).abs() < 1e-15);
    }

    #[test]
    fn lstm_gradients_match_finite_differences() {
        for seed in 0..3 {
            let mut rng = rng_from_seed(seed);
            let (b, d, h) = (2, 3, 4);
            let mut store = ParamStore::<f64>::new();
            store.add_uniform("x", Shape::new(b, d), 1, &mut rng).unwrap();
            store.add_uniform("h", Shape::new(b, h), 1, &mut rng).unwrap();
            store.add_uniform("c", Shape::new(b, h), 1, &mut rng).unwrap();
            store.add_uniform("w_x", Shape::new(d, 4 * h), d + h, &mut rng).unwrap();
            store.add_uniform("w_h", Shape::new(h, 4 * h), d + h, &mut rng).unwrap();
            store.add_uniform("b", Shape::row(4 * h), d + h, &mut rng).unwrap();
            let report = grad_check(&mut store, GradCheckOptions::default(), |t, p| {
                let params = LstmParams { w_x: p.id(3), w_h: p.id(4), bias: p.id(5) };
                let (h1, c1) = lstm_step(t, p.id(0), p.id(1), p.id(2), &params)?;
                let (h2, c2) = lstm_step(t, p.id(0), h1, c1, &params)?;
                let both = t.concat(&[h2, c2])?;
                let sq = t.square(both)?;
                t.sum(sq)
            })
            .unwrap();
            assert!(report.passed, "{:?}", report.tensors);
        }
    }

    #[test]
    fn state_validation() {
        assert!(LstmState::new(vec![0.0; 2], vec![0.0; 3]).is_err());
        assert!(LstmState::new(vec![f64::NAN], vec![0.0]).is_err());
        assert_eq!(LstmState::<f32>::zeros(3).size(), 3);
    }
}
