//! Tape-based reverse-mode differentiation over dense row-major matrices.
//!
//! A [`Tape`] records every operation as a [`DiffNode`] whose parents always
//! have smaller ids, so the recording order is a topological order and the
//! graph is acyclic by construction. The tape is rebuilt for each forward
//! pass; values are never mutated after they are recorded.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::DiffError;
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Matrix shape. Vectors are `1 × n` rows, scalars are `1 × 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub rows: usize,
    pub cols: usize,
}

impl Shape {
    pub const SCALAR: Shape = Shape { rows: 1, cols: 1 };

    pub fn new(rows: usize, cols: usize) -> Self {
        Shape { rows, cols }
    }

    pub fn row(cols: usize) -> Self {
        Shape { rows: 1, cols }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    pub fn dims(&self) -> [usize; 2] {
        [self.rows, self.cols]
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}x{}]", self.rows, self.cols)
    }
}

/// The basic operations exposed through [`Tape::forward_op`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpKind {
    Add,
    Mul,
    MatMul,
    /// `x · W + b` with `b` broadcast over rows; inputs `[x, W, b]`.
    Affine,
    Tanh,
    Relu,
    /// Column-wise concatenation of inputs with equal row counts.
    Concat,
}

#[derive(Clone)]
pub(crate) enum Op<T> {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    MatMul(NodeId, NodeId),
    Affine(NodeId, NodeId, NodeId),
    Scale(NodeId, T),
    AddScalar(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Square(NodeId),
    Concat(Vec<NodeId>),
    SliceCols(NodeId, usize),
    Softmax(NodeId),
    LogSoftmax(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    RowSum(NodeId),
    Min(NodeId, NodeId),
    Clamp(NodeId, T, T),
    Map(NodeId),
}

impl<T> Op<T> {
    fn tag(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::AddBias(..) => "add_bias",
            Op::MatMul(..) => "matmul",
            Op::Affine(..) => "affine",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Tanh(..) => "tanh",
            Op::Sigmoid(..) => "sigmoid",
            Op::Relu(..) => "relu",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Square(..) => "square",
            Op::Concat(..) => "concat",
            Op::SliceCols(..) => "slice_cols",
            Op::Softmax(..) => "softmax",
            Op::LogSoftmax(..) => "log_softmax",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::RowSum(..) => "row_sum",
            Op::Min(..) => "min",
            Op::Clamp(..) => "clamp",
            Op::Map(..) => "map",
        }
    }

    fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => Vec::new(),
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddBias(a, b) | Op::MatMul(a, b) | Op::Min(a, b) => {
                vec![*a, *b]
            }
            Op::Affine(x, w, b) => vec![*x, *w, *b],
            Op::Concat(ids) => ids.clone(),
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::Log(a)
            | Op::Square(a)
            | Op::SliceCols(a, _)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::RowSum(a)
            | Op::Clamp(a, _, _)
            | Op::Map(a) => vec![*a],
        }
    }
}

/// One recorded value in the graph.
pub struct DiffNode<T> {
    id: NodeId,
    value: Vec<T>,
    shape: Shape,
    grad: Vec<T>,
    op: Op<T>,
    derivative: Option<fn(T) -> T>,
    requires_grad: bool,
}

impl<T: Scalar> DiffNode<T> {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn value(&self) -> &[T] {
        &self.value
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn grad(&self) -> &[T] {
        &self.grad
    }

    pub fn op_tag(&self) -> &'static str {
        self.op.tag()
    }

    pub fn parents(&self) -> Vec<NodeId> {
        self.op.parents()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<DiffNode<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Result<&DiffNode<T>, DiffError> {
        self.nodes.get(id.0).ok_or(DiffError::UnknownNode(id.0))
    }

    pub fn value(&self, id: NodeId) -> &[T] {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> Shape {
        self.nodes[id.0].shape
    }

    pub fn grad(&self, id: NodeId) -> &[T] {
        &self.nodes[id.0].grad
    }

    /// Value of a `1 × 1` node.
    pub fn scalar(&self, id: NodeId) -> T {
        self.nodes[id.0].value[0]
    }

    /// A differentiable input (parameter or anything gradients are wanted for).
    pub fn leaf(&mut self, value: Vec<T>, shape: Shape) -> Result<NodeId, DiffError> {
        self.input(value, shape, true)
    }

    /// An input that never receives gradients. Backward skips work that only
    /// feeds constants.
    pub fn constant(&mut self, value: Vec<T>, shape: Shape) -> Result<NodeId, DiffError> {
        self.input(value, shape, false)
    }

    pub fn scalar_constant(&mut self, value: T) -> NodeId {
        self.push(vec![value], Shape::SCALAR, Op::Leaf, false)
    }

    fn input(&mut self, value: Vec<T>, shape: Shape, requires_grad: bool) -> Result<NodeId, DiffError> {
        if value.len() != shape.len() {
            return Err(DiffError::LengthMismatch { len: value.len(), shape });
        }
        Ok(self.push(value, shape, Op::Leaf, requires_grad))
    }

    fn push(&mut self, value: Vec<T>, shape: Shape, op: Op<T>, requires_grad: bool) -> NodeId {
        debug_assert_eq!(value.len(), shape.len());
        let id = NodeId(self.nodes.len());
        let grad = vec![T::zero(); value.len()];
        self.nodes.push(DiffNode { id, value, shape, grad, op, derivative: None, requires_grad });
        id
    }

    fn check(&self, id: NodeId) -> Result<&DiffNode<T>, DiffError> {
        self.node(id)
    }

    fn any_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Applies one of the basic operations to `inputs`.
    pub fn forward_op(&mut self, kind: OpKind, inputs: &[NodeId]) -> Result<NodeId, DiffError> {
        let arity = |n: usize| -> Result<(), DiffError> {
            if inputs.len() == n {
                Ok(())
            } else {
                Err(DiffError::Arity { op: kind_name(kind), expected: n, got: inputs.len() })
            }
        };
        match kind {
            OpKind::Add => {
                arity(2)?;
                self.add(inputs[0], inputs[1])
            }
            OpKind::Mul => {
                arity(2)?;
                self.mul(inputs[0], inputs[1])
            }
            OpKind::MatMul => {
                arity(2)?;
                self.matmul(inputs[0], inputs[1])
            }
            OpKind::Affine => {
                arity(3)?;
                self.affine(inputs[0], inputs[1], inputs[2])
            }
            OpKind::Tanh => {
                arity(1)?;
                self.tanh(inputs[0])
            }
            OpKind::Relu => {
                arity(1)?;
                self.relu(inputs[0])
            }
            OpKind::Concat => self.concat(inputs),
        }
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<Shape, DiffError> {
        let sa = self.check(a)?.shape;
        let sb = self.check(b)?.shape;
        if sa != sb {
            return Err(DiffError::ShapeMismatch { op, lhs: sa, rhs: sb });
        }
        Ok(sa)
    }

    fn zip_with(&mut self, a: NodeId, b: NodeId, op: Op<T>, f: impl Fn(T, T) -> T) -> Result<NodeId, DiffError> {
        let shape = self.same_shape(op.tag(), a, b)?;
        let value = self.nodes[a.0].value.iter().zip(&self.nodes[b.0].value).map(|(&x, &y)| f(x, y)).collect();
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, shape, op, rg))
    }

    fn map_with(&mut self, a: NodeId, op: Op<T>, f: impl Fn(T) -> T) -> Result<NodeId, DiffError> {
        let node = self.check(a)?;
        let shape = node.shape;
        let value = node.value.iter().map(|&x| f(x)).collect();
        let rg = node.requires_grad;
        Ok(self.push(value, shape, op, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.zip_with(a, b, Op::Min(a, b), |x, y| if x <= y { x } else { y })
    }

    /// `a + bias` where `bias` is a `1 × cols` row added to every row of `a`.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, DiffError> {
        let sa = self.check(a)?.shape;
        let sb = self.check(bias)?.shape;
        if sb.rows != 1 || sb.cols != sa.cols {
            return Err(DiffError::ShapeMismatch { op: "add_bias", lhs: sa, rhs: sb });
        }
        let b = &self.nodes[bias.0].value;
        let value = self.nodes[a.0]
            .value
            .chunks(sa.cols.max(1))
            .flat_map(|row| row.iter().zip(b).map(|(&x, &y)| x + y))
            .collect();
        let rg = self.any_grad(&[a, bias]);
        Ok(self.push(value, sa, Op::AddBias(a, bias), rg))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let sa = self.check(a)?.shape;
        let sb = self.check(b)?.shape;
        if sa.cols != sb.rows {
            return Err(DiffError::ShapeMismatch { op: "matmul", lhs: sa, rhs: sb });
        }
        let out = Shape::new(sa.rows, sb.cols);
        let mut value = vec![T::zero(); out.len()];
        gemm_nn(&self.nodes[a.0].value, &self.nodes[b.0].value, &mut value, sa.rows, sa.cols, sb.cols);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, out, Op::MatMul(a, b), rg))
    }

    /// `x · w + b`, with `x: [n × in]`, `w: [in × out]`, `b: [1 × out]`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let sx = self.check(x)?.shape;
        let sw = self.check(w)?.shape;
        let sb = self.check(b)?.shape;
        if sx.cols != sw.rows {
            return Err(DiffError::ShapeMismatch { op: "affine", lhs: sx, rhs: sw });
        }
        if sb != Shape::row(sw.cols) {
            return Err(DiffError::ShapeMismatch { op: "affine(bias)", lhs: sw, rhs: sb });
        }
        let out = Shape::new(sx.rows, sw.cols);
        let bias = &self.nodes[b.0].value;
        let mut value: Vec<T> = Vec::with_capacity(out.len());
        for _ in 0..out.rows {
            value.extend_from_slice(bias);
        }
        gemm_nn(&self.nodes[x.0].value, &self.nodes[w.0].value, &mut value, sx.rows, sx.cols, sw.cols);
        let rg = self.any_grad(&[x, w, b]);
        Ok(self.push(value, out, Op::Affine(x, w, b), rg))
    }

    pub fn scale(&mut self, a: NodeId, s: T) -> Result<NodeId, DiffError> {
        self.map_with(a, Op::Scale(a, s), |x| x * s)
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.scale(a, -T::one())
    }

    pub fn add_scalar(&mut self, a: NodeId, s: T) -> Result<NodeId, DiffError> {
        self.map_with(a, Op::AddScalar(a), |x| x + s)
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.map_with(a, Op::Tanh(a), |x| x.tanh())
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.map_with(a, Op::Sigmoid(a), sigmoid)
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.map_with(a, Op::Relu(a), |x| if x > T::zero() { x } else { T::zero() })
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.map_with(a, Op::Exp(a), |x| x.exp())
    }

    pub fn ln(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.map_with(a, Op::Log(a), |x| x.ln())
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        self.map_with(a, Op::Square(a), |x| x * x)
    }

    pub fn clamp(&mut self, a: NodeId, lo: T, hi: T) -> Result<NodeId, DiffError> {
        self.map_with(a, Op::Clamp(a, lo, hi), |x| x.max(lo).min(hi))
    }

    /// Elementwise custom function with a caller-supplied derivative.
    pub fn map(&mut self, a: NodeId, f: fn(T) -> T, derivative: fn(T) -> T) -> Result<NodeId, DiffError> {
        let id = self.map_with(a, Op::Map(a), f)?;
        self.nodes[id.0].derivative = Some(derivative);
        Ok(id)
    }

    pub fn concat(&mut self, inputs: &[NodeId]) -> Result<NodeId, DiffError> {
        let first = *inputs.first().ok_or(DiffError::EmptyConcat)?;
        let rows = self.check(first)?.shape.rows;
        let mut cols = 0;
        for &id in inputs {
            let s = self.check(id)?.shape;
            if s.rows != rows {
                return Err(DiffError::ShapeMismatch { op: "concat", lhs: self.nodes[first.0].shape, rhs: s });
            }
            cols += s.cols;
        }
        let mut value = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &id in inputs {
                let node = &self.nodes[id.0];
                let c = node.shape.cols;
                value.extend_from_slice(&node.value[r * c..(r + 1) * c]);
            }
        }
        let rg = self.any_grad(inputs);
        Ok(self.push(value, Shape::new(rows, cols), Op::Concat(inputs.to_vec()), rg))
    }

    /// Columns `start .. start + width` of `a`.
    pub fn slice_cols(&mut self, a: NodeId, start: usize, width: usize) -> Result<NodeId, DiffError> {
        let s = self.check(a)?.shape;
        if start + width > s.cols {
            return Err(DiffError::SliceOutOfBounds { start, end: start + width, shape: s });
        }
        let value =
            self.nodes[a.0].value.chunks(s.cols).flat_map(|row| row[start..start + width].iter().copied()).collect();
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(value, Shape::new(s.rows, width), Op::SliceCols(a, start), rg))
    }

    fn check_finite(&self, op: &'static str, a: NodeId) -> Result<Shape, DiffError> {
        let node = self.check(a)?;
        if node.shape.cols == 0 {
            return Err(DiffError::BadShape { op, expected: "at least one column", got: node.shape });
        }
        if node.value.iter().any(|x| !x.is_finite()) {
            return Err(DiffError::NonFinite { op });
        }
        Ok(node.shape)
    }

    /// Row-wise softmax, computed with max subtraction.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        let s = self.check_finite("softmax", a)?;
        let mut value = self.nodes[a.0].value.clone();
        for row in value.chunks_mut(s.cols) {
            softmax_in_place(row);
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(value, s, Op::Softmax(a), rg))
    }

    /// Row-wise `x - logsumexp(x)`.
    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        let s = self.check_finite("log_softmax", a)?;
        let mut value = self.nodes[a.0].value.clone();
        for row in value.chunks_mut(s.cols) {
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|x| *x -= lse);
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(value, s, Op::LogSoftmax(a), rg))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        let node = self.check(a)?;
        let v = node.value.iter().copied().sum();
        let rg = node.requires_grad;
        Ok(self.push(vec![v], Shape::SCALAR, Op::Sum(a), rg))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        let node = self.check(a)?;
        if node.value.is_empty() {
            return Err(DiffError::BadShape { op: "mean", expected: "non-empty input", got: node.shape });
        }
        let n = T::from_usize(node.value.len()).unwrap();
        let v = node.value.iter().copied().sum::<T>() / n;
        let rg = node.requires_grad;
        Ok(self.push(vec![v], Shape::SCALAR, Op::Mean(a), rg))
    }

    /// Sums each row, giving an `n × 1` column.
    pub fn row_sum(&mut self, a: NodeId) -> Result<NodeId, DiffError> {
        let node = self.check(a)?;
        let s = node.shape;
        let value = if s.cols == 0 {
            vec![T::zero(); s.rows]
        } else {
            node.value.chunks(s.cols).map(|r| r.iter().copied().sum()).collect()
        };
        let rg = node.requires_grad;
        Ok(self.push(value, Shape::new(s.rows, 1), Op::RowSum(a), rg))
    }

    /// Reverse pass from a scalar root.
    ///
    /// Adjoints are computed into fresh buffers and then added to every
    /// node's `grad`, so repeated calls accumulate.
    pub fn backward(&mut self, root: NodeId) -> Result<(), DiffError> {
        let rshape = self.check(root)?.shape;
        if !rshape.is_scalar() {
            return Err(DiffError::NonScalarRoot(rshape));
        }
        let mut adj: Vec<Option<Vec<T>>> = Vec::with_capacity(root.0 + 1);
        adj.resize_with(root.0 + 1, || None);
        adj[root.0] = Some(vec![T::one()]);

        for i in (0..=root.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            self.propagate(i, &g, &mut adj);
            for (dst, &src) in self.nodes[i].grad.iter_mut().zip(&g) {
                *dst += src;
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    fn propagate(&self, i: usize, g: &[T], adj: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[i];
        let y = &node.value;
        let val = |id: NodeId| &self.nodes[id.0].value;
        let shape = |id: NodeId| self.nodes[id.0].shape;
        let wants = |id: NodeId| self.nodes[id.0].requires_grad;

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for id in [*a, *b] {
                    if wants(id) {
                        axpy(slot(adj, id, g.len()), T::one(), g);
                    }
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    axpy(slot(adj, *a, g.len()), T::one(), g);
                }
                if wants(*b) {
                    axpy(slot(adj, *b, g.len()), -T::one(), g);
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    let vb = val(*b);
                    let dst = slot(adj, *a, g.len());
                    for k in 0..g.len() {
                        dst[k] += g[k] * vb[k];
                    }
                }
                if wants(*b) {
                    let va = val(*a);
                    let dst = slot(adj, *b, g.len());
                    for k in 0..g.len() {
                        dst[k] += g[k] * va[k];
                    }
                }
            }
            Op::Min(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if wants(*a) {
                    let dst = slot(adj, *a, g.len());
                    for k in 0..g.len() {
                        if va[k] <= vb[k] {
                            dst[k] += g[k];
                        }
                    }
                }
                if wants(*b) {
                    let dst = slot(adj, *b, g.len());
                    for k in 0..g.len() {
                        if va[k] > vb[k] {
                            dst[k] += g[k];
                        }
                    }
                }
            }
            Op::AddBias(a, b) => {
                if wants(*a) {
                    axpy(slot(adj, *a, g.len()), T::one(), g);
                }
                if wants(*b) {
                    let cols = node.shape.cols;
                    let dst = slot(adj, *b, cols);
                    col_sum_into(g, cols, dst);
                }
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (shape(*a), shape(*b));
                if wants(*a) {
                    let dst = slot(adj, *a, sa.len());
                    gemm_nt(g, val(*b), dst, sa.rows, sb.cols, sa.cols);
                }
                if wants(*b) {
                    let dst = slot(adj, *b, sb.len());
                    gemm_tn(val(*a), g, dst, sa.rows, sa.cols, sb.cols);
                }
            }
            Op::Affine(x, w, b) => {
                let (sx, sw) = (shape(*x), shape(*w));
                if wants(*x) {
                    let dst = slot(adj, *x, sx.len());
                    gemm_nt(g, val(*w), dst, sx.rows, sw.cols, sx.cols);
                }
                if wants(*w) {
                    let dst = slot(adj, *w, sw.len());
                    gemm_tn(val(*x), g, dst, sx.rows, sx.cols, sw.cols);
                }
                if wants(*b) {
                    let dst = slot(adj, *b, sw.cols);
                    col_sum_into(g, sw.cols, dst);
                }
            }
            Op::Scale(a, s) => {
                if wants(*a) {
                    axpy(slot(adj, *a, g.len()), *s, g);
                }
            }
            Op::AddScalar(a) => {
                if wants(*a) {
                    axpy(slot(adj, *a, g.len()), T::one(), g);
                }
            }
            Op::Tanh(a) => unary(adj, *a, wants(*a), g, |k| T::one() - y[k] * y[k]),
            Op::Sigmoid(a) => unary(adj, *a, wants(*a), g, |k| y[k] * (T::one() - y[k])),
            Op::Relu(a) => {
                let x = val(*a);
                unary(adj, *a, wants(*a), g, |k| if x[k] > T::zero() { T::one() } else { T::zero() })
            }
            Op::Exp(a) => unary(adj, *a, wants(*a), g, |k| y[k]),
            Op::Log(a) => {
                let x = val(*a);
                unary(adj, *a, wants(*a), g, |k| T::one() / x[k])
            }
            Op::Square(a) => {
                let x = val(*a);
                let two = T::lit(2.0);
                unary(adj, *a, wants(*a), g, |k| two * x[k])
            }
            Op::Clamp(a, lo, hi) => {
                let x = val(*a);
                unary(adj, *a, wants(*a), g, |k| if x[k] >= *lo && x[k] <= *hi { T::one() } else { T::zero() })
            }
            Op::Map(a) => {
                let x = val(*a);
                let d = node.derivative.expect("map node records its derivative");
                unary(adj, *a, wants(*a), g, |k| d(x[k]))
            }
            Op::Concat(ids) => {
                let rows = node.shape.rows;
                let total = node.shape.cols;
                let mut offset = 0;
                for &id in ids {
                    let c = shape(id).cols;
                    if wants(id) {
                        let dst = slot(adj, id, rows * c);
                        for r in 0..rows {
                            for j in 0..c {
                                dst[r * c + j] += g[r * total + offset + j];
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::SliceCols(a, start) => {
                if wants(*a) {
                    let sa = shape(*a);
                    let w = node.shape.cols;
                    let dst = slot(adj, *a, sa.len());
                    for r in 0..sa.rows {
                        for j in 0..w {
                            dst[r * sa.cols + start + j] += g[r * w + j];
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                if wants(*a) {
                    let c = node.shape.cols;
                    let dst = slot(adj, *a, g.len());
                    for r in 0..node.shape.rows {
                        let yr = &y[r * c..(r + 1) * c];
                        let gr = &g[r * c..(r + 1) * c];
                        let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for j in 0..c {
                            dst[r * c + j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LogSoftmax(a) => {
                if wants(*a) {
                    let c = node.shape.cols;
                    let dst = slot(adj, *a, g.len());
                    for r in 0..node.shape.rows {
                        let yr = &y[r * c..(r + 1) * c];
                        let gr = &g[r * c..(r + 1) * c];
                        let total: T = gr.iter().copied().sum();
                        for j in 0..c {
                            dst[r * c + j] += gr[j] - yr[j].exp() * total;
                        }
                    }
                }
            }
            Op::Sum(a) => {
                if wants(*a) {
                    let n = shape(*a).len();
                    slot(adj, *a, n).iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(a) => {
                if wants(*a) {
                    let n = shape(*a).len();
                    let share = g[0] / T::from_usize(n).unwrap();
                    slot(adj, *a, n).iter_mut().for_each(|d| *d += share);
                }
            }
            Op::RowSum(a) => {
                if wants(*a) {
                    let sa = shape(*a);
                    let dst = slot(adj, *a, sa.len());
                    for r in 0..sa.rows {
                        for j in 0..sa.cols {
                            dst[r * sa.cols + j] += g[r];
                        }
                    }
                }
            }
        }
    }
}

fn kind_name(kind: OpKind) -> &'static str {
    match kind {
        OpKind::Add => "add",
        OpKind::Mul => "mul",
        OpKind::MatMul => "matmul",
        OpKind::Affine => "affine",
        OpKind::Tanh => "tanh",
        OpKind::Relu => "relu",
        OpKind::Concat => "concat",
    }
}

fn slot<T: Scalar>(adj: &mut [Option<Vec<T>>], id: NodeId, len: usize) -> &mut Vec<T> {
    adj[id.0].get_or_insert_with(|| vec![T::zero(); len])
}

fn axpy<T: Scalar>(dst: &mut [T], alpha: T, x: &[T]) {
    for (d, &v) in dst.iter_mut().zip(x) {
        *d += alpha * v;
    }
}

fn unary<T: Scalar>(adj: &mut [Option<Vec<T>>], a: NodeId, wants: bool, g: &[T], d: impl Fn(usize) -> T) {
    if !wants {
        return;
    }
    let dst = slot(adj, a, g.len());
    for k in 0..g.len() {
        dst[k] += g[k] * d(k);
    }
}

fn col_sum_into<T: Scalar>(g: &[T], cols: usize, dst: &mut [T]) {
    for row in g.chunks(cols) {
        for (d, &v) in dst.iter_mut().zip(row) {
            *d += v;
        }
    }
}

/// `c += a · b` with `a: m×k`, `b: k×n`.
fn gemm_nn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
}

/// `c += g · bᵀ` with `g: m×n`, `b: k×n`, `c: m×k`.
fn gemm_nt<T: Scalar>(g: &[T], b: &[T], c: &mut [T], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let dot: T = grow.iter().zip(brow).map(|(&x, &y)| x * y).sum();
            c[i * k + p] += dot;
        }
    }
}

/// `c += aᵀ · g` with `a: m×k`, `g: m×n`, `c: k×n`.
fn gemm_tn<T: Scalar>(a: &[T], g: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &gv) in crow.iter_mut().zip(grow) {
                *cv += aip * gv;
            }
        }
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable `log Σ exp(x)`.
pub fn log_sum_exp<T: Scalar>(x: &[T]) -> T {
    let m = x.iter().copied().fold(T::neg_infinity(), T::max);
    if !m.is_finite() {
        return m;
    }
    m + x.iter().map(|&v| (v - m).exp()).sum::<T>().ln()
}

pub fn softmax_in_place<T: Scalar>(x: &mut [T]) {
    let m = x.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in x.iter_mut() {
        *v = (*v - m).exp();
        total += *v;
    }
    for v in x.iter_mut() {
        *v /= total;
    }
}
