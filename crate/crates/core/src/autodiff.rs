//! Dense `f64` tensors and a tape-based reverse-mode differentiator.
//!
//! Every forward operation appends one node to a [`Tape`]. Because a node can
//! only reference nodes that already exist, the tape is always in topological
//! order and [`Tape::backward`] is a single reverse sweep.
//!
//! The operation set is deliberately small: matrix product, element-wise
//! arithmetic, the four activations used by the model, row/column reductions,
//! concatenation, and row gather/scatter for message passing. Broadcasting is
//! expressed through `matmul` against constant ones.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("shape {0:?} has a zero or missing extent")]
    ZeroExtent(Vec<usize>),
    #[error("{op}: expected a rank-{expected} tensor, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        shape: Vec<usize>,
    },
    #[error("{0}: empty input")]
    EmptyInput(&'static str),
    #[error("backward needs a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("{op}: row index {index} out of range for {rows} rows")]
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        rows: usize,
    },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Row-major dense array of `f64`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(TensorError::ZeroExtent(shape));
        }
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::DataLength { shape, len: data.len() });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::filled(shape, 1.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        assert!(!shape.is_empty() && !shape.contains(&0), "zero extent in {shape:?}");
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    /// A `1 × n` row vector.
    pub fn row(values: &[f64]) -> Self {
        assert!(!values.is_empty(), "empty row vector");
        Tensor {
            shape: vec![1, values.len()],
            data: values.to_vec(),
        }
    }

    /// A `rows × cols` matrix from nested rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(TensorError::DataLength {
                shape: vec![n_rows, n_cols],
                len: rows.iter().map(Vec::len).sum(),
            });
        }
        Tensor::new(vec![n_rows, n_cols], rows.concat())
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rows(&self) -> usize {
        if self.shape.len() == 1 {
            1
        } else {
            self.shape[..self.shape.len() - 1].iter().product()
        }
    }

    /// Extent of the last axis.
    pub fn cols(&self) -> usize {
        *self.shape.last().expect("tensor has at least one axis")
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols() + col]
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on shape {:?}", self.shape);
        self.data[0]
    }

    fn require_rank2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            _ => Err(TensorError::Rank {
                op,
                expected: 2,
                shape: self.shape.clone(),
            }),
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    /// Normalizes over the last axis.
    Softmax,
}

/// One recorded primitive and the nodes it read.
#[derive(Debug, Clone)]
pub enum Op {
    Leaf,
    MatMul(Var, Var),
    Elementwise(ElementwiseOp, Var, Var),
    Activation(Activation, Var),
    Log(Var),
    Clamp { input: Var, lo: f64, hi: f64 },
    Affine { input: Var, scale: f64, shift: f64 },
    SumRows(Var),
    SumAll(Var),
    Concat(Vec<Var>),
    GatherRows { input: Var, index: Vec<usize> },
    ScatterAddRows { input: Var, index: Vec<usize> },
}

impl Op {
    pub fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) | Op::Elementwise(_, a, b) => vec![*a, *b],
            Op::Activation(_, a)
            | Op::Log(a)
            | Op::SumRows(a)
            | Op::SumAll(a)
            | Op::Clamp { input: a, .. }
            | Op::Affine { input: a, .. }
            | Op::GatherRows { input: a, .. }
            | Op::ScatterAddRows { input: a, .. } => vec![*a],
            Op::Concat(parts) => parts.clone(),
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

/// The computation record: executed operations in execution order.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(capacity: usize) -> Self {
        Tape {
            nodes: Vec::with_capacity(capacity),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn op(&self, v: Var) -> &Op {
        &self.nodes[v.0].op
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn zero_grads(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn derived(&mut self, value: Tensor, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|v| self.nodes[v.0].requires_grad);
        self.push(value, op, requires_grad)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (lhs, rhs) = (self.value(a), self.value(b));
        let (m, k) = lhs.require_rank2("matmul")?;
        let (k2, n) = rhs.require_rank2("matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: lhs.shape.clone(),
                right: rhs.shape.clone(),
            });
        }
        let out = matmul_raw(&lhs.data, &rhs.data, m, k, n);
        Ok(self.derived(Tensor::new(vec![m, n], out)?, Op::MatMul(a, b)))
    }

    pub fn elementwise(&mut self, op: ElementwiseOp, a: Var, b: Var) -> Result<Var> {
        let (lhs, rhs) = (self.value(a), self.value(b));
        if lhs.shape != rhs.shape {
            return Err(TensorError::ShapeMismatch {
                op: match op {
                    ElementwiseOp::Add => "add",
                    ElementwiseOp::Sub => "sub",
                    ElementwiseOp::Mul => "mul",
                },
                left: lhs.shape.clone(),
                right: rhs.shape.clone(),
            });
        }
        let data = lhs
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(x, y)| match op {
                ElementwiseOp::Add => x + y,
                ElementwiseOp::Sub => x - y,
                ElementwiseOp::Mul => x * y,
            })
            .collect();
        let value = Tensor {
            shape: lhs.shape.clone(),
            data,
        };
        Ok(self.derived(value, Op::Elementwise(op, a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(ElementwiseOp::Mul, a, b)
    }

    pub fn activation(&mut self, act: Activation, a: Var) -> Var {
        let input = self.value(a);
        let data = match act {
            Activation::Relu => input.data.iter().map(|&x| x.max(0.0)).collect(),
            Activation::Tanh => input.data.iter().map(|&x| x.tanh()).collect(),
            Activation::Sigmoid => input.data.iter().map(|&x| sigmoid(x)).collect(),
            Activation::Softmax => {
                let cols = input.cols();
                let mut out = input.data.clone();
                for row in out.chunks_mut(cols) {
                    softmax_in_place(row);
                }
                out
            }
        };
        let value = Tensor {
            shape: input.shape.clone(),
            data,
        };
        self.derived(value, Op::Activation(act, a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.activation(Activation::Relu, a)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.activation(Activation::Tanh, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.activation(Activation::Sigmoid, a)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        self.activation(Activation::Softmax, a)
    }

    /// Natural logarithm; callers clamp away from zero first.
    pub fn log(&mut self, a: Var) -> Var {
        let input = self.value(a);
        let value = Tensor {
            shape: input.shape.clone(),
            data: input.data.iter().map(|x| x.ln()).collect(),
        };
        self.derived(value, Op::Log(a))
    }

    /// Clamps into `[lo, hi]`; the gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let input = self.value(a);
        let value = Tensor {
            shape: input.shape.clone(),
            data: input.data.iter().map(|x| x.clamp(lo, hi)).collect(),
        };
        self.derived(value, Op::Clamp { input: a, lo, hi })
    }

    /// `scale · a + shift`, element-wise with constant coefficients.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let input = self.value(a);
        let value = Tensor {
            shape: input.shape.clone(),
            data: input.data.iter().map(|x| scale * x + shift).collect(),
        };
        self.derived(value, Op::Affine { input: a, scale, shift })
    }

    /// Collapses the row axis of an `m × n` matrix into a `1 × n` row.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let input = self.value(a);
        let (_, n) = input.require_rank2("sum_rows")?;
        let mut out = vec![0.0; n];
        for row in input.data.chunks(n) {
            for (o, x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        Ok(self.derived(Tensor::new(vec![1, n], out)?, Op::SumRows(a)))
    }

    /// Sum of every element, as a `1 × 1` tensor.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let total = self.value(a).data.iter().sum();
        self.derived(Tensor::scalar(total), Op::SumAll(a))
    }

    /// Concatenates along the last axis; leading extents must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(TensorError::EmptyInput("concat"))?;
        let lead = self.value(*first).shape[..self.value(*first).shape.len() - 1].to_vec();
        let rows = self.value(*first).rows();
        let mut total_cols = 0;
        for p in parts {
            let t = self.value(*p);
            if t.shape[..t.shape.len() - 1] != lead[..] {
                return Err(TensorError::ShapeMismatch {
                    op: "concat",
                    left: self.value(*first).shape.clone(),
                    right: t.shape.clone(),
                });
            }
            total_cols += t.cols();
        }
        let mut data = Vec::with_capacity(rows * total_cols);
        for r in 0..rows {
            for p in parts {
                let t = self.value(*p);
                let c = t.cols();
                data.extend_from_slice(&t.data[r * c..(r + 1) * c]);
            }
        }
        let mut shape = lead;
        shape.push(total_cols);
        Ok(self.derived(Tensor::new(shape, data)?, Op::Concat(parts.to_vec())))
    }

    /// `out[k] = a[index[k]]` over rows of a matrix.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let input = self.value(a);
        let (rows, cols) = input.require_rank2("gather_rows")?;
        if index.is_empty() {
            return Err(TensorError::EmptyInput("gather_rows"));
        }
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index {
            if i >= rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "gather_rows",
                    index: i,
                    rows,
                });
            }
            data.extend_from_slice(&input.data[i * cols..(i + 1) * cols]);
        }
        let value = Tensor::new(vec![index.len(), cols], data)?;
        Ok(self.derived(
            value,
            Op::GatherRows {
                input: a,
                index: index.to_vec(),
            },
        ))
    }

    /// `out[r] = Σ_{k : index[k] = r} a[k]`, producing `out_rows` rows.
    pub fn scatter_add_rows(&mut self, a: Var, index: &[usize], out_rows: usize) -> Result<Var> {
        let input = self.value(a);
        let (rows, cols) = input.require_rank2("scatter_add_rows")?;
        if index.len() != rows {
            return Err(TensorError::ShapeMismatch {
                op: "scatter_add_rows",
                left: input.shape.clone(),
                right: vec![index.len()],
            });
        }
        let mut data = vec![0.0; out_rows * cols];
        for (k, &r) in index.iter().enumerate() {
            if r >= out_rows {
                return Err(TensorError::IndexOutOfRange {
                    op: "scatter_add_rows",
                    index: r,
                    rows: out_rows,
                });
            }
            for c in 0..cols {
                data[r * cols + c] += input.data[k * cols + c];
            }
        }
        let value = Tensor::new(vec![out_rows, cols], data)?;
        Ok(self.derived(
            value,
            Op::ScatterAddRows {
                input: a,
                index: index.to_vec(),
            },
        ))
    }

    /// Reverse sweep from a single-element `loss`.
    ///
    /// Adjoints are computed fresh for each call and then added into the
    /// stored gradient of every contributing node that requires one, so
    /// repeated calls accumulate until [`Tape::zero_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let loss_value = self.value(loss);
        if loss_value.numel() != 1 {
            return Err(TensorError::NotScalar(loss_value.shape.clone()));
        }
        let mut adjoint: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        adjoint[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(upstream) = adjoint[i].take() else {
                continue;
            };
            self.propagate(i, &upstream, &mut adjoint);
            adjoint[i] = Some(upstream);
        }

        for (node, adj) in self.nodes.iter_mut().zip(adjoint) {
            if !node.requires_grad {
                continue;
            }
            if let Some(adj) = adj {
                match &mut node.grad {
                    Some(g) => {
                        for (x, d) in g.data.iter_mut().zip(&adj) {
                            *x += d;
                        }
                    }
                    None => {
                        node.grad = Some(Tensor {
                            shape: node.value.shape.clone(),
                            data: adj,
                        })
                    }
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, up: &[f64], adjoint: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.shape[0], av.shape[1], bv.shape[1]);
                if self.requires_grad(*a) {
                    // dA = dC · Bᵀ
                    let acc = slot(adjoint, *a, m * k);
                    for r in 0..m {
                        for c in 0..n {
                            let g = up[r * n + c];
                            if g == 0.0 {
                                continue;
                            }
                            for j in 0..k {
                                acc[r * k + j] += g * bv.data[j * n + c];
                            }
                        }
                    }
                }
                if self.requires_grad(*b) {
                    // dB = Aᵀ · dC
                    let acc = slot(adjoint, *b, k * n);
                    for r in 0..m {
                        for j in 0..k {
                            let x = av.data[r * k + j];
                            if x == 0.0 {
                                continue;
                            }
                            for c in 0..n {
                                acc[j * n + c] += x * up[r * n + c];
                            }
                        }
                    }
                }
            }
            Op::Elementwise(kind, a, b) => {
                let len = up.len();
                let (av, bv) = (&self.value(*a).data, &self.value(*b).data);
                if self.requires_grad(*a) {
                    let acc = slot(adjoint, *a, len);
                    for k in 0..len {
                        acc[k] += match kind {
                            ElementwiseOp::Add | ElementwiseOp::Sub => up[k],
                            ElementwiseOp::Mul => up[k] * bv[k],
                        };
                    }
                }
                if self.requires_grad(*b) {
                    let acc = slot(adjoint, *b, len);
                    for k in 0..len {
                        acc[k] += match kind {
                            ElementwiseOp::Add => up[k],
                            ElementwiseOp::Sub => -up[k],
                            ElementwiseOp::Mul => up[k] * av[k],
                        };
                    }
                }
            }
            Op::Activation(act, a) => {
                if !self.requires_grad(*a) {
                    return;
                }
                let x = &self.value(*a).data;
                let y = &out.data;
                let acc = slot(adjoint, *a, up.len());
                match act {
                    Activation::Relu => {
                        for k in 0..up.len() {
                            if x[k] > 0.0 {
                                acc[k] += up[k];
                            }
                        }
                    }
                    Activation::Tanh => {
                        for k in 0..up.len() {
                            acc[k] += up[k] * (1.0 - y[k] * y[k]);
                        }
                    }
                    Activation::Sigmoid => {
                        for k in 0..up.len() {
                            acc[k] += up[k] * y[k] * (1.0 - y[k]);
                        }
                    }
                    Activation::Softmax => {
                        let cols = out.cols();
                        for base in (0..up.len()).step_by(cols) {
                            let dot: f64 = (base..base + cols).map(|k| up[k] * y[k]).sum();
                            for k in base..base + cols {
                                acc[k] += y[k] * (up[k] - dot);
                            }
                        }
                    }
                }
            }
            Op::Log(a) => {
                if self.requires_grad(*a) {
                    let x = &self.value(*a).data;
                    let acc = slot(adjoint, *a, up.len());
                    for k in 0..up.len() {
                        acc[k] += up[k] / x[k];
                    }
                }
            }
            Op::Clamp { input, lo, hi } => {
                if self.requires_grad(*input) {
                    let x = &self.value(*input).data;
                    let acc = slot(adjoint, *input, up.len());
                    for k in 0..up.len() {
                        if x[k] >= *lo && x[k] <= *hi {
                            acc[k] += up[k];
                        }
                    }
                }
            }
            Op::Affine { input, scale, .. } => {
                if self.requires_grad(*input) {
                    let acc = slot(adjoint, *input, up.len());
                    for k in 0..up.len() {
                        acc[k] += scale * up[k];
                    }
                }
            }
            Op::SumRows(a) => {
                if self.requires_grad(*a) {
                    let len = self.value(*a).numel();
                    let n = up.len();
                    let acc = slot(adjoint, *a, len);
                    for (k, x) in acc.iter_mut().enumerate() {
                        *x += up[k % n];
                    }
                }
            }
            Op::SumAll(a) => {
                if self.requires_grad(*a) {
                    let len = self.value(*a).numel();
                    for x in slot(adjoint, *a, len).iter_mut() {
                        *x += up[0];
                    }
                }
            }
            Op::Concat(parts) => {
                let rows = out.rows();
                let total = out.cols();
                let mut offset = 0;
                for p in parts {
                    let t = self.value(*p);
                    let c = t.cols();
                    if self.requires_grad(*p) {
                        let acc = slot(adjoint, *p, t.numel());
                        for r in 0..rows {
                            for j in 0..c {
                                acc[r * c + j] += up[r * total + offset + j];
                            }
                        }
                    }
                    offset += c;
                }
            }
            Op::GatherRows { input, index } => {
                if self.requires_grad(*input) {
                    let t = self.value(*input);
                    let cols = t.cols();
                    let acc = slot(adjoint, *input, t.numel());
                    for (k, &r) in index.iter().enumerate() {
                        for c in 0..cols {
                            acc[r * cols + c] += up[k * cols + c];
                        }
                    }
                }
            }
            Op::ScatterAddRows { input, index } => {
                if self.requires_grad(*input) {
                    let t = self.value(*input);
                    let cols = t.cols();
                    let acc = slot(adjoint, *input, t.numel());
                    for (k, &r) in index.iter().enumerate() {
                        for c in 0..cols {
                            acc[k * cols + c] += up[r * cols + c];
                        }
                    }
                }
            }
        }
    }
}

fn slot(adjoint: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    adjoint[v.0].get_or_insert_with(|| vec![0.0; len])
}

pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for r in 0..m {
        let out_row = &mut out[r * n..(r + 1) * n];
        for j in 0..k {
            let x = a[r * k + j];
            if x == 0.0 {
                continue;
            }
            for (o, y) in out_row.iter_mut().zip(&b[j * n..(j + 1) * n]) {
                *o += x * y;
            }
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-subtracted softmax over a row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in row.iter_mut() {
        *x /= total;
    }
}
