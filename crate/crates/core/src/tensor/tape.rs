use std::cell::{Ref, RefCell};
use std::fmt;

use rand::Rng;

use super::{Scalar, Tensor, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

/// Row arrangement of a batch of equal-length (padded) sequences.
///
/// Rows are time-major: position `t` of sequence `s` lives in row
/// `t * seqs + s`, so one timestep across the batch is a contiguous block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeqLayout {
    pub seqs: usize,
    pub len: usize,
}

impl SeqLayout {
    pub fn new(seqs: usize, len: usize) -> Self {
        SeqLayout { seqs, len }
    }

    #[inline]
    pub fn row(&self, seq: usize, t: usize) -> usize {
        t * self.seqs + seq
    }

    pub fn rows(&self) -> usize {
        self.seqs * self.len
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bcast {
    Same,
    Scalar,
    Row,
    Col,
}

impl Bcast {
    fn resolve(op: &'static str, a: [usize; 2], b: [usize; 2]) -> Result<Self> {
        if a == b {
            Ok(Bcast::Same)
        } else if b == [1, 1] {
            Ok(Bcast::Scalar)
        } else if b == [1, a[1]] {
            Ok(Bcast::Row)
        } else if b == [a[0], 1] {
            Ok(Bcast::Col)
        } else {
            Err(TensorError::shape(op, a, b))
        }
    }

    #[inline]
    fn index(self, r: usize, c: usize, cols: usize) -> usize {
        match self {
            Bcast::Same => r * cols + c,
            Bcast::Scalar => 0,
            Bcast::Row => c,
            Bcast::Col => r,
        }
    }
}

enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize, Bcast),
    Sub(usize, usize, Bcast),
    Mul(usize, usize, Bcast),
    Scale(usize, T),
    AddScalar(usize),
    Sigmoid(usize),
    Tanh(usize),
    Relu(usize),
    Exp(usize),
    Ln(usize),
    SoftmaxRows(usize),
    L2NormRows { x: usize, norms: Vec<T> },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    MeanRows(usize),
    Sum(usize),
    Transpose(usize),
    Dropout { x: usize, mask: Vec<T> },
    GatherRows { table: usize, index: Vec<Option<usize>> },
    SliceRows { x: usize, start: usize },
    SliceCols { x: usize, start: usize },
    Reshape(usize),
    Blend { a: usize, b: usize, mask: Vec<T> },
    Attention {
        q: usize,
        k: usize,
        v: usize,
        layout: SeqLayout,
        mask: Vec<bool>,
        scale: T,
        probs: Vec<T>,
    },
    GroupMean { x: usize, layout: SeqLayout, mask: Vec<bool> },
}

impl<T> Op<T> {
    fn operands(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::MatMul(a, b) | Op::Add(a, b, _) | Op::Sub(a, b, _) | Op::Mul(a, b, _) => {
                vec![*a, *b]
            }
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Relu(a)
            | Op::Exp(a)
            | Op::Ln(a)
            | Op::SoftmaxRows(a)
            | Op::MeanRows(a)
            | Op::Sum(a)
            | Op::Transpose(a)
            | Op::Reshape(a) => vec![*a],
            Op::L2NormRows { x, .. }
            | Op::Dropout { x, .. }
            | Op::SliceRows { x, .. }
            | Op::SliceCols { x, .. }
            | Op::GroupMean { x, .. } => vec![*x],
            Op::GatherRows { table, .. } => vec![*table],
            Op::ConcatCols(parts) | Op::ConcatRows(parts) => parts.clone(),
            Op::Blend { a, b, .. } => vec![*a, *b],
            Op::Attention { q, k, v, .. } => vec![*q, *k, *v],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Recording of one forward pass. Nodes are appended in execution order, so
/// every operand precedes the operation that consumes it.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Drops every recorded node, invalidating outstanding [`Var`]s.
    pub fn clear(&mut self) {
        self.nodes.get_mut().clear();
    }

    /// Leaf that receives a gradient.
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    fn push(&self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var { tape: self, id }
    }

    /// True when every node's operands were recorded before it.
    pub fn is_topologically_ordered(&self) -> bool {
        let nodes = self.nodes.borrow();
        nodes
            .iter()
            .enumerate()
            .all(|(id, n)| n.op.operands().iter().all(|&o| o < id))
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    /// Concatenates along the last axis (columns).
    pub fn concat_cols<'t>(&'t self, parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        if parts.is_empty() {
            return Err(TensorError::InvalidArgument(
                "concat_cols: no operands".into(),
            ));
        }
        let (value, ids) = {
            let nodes = self.nodes.borrow();
            let rows = nodes[parts[0].id].value.rows();
            let mut cols = 0;
            for p in parts {
                let s = nodes[p.id].value.shape();
                if s[0] != rows {
                    return Err(TensorError::shape(
                        "concat_cols",
                        nodes[parts[0].id].value.shape(),
                        s,
                    ));
                }
                cols += s[1];
            }
            let mut out = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                for p in parts {
                    out.extend_from_slice(nodes[p.id].value.row_slice(r));
                }
            }
            (
                Tensor::from_vec(rows, cols, out)?,
                parts.iter().map(|p| p.id).collect::<Vec<_>>(),
            )
        };
        let rg = self.requires(&ids);
        Ok(self.push(value, Op::ConcatCols(ids), rg))
    }

    /// Stacks operands vertically.
    pub fn concat_rows<'t>(&'t self, parts: &[Var<'t, T>]) -> Result<Var<'t, T>> {
        if parts.is_empty() {
            return Err(TensorError::InvalidArgument(
                "concat_rows: no operands".into(),
            ));
        }
        let (value, ids) = {
            let nodes = self.nodes.borrow();
            let cols = nodes[parts[0].id].value.cols();
            let mut rows = 0;
            let mut out = Vec::new();
            for p in parts {
                let v = &nodes[p.id].value;
                if v.cols() != cols {
                    return Err(TensorError::shape(
                        "concat_rows",
                        nodes[parts[0].id].value.shape(),
                        v.shape(),
                    ));
                }
                rows += v.rows();
                out.extend_from_slice(v.data());
            }
            (
                Tensor::from_vec(rows, cols, out)?,
                parts.iter().map(|p| p.id).collect::<Vec<_>>(),
            )
        };
        let rg = self.requires(&ids);
        Ok(self.push(value, Op::ConcatRows(ids), rg))
    }

    /// Reverse sweep from a scalar `loss`. Each node at or before the loss
    /// is visited exactly once, in reverse recording order.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        if nodes.is_empty() {
            return Err(TensorError::EmptyTape);
        }
        let shape = nodes[loss.id].value.shape();
        if shape != [1, 1] {
            return Err(TensorError::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![T::one()]);

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else {
                continue;
            };
            backprop_node(&nodes, id, &g, &mut grads);
            grads[id] = Some(g);
        }

        let shapes = nodes.iter().map(|n| n.value.shape()).collect();
        let leaf = nodes
            .iter()
            .map(|n| matches!(n.op, Op::Leaf) && n.requires_grad)
            .collect();
        Ok(Gradients {
            grads,
            shapes,
            leaf,
        })
    }
}

/// Gradient of one scalar loss with respect to every tape node.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<[usize; 2]>,
    leaf: Vec<bool>,
}

impl<T> fmt::Debug for Gradients<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let populated = self.grads.iter().filter(|g| g.is_some()).count();
        write!(f, "Gradients({populated}/{} nodes)", self.grads.len())
    }
}

impl<T: Scalar> Gradients<T> {
    /// `None` when the loss does not depend on `var`.
    pub fn get(&self, var: Var<'_, T>) -> Option<Tensor<T>> {
        self.get_id(var.id)
    }

    pub fn get_id(&self, id: usize) -> Option<Tensor<T>> {
        let g = self.grads.get(id)?.as_ref()?;
        let [r, c] = self.shapes[id];
        Some(Tensor::from_vec(r, c, g.clone()).expect("gradient shape"))
    }

    /// Gradient of `var`, zero-filled when the loss does not reach it.
    pub fn wrt(&self, var: Var<'_, T>) -> Tensor<T> {
        self.get(var).unwrap_or_else(|| {
            let [r, c] = self.shapes[var.id];
            Tensor::zeros(r, c)
        })
    }

    /// Number of trainable leaves that received a gradient.
    pub fn populated_leaves(&self) -> usize {
        self.grads
            .iter()
            .zip(&self.leaf)
            .filter(|(g, &l)| l && g.is_some())
            .count()
    }
}

/// Handle to a tape node.
#[derive(Clone, Copy)]
pub struct Var<'t, T: Scalar> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

fn acc<T: Scalar>(grads: &mut [Option<Vec<T>>], id: usize, len: usize) -> &mut Vec<T> {
    grads[id].get_or_insert_with(|| vec![T::zero(); len])
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor<T>> {
        Ref::map(self.tape.nodes.borrow(), |n| &n[self.id].value)
    }

    pub fn shape(&self) -> [usize; 2] {
        self.tape.nodes.borrow()[self.id].value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn unary(self, op: Op<T>, value: Tensor<T>) -> Self {
        let rg = self.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn map(self, f: impl Fn(T) -> T) -> Tensor<T> {
        let v = self.value();
        let data = v.data().iter().map(|&x| f(x)).collect();
        Tensor::from_vec(v.rows(), v.cols(), data).expect("same shape")
    }

    pub fn matmul(self, other: Self) -> Result<Self> {
        let value = self.value().matmul(&other.value())?;
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(value, Op::MatMul(self.id, other.id), rg))
    }

    fn binary(
        self,
        other: Self,
        name: &'static str,
        f: impl Fn(T, T) -> T,
        make: impl Fn(usize, usize, Bcast) -> Op<T>,
    ) -> Result<Self> {
        let value = {
            let a = self.value();
            let b = other.value();
            let kind = Bcast::resolve(name, a.shape(), b.shape())?;
            let cols = a.cols();
            let mut out = Vec::with_capacity(a.len());
            for r in 0..a.rows() {
                for c in 0..cols {
                    out.push(f(a.data()[r * cols + c], b.data()[kind.index(r, c, cols)]));
                }
            }
            (Tensor::from_vec(a.rows(), cols, out)?, kind)
        };
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self
            .tape
            .push(value.0, make(self.id, other.id, value.1), rg))
    }

    /// Elementwise sum; `other` may be a scalar, a row vector or a column
    /// vector broadcast over `self`.
    pub fn add(self, other: Self) -> Result<Self> {
        self.binary(other, "add", |a, b| a + b, Op::Add)
    }

    pub fn sub(self, other: Self) -> Result<Self> {
        self.binary(other, "sub", |a, b| a - b, Op::Sub)
    }

    pub fn mul(self, other: Self) -> Result<Self> {
        self.binary(other, "mul", |a, b| a * b, Op::Mul)
    }

    pub fn scale(self, c: T) -> Self {
        let value = self.map(|x| x * c);
        self.unary(Op::Scale(self.id, c), value)
    }

    pub fn add_scalar(self, c: T) -> Self {
        let value = self.map(|x| x + c);
        self.unary(Op::AddScalar(self.id), value)
    }

    pub fn neg(self) -> Self {
        self.scale(-T::one())
    }

    pub fn sigmoid(self) -> Self {
        let value = self.map(|x| T::one() / (T::one() + (-x).exp()));
        self.unary(Op::Sigmoid(self.id), value)
    }

    pub fn tanh(self) -> Self {
        let value = self.map(|x| x.tanh());
        self.unary(Op::Tanh(self.id), value)
    }

    pub fn relu(self) -> Self {
        let value = self.map(|x| if x > T::zero() { x } else { T::zero() });
        self.unary(Op::Relu(self.id), value)
    }

    pub fn exp(self) -> Self {
        let value = self.map(|x| x.exp());
        self.unary(Op::Exp(self.id), value)
    }

    /// Natural log with the argument clamped below at `1e-12`.
    pub fn ln(self) -> Self {
        let floor = T::of_f64(LOG_FLOOR);
        let value = self.map(|x| x.max(floor).ln());
        self.unary(Op::Ln(self.id), value)
    }

    pub fn softmax_rows(self) -> Result<Self> {
        let value = {
            let v = self.value();
            if v.cols() == 0 {
                return Err(TensorError::EmptyRow { op: "softmax_rows" });
            }
            let mut out = v.clone();
            for r in 0..v.rows() {
                softmax_in_place(out.row_slice_mut(r));
            }
            out
        };
        Ok(self.unary(Op::SoftmaxRows(self.id), value))
    }

    /// Divides each row by its L2 norm plus `1e-12`.
    pub fn l2_normalize_rows(self) -> Result<Self> {
        let (value, norms) = {
            let v = self.value();
            if v.cols() == 0 {
                return Err(TensorError::EmptyRow {
                    op: "l2_normalize_rows",
                });
            }
            let eps = T::of_f64(NORM_EPS);
            let mut out = v.clone();
            let mut norms = Vec::with_capacity(v.rows());
            for r in 0..v.rows() {
                let row = out.row_slice_mut(r);
                let n = row.iter().fold(T::zero(), |s, &x| s + x * x).sqrt();
                let d = n + eps;
                row.iter_mut().for_each(|x| *x = *x / d);
                norms.push(n);
            }
            (out, norms)
        };
        Ok(self.unary(Op::L2NormRows { x: self.id, norms }, value))
    }

    /// Column-wise mean over rows: `r×c → 1×c`.
    pub fn mean_rows(self) -> Self {
        let value = {
            let v = self.value();
            let mut out = vec![T::zero(); v.cols()];
            for r in 0..v.rows() {
                for (o, &x) in out.iter_mut().zip(v.row_slice(r)) {
                    *o = *o + x;
                }
            }
            let n = T::of_f64(v.rows().max(1) as f64);
            out.iter_mut().for_each(|x| *x = *x / n);
            Tensor::row(out)
        };
        self.unary(Op::MeanRows(self.id), value)
    }

    pub fn sum(self) -> Self {
        let value = Tensor::scalar(self.value().data().iter().fold(T::zero(), |s, &x| s + x));
        self.unary(Op::Sum(self.id), value)
    }

    pub fn transpose(self) -> Self {
        let value = self.value().transpose();
        self.unary(Op::Transpose(self.id), value)
    }

    /// Inverted dropout: in train mode each entry is kept with probability
    /// `1 - rate` and rescaled by `1 / (1 - rate)`. Identity otherwise.
    pub fn dropout<R: Rng + ?Sized>(self, rate: f64, train: bool, rng: &mut R) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(TensorError::InvalidArgument(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        if !train || rate == 0.0 {
            return Ok(self);
        }
        let keep = 1.0 - rate;
        let scale = T::of_f64(1.0 / keep);
        let n = self.value().len();
        let mask: Vec<T> = (0..n)
            .map(|_| {
                if rng.random::<f64>() < keep {
                    scale
                } else {
                    T::zero()
                }
            })
            .collect();
        self.dropout_with_mask(mask)
    }

    /// Dropout with an explicit multiplicative mask (already rescaled).
    pub fn dropout_with_mask(self, mask: Vec<T>) -> Result<Self> {
        let value = {
            let v = self.value();
            if mask.len() != v.len() {
                return Err(TensorError::shape("dropout", v.shape(), [1, mask.len()]));
            }
            let data = v.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
            Tensor::from_vec(v.rows(), v.cols(), data)?
        };
        Ok(self.unary(Op::Dropout { x: self.id, mask }, value))
    }

    /// Row lookup into `self` (an embedding table). `None` yields a zero row
    /// that sends no gradient back.
    pub fn gather_rows(self, index: &[Option<usize>]) -> Result<Self> {
        let value = {
            let v = self.value();
            let cols = v.cols();
            let mut out = vec![T::zero(); index.len() * cols];
            for (i, ix) in index.iter().enumerate() {
                if let Some(r) = *ix {
                    if r >= v.rows() {
                        return Err(TensorError::IndexOutOfRange {
                            op: "gather_rows",
                            index: r,
                            rows: v.rows(),
                        });
                    }
                    out[i * cols..(i + 1) * cols].copy_from_slice(v.row_slice(r));
                }
            }
            Tensor::from_vec(index.len(), cols, out)?
        };
        Ok(self.unary(
            Op::GatherRows {
                table: self.id,
                index: index.to_vec(),
            },
            value,
        ))
    }

    pub fn slice_rows(self, start: usize, len: usize) -> Result<Self> {
        let value = {
            let v = self.value();
            if start + len > v.rows() {
                return Err(TensorError::IndexOutOfRange {
                    op: "slice_rows",
                    index: start + len,
                    rows: v.rows(),
                });
            }
            let c = v.cols();
            Tensor::from_vec(len, c, v.data()[start * c..(start + len) * c].to_vec())?
        };
        Ok(self.unary(Op::SliceRows { x: self.id, start }, value))
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Result<Self> {
        let value = {
            let v = self.value();
            if start + len > v.cols() {
                return Err(TensorError::IndexOutOfRange {
                    op: "slice_cols",
                    index: start + len,
                    rows: v.cols(),
                });
            }
            let mut out = Vec::with_capacity(v.rows() * len);
            for r in 0..v.rows() {
                out.extend_from_slice(&v.row_slice(r)[start..start + len]);
            }
            Tensor::from_vec(v.rows(), len, out)?
        };
        Ok(self.unary(Op::SliceCols { x: self.id, start }, value))
    }

    /// Row-major reinterpretation with the same element count.
    pub fn reshape(self, rows: usize, cols: usize) -> Result<Self> {
        let value = {
            let v = self.value();
            if rows * cols != v.len() {
                return Err(TensorError::shape("reshape", v.shape(), [rows, cols]));
            }
            Tensor::from_vec(rows, cols, v.data().to_vec())?
        };
        Ok(self.unary(Op::Reshape(self.id), value))
    }

    /// Row-wise select: `out_r = m_r * self_r + (1 - m_r) * other_r` with a
    /// constant per-row weight `m`.
    pub fn blend_rows(self, other: Self, mask: &[T]) -> Result<Self> {
        let value = {
            let a = self.value();
            let b = other.value();
            if a.shape() != b.shape() {
                return Err(TensorError::shape("blend_rows", a.shape(), b.shape()));
            }
            if mask.len() != a.rows() {
                return Err(TensorError::shape("blend_rows", a.shape(), [mask.len(), 1]));
            }
            let c = a.cols();
            let mut out = Vec::with_capacity(a.len());
            for (r, &m) in mask.iter().enumerate() {
                for j in 0..c {
                    let i = r * c + j;
                    out.push(m * a.data()[i] + (T::one() - m) * b.data()[i]);
                }
            }
            Tensor::from_vec(a.rows(), c, out)?
        };
        let rg = self.tape.requires(&[self.id, other.id]);
        Ok(self.tape.push(
            value,
            Op::Blend {
                a: self.id,
                b: other.id,
                mask: mask.to_vec(),
            },
            rg,
        ))
    }

    /// Masked scaled dot-product attention within each sequence of `layout`.
    ///
    /// For every real query position `i` of sequence `s`:
    /// `out_i = Σ_j softmax_j(scale · q_i·k_j) v_j` over real key positions
    /// `j`. Padded query rows and rows of fully padded sequences are zero.
    pub fn seq_attention(
        self,
        keys: Self,
        values: Self,
        layout: SeqLayout,
        mask: &[bool],
        scale: T,
    ) -> Result<Self> {
        let (value, probs) = {
            let q = self.value();
            let k = keys.value();
            let v = values.value();
            let rows = layout.rows();
            if q.rows() != rows || mask.len() != rows {
                return Err(TensorError::shape(
                    "seq_attention",
                    q.shape(),
                    [rows, mask.len()],
                ));
            }
            if k.shape() != q.shape() {
                return Err(TensorError::shape("seq_attention", q.shape(), k.shape()));
            }
            if v.rows() != rows {
                return Err(TensorError::shape("seq_attention", q.shape(), v.shape()));
            }
            let dk = q.cols();
            let dv = v.cols();
            let l = layout.len;
            let mut out = vec![T::zero(); rows * dv];
            let mut probs = vec![T::zero(); layout.seqs * l * l];
            let mut logits = vec![T::zero(); l];
            for s in 0..layout.seqs {
                let real: Vec<usize> = (0..l).filter(|&t| mask[layout.row(s, t)]).collect();
                if real.is_empty() {
                    continue;
                }
                for i in 0..l {
                    let qi = layout.row(s, i);
                    if !mask[qi] {
                        continue;
                    }
                    let qrow = &q.data()[qi * dk..(qi + 1) * dk];
                    for (slot, &j) in real.iter().enumerate() {
                        let kj = layout.row(s, j);
                        let krow = &k.data()[kj * dk..(kj + 1) * dk];
                        logits[slot] = dot(qrow, krow) * scale;
                    }
                    softmax_in_place(&mut logits[..real.len()]);
                    let base = (s * l + i) * l;
                    let orow = &mut out[qi * dv..(qi + 1) * dv];
                    for (slot, &j) in real.iter().enumerate() {
                        let p = logits[slot];
                        probs[base + j] = p;
                        let vj = layout.row(s, j);
                        for (o, &x) in orow.iter_mut().zip(&v.data()[vj * dv..(vj + 1) * dv]) {
                            *o = *o + p * x;
                        }
                    }
                }
            }
            (Tensor::from_vec(rows, dv, out)?, probs)
        };
        let rg = self.tape.requires(&[self.id, keys.id, values.id]);
        Ok(self.tape.push(
            value,
            Op::Attention {
                q: self.id,
                k: keys.id,
                v: values.id,
                layout,
                mask: mask.to_vec(),
                scale,
                probs,
            },
            rg,
        ))
    }

    /// Per-sequence mean over real positions: `(seqs·len)×c → seqs×c`.
    /// Sequences without real positions map to the zero vector.
    pub fn seq_mean(self, layout: SeqLayout, mask: &[bool]) -> Result<Self> {
        let value = {
            let x = self.value();
            if x.rows() != layout.rows() || mask.len() != layout.rows() {
                return Err(TensorError::shape(
                    "seq_mean",
                    x.shape(),
                    [layout.rows(), mask.len()],
                ));
            }
            let c = x.cols();
            let mut out = vec![T::zero(); layout.seqs * c];
            for s in 0..layout.seqs {
                let n = (0..layout.len).filter(|&t| mask[layout.row(s, t)]).count();
                if n == 0 {
                    continue;
                }
                let inv = T::one() / T::of_f64(n as f64);
                let orow = &mut out[s * c..(s + 1) * c];
                for t in 0..layout.len {
                    let r = layout.row(s, t);
                    if mask[r] {
                        for (o, &v) in orow.iter_mut().zip(x.row_slice(r)) {
                            *o = *o + v * inv;
                        }
                    }
                }
            }
            Tensor::from_vec(layout.seqs, c, out)?
        };
        Ok(self.unary(
            Op::GroupMean {
                x: self.id,
                layout,
                mask: mask.to_vec(),
            },
            value,
        ))
    }
}

pub(crate) const NORM_EPS: f64 = 1e-12;
pub(crate) const LOG_FLOOR: f64 = 1e-12;

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |s, (&x, &y)| s + x * y)
}

fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().fold(T::neg_infinity(), |m, &x| m.max(x));
    let mut total = T::zero();
    for x in row.iter_mut() {
        *x = (*x - max).exp();
        total = total + *x;
    }
    row.iter_mut().for_each(|x| *x = *x / total);
}

fn reduce_bcast<T: Scalar>(g: &[T], kind: Bcast, rows: usize, cols: usize, out: &mut [T], sign: T) {
    for r in 0..rows {
        for c in 0..cols {
            let i = kind.index(r, c, cols);
            out[i] = out[i] + sign * g[r * cols + c];
        }
    }
}

fn backprop_node<T: Scalar>(
    nodes: &[Node<T>],
    id: usize,
    g: &[T],
    grads: &mut [Option<Vec<T>>],
) {
    let node = &nodes[id];
    let out = &node.value;
    let needs = |i: usize| nodes[i].requires_grad;
    let len_of = |i: usize| nodes[i].value.len();

    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            let [m, k] = av.shape();
            let n = bv.cols();
            if needs(*a) {
                // dA = G · Bᵀ
                let da = acc(grads, *a, m * k);
                T::gemm(
                    m,
                    n,
                    k,
                    T::one(),
                    g,
                    n as isize,
                    1,
                    bv.data(),
                    1,
                    n as isize,
                    T::one(),
                    da,
                    k as isize,
                    1,
                );
            }
            if needs(*b) {
                // dB = Aᵀ · G
                let db = acc(grads, *b, k * n);
                T::gemm(
                    k,
                    m,
                    n,
                    T::one(),
                    av.data(),
                    1,
                    k as isize,
                    g,
                    n as isize,
                    1,
                    T::one(),
                    db,
                    n as isize,
                    1,
                );
            }
        }
        Op::Add(a, b, kind) | Op::Sub(a, b, kind) => {
            let sign = if matches!(node.op, Op::Sub(..)) {
                -T::one()
            } else {
                T::one()
            };
            if needs(*a) {
                let da = acc(grads, *a, g.len());
                da.iter_mut().zip(g).for_each(|(d, &x)| *d = *d + x);
            }
            if needs(*b) {
                let [r, c] = out.shape();
                let db = acc(grads, *b, len_of(*b));
                reduce_bcast(g, *kind, r, c, db, sign);
            }
        }
        Op::Mul(a, b, kind) => {
            let av = &nodes[*a].value;
            let bv = &nodes[*b].value;
            let [r, c] = out.shape();
            if needs(*a) {
                let da = acc(grads, *a, g.len());
                for i in 0..r {
                    for j in 0..c {
                        let ix = i * c + j;
                        da[ix] = da[ix] + g[ix] * bv.data()[kind.index(i, j, c)];
                    }
                }
            }
            if needs(*b) {
                let ga: Vec<T> = g.iter().zip(av.data()).map(|(&x, &y)| x * y).collect();
                let db = acc(grads, *b, len_of(*b));
                reduce_bcast(&ga, *kind, r, c, db, T::one());
            }
        }
        Op::Scale(a, s) => {
            if needs(*a) {
                let da = acc(grads, *a, g.len());
                da.iter_mut().zip(g).for_each(|(d, &x)| *d = *d + *s * x);
            }
        }
        Op::AddScalar(a) | Op::Reshape(a) => {
            if needs(*a) {
                let da = acc(grads, *a, g.len());
                da.iter_mut().zip(g).for_each(|(d, &x)| *d = *d + x);
            }
        }
        Op::Sigmoid(a) => elementwise(grads, *a, needs(*a), g, out.data(), |y, _| {
            y * (T::one() - y)
        }, nodes),
        Op::Tanh(a) => elementwise(grads, *a, needs(*a), g, out.data(), |y, _| {
            T::one() - y * y
        }, nodes),
        Op::Exp(a) => elementwise(grads, *a, needs(*a), g, out.data(), |y, _| y, nodes),
        Op::Relu(a) => elementwise(grads, *a, needs(*a), g, out.data(), |_, x| {
            if x > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }, nodes),
        Op::Ln(a) => {
            let floor = T::of_f64(LOG_FLOOR);
            elementwise(grads, *a, needs(*a), g, out.data(), |_, x| {
                if x > floor {
                    T::one() / x
                } else {
                    T::zero()
                }
            }, nodes)
        }
        Op::SoftmaxRows(a) => {
            if needs(*a) {
                let c = out.cols();
                let da = acc(grads, *a, g.len());
                for r in 0..out.rows() {
                    let y = out.row_slice(r);
                    let gr = &g[r * c..(r + 1) * c];
                    let inner = dot(gr, y);
                    for j in 0..c {
                        da[r * c + j] = da[r * c + j] + y[j] * (gr[j] - inner);
                    }
                }
            }
        }
        Op::L2NormRows { x, norms } => {
            if needs(*x) {
                let xv = &nodes[*x].value;
                let c = xv.cols();
                let eps = T::of_f64(NORM_EPS);
                let dx = acc(grads, *x, g.len());
                for (r, &n) in norms.iter().enumerate() {
                    let xr = xv.row_slice(r);
                    let gr = &g[r * c..(r + 1) * c];
                    let s = n + eps;
                    let proj = if n > T::zero() {
                        dot(gr, xr) / (s * s * n)
                    } else {
                        T::zero()
                    };
                    for j in 0..c {
                        dx[r * c + j] = dx[r * c + j] + gr[j] / s - xr[j] * proj;
                    }
                }
            }
        }
        Op::ConcatCols(parts) => {
            let [rows, cols] = out.shape();
            let mut offset = 0;
            for &p in parts {
                let pc = nodes[p].value.cols();
                if needs(p) {
                    let dp = acc(grads, p, rows * pc);
                    for r in 0..rows {
                        for j in 0..pc {
                            dp[r * pc + j] = dp[r * pc + j] + g[r * cols + offset + j];
                        }
                    }
                }
                offset += pc;
            }
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let n = len_of(p);
                if needs(p) {
                    let dp = acc(grads, p, n);
                    dp.iter_mut()
                        .zip(&g[offset..offset + n])
                        .for_each(|(d, &x)| *d = *d + x);
                }
                offset += n;
            }
        }
        Op::MeanRows(a) => {
            if needs(*a) {
                let [r, c] = nodes[*a].value.shape();
                let inv = T::one() / T::of_f64(r.max(1) as f64);
                let da = acc(grads, *a, r * c);
                for i in 0..r {
                    for j in 0..c {
                        da[i * c + j] = da[i * c + j] + g[j] * inv;
                    }
                }
            }
        }
        Op::Sum(a) => {
            if needs(*a) {
                let da = acc(grads, *a, len_of(*a));
                da.iter_mut().for_each(|d| *d = *d + g[0]);
            }
        }
        Op::Transpose(a) => {
            if needs(*a) {
                let [r, c] = out.shape();
                let da = acc(grads, *a, r * c);
                // out is r×c, operand is c×r
                for i in 0..r {
                    for j in 0..c {
                        da[j * r + i] = da[j * r + i] + g[i * c + j];
                    }
                }
            }
        }
        Op::Dropout { x, mask } => {
            if needs(*x) {
                let dx = acc(grads, *x, g.len());
                for ((d, &gv), &m) in dx.iter_mut().zip(g).zip(mask) {
                    *d = *d + gv * m;
                }
            }
        }
        Op::GatherRows { table, index } => {
            if needs(*table) {
                let c = out.cols();
                let dt = acc(grads, *table, len_of(*table));
                for (i, ix) in index.iter().enumerate() {
                    if let Some(r) = *ix {
                        for j in 0..c {
                            dt[r * c + j] = dt[r * c + j] + g[i * c + j];
                        }
                    }
                }
            }
        }
        Op::SliceRows { x, start } => {
            if needs(*x) {
                let c = out.cols();
                let dx = acc(grads, *x, len_of(*x));
                let base = start * c;
                dx[base..base + g.len()]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(d, &v)| *d = *d + v);
            }
        }
        Op::SliceCols { x, start } => {
            if needs(*x) {
                let [rows, len] = out.shape();
                let xc = nodes[*x].value.cols();
                let dx = acc(grads, *x, len_of(*x));
                for r in 0..rows {
                    for j in 0..len {
                        let i = r * xc + start + j;
                        dx[i] = dx[i] + g[r * len + j];
                    }
                }
            }
        }
        Op::Blend { a, b, mask } => {
            let c = out.cols();
            if needs(*a) {
                let da = acc(grads, *a, g.len());
                for (r, &m) in mask.iter().enumerate() {
                    for j in 0..c {
                        da[r * c + j] = da[r * c + j] + m * g[r * c + j];
                    }
                }
            }
            if needs(*b) {
                let db = acc(grads, *b, g.len());
                for (r, &m) in mask.iter().enumerate() {
                    let w = T::one() - m;
                    for j in 0..c {
                        db[r * c + j] = db[r * c + j] + w * g[r * c + j];
                    }
                }
            }
        }
        Op::Attention {
            q,
            k,
            v,
            layout,
            mask,
            scale,
            probs,
        } => {
            let qv = &nodes[*q].value;
            let kv = &nodes[*k].value;
            let vv = &nodes[*v].value;
            let dk = qv.cols();
            let dvc = vv.cols();
            let rows = layout.rows();
            let l = layout.len;
            let mut dq = vec![T::zero(); rows * dk];
            let mut dkey = vec![T::zero(); rows * dk];
            let mut dval = vec![T::zero(); rows * dvc];
            let mut dp = vec![T::zero(); l];
            for s in 0..layout.seqs {
                let real: Vec<usize> = (0..l).filter(|&t| mask[layout.row(s, t)]).collect();
                if real.is_empty() {
                    continue;
                }
                for i in 0..l {
                    let qi = layout.row(s, i);
                    if !mask[qi] {
                        continue;
                    }
                    let base = (s * l + i) * l;
                    let go = &g[qi * dvc..(qi + 1) * dvc];
                    let mut inner = T::zero();
                    for &j in &real {
                        let vj = layout.row(s, j);
                        let p = probs[base + j];
                        let vrow = &vv.data()[vj * dvc..(vj + 1) * dvc];
                        let d = dot(go, vrow);
                        dp[j] = d;
                        inner = inner + p * d;
                        for (dvx, &gx) in dval[vj * dvc..(vj + 1) * dvc].iter_mut().zip(go) {
                            *dvx = *dvx + p * gx;
                        }
                    }
                    let qrow = &qv.data()[qi * dk..(qi + 1) * dk];
                    for &j in &real {
                        let kj = layout.row(s, j);
                        let dl = probs[base + j] * (dp[j] - inner) * *scale;
                        if dl == T::zero() {
                            continue;
                        }
                        let krow = &kv.data()[kj * dk..(kj + 1) * dk];
                        for c in 0..dk {
                            dq[qi * dk + c] = dq[qi * dk + c] + dl * krow[c];
                            dkey[kj * dk + c] = dkey[kj * dk + c] + dl * qrow[c];
                        }
                    }
                }
            }
            for (op, d) in [(*q, dq), (*k, dkey), (*v, dval)] {
                if needs(op) {
                    let t = acc(grads, op, d.len());
                    t.iter_mut().zip(&d).for_each(|(a, &b)| *a = *a + b);
                }
            }
        }
        Op::GroupMean { x, layout, mask } => {
            if needs(*x) {
                let c = out.cols();
                let dx = acc(grads, *x, len_of(*x));
                for s in 0..layout.seqs {
                    let n = (0..layout.len).filter(|&t| mask[layout.row(s, t)]).count();
                    if n == 0 {
                        continue;
                    }
                    let inv = T::one() / T::of_f64(n as f64);
                    for t in 0..layout.len {
                        let r = layout.row(s, t);
                        if mask[r] {
                            for j in 0..c {
                                dx[r * c + j] = dx[r * c + j] + g[s * c + j] * inv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `d operand += g * f(out, operand)` elementwise.
fn elementwise<T: Scalar>(
    grads: &mut [Option<Vec<T>>],
    a: usize,
    needed: bool,
    g: &[T],
    out: &[T],
    f: impl Fn(T, T) -> T,
    nodes: &[Node<T>],
) {
    if !needed {
        return;
    }
    let x = nodes[a].value.data();
    let da = acc(grads, a, g.len());
    for i in 0..g.len() {
        da[i] = da[i] + g[i] * f(out[i], x[i]);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(rows, cols, v).unwrap()
    }

    #[test]
    fn identity_matmul_is_noop() {
        let tape = Tape::<f64>::new();
        let x = t(3, 2, &[1., 2., 3., 4., 5., 6.]);
        let i = tape.constant(Tensor::identity(3));
        let xv = tape.constant(x.clone());
        assert_eq!(*i.matmul(xv).unwrap().value(), x);
    }

    #[test]
    fn l2_normalize_three_four_five() {
        let tape = Tape::<f64>::new();
        let y = tape.constant(t(1, 2, &[3., 4.])).l2_normalize_rows().unwrap();
        let v = y.value();
        assert!((v.get(0, 0) - 0.6).abs() < 1e-12);
        assert!((v.get(0, 1) - 0.8).abs() < 1e-12);
    }

    #[test]
    fn l2_normalize_zero_row_is_finite() {
        let tape = Tape::<f64>::new();
        let x = tape.param(t(1, 3, &[0., 0., 0.]));
        let y = x.l2_normalize_rows().unwrap();
        assert!(y.value().all_finite());
        let g = tape.backward(y.sum()).unwrap();
        assert!(g.wrt(x).all_finite());
    }

    #[test]
    fn softmax_two_entries() {
        let tape = Tape::<f64>::new();
        let y = tape.constant(t(1, 2, &[1., 0.])).softmax_rows().unwrap();
        let e = std::f64::consts::E;
        assert!((y.value().get(0, 0) - e / (e + 1.0)).abs() < 1e-12);
        assert!((y.value().get(0, 0) - 0.73106).abs() < 1e-4);
        assert!((y.value().get(0, 1) - 0.26894).abs() < 1e-4);
    }

    #[test]
    fn shape_errors_name_both_shapes() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(2, 3));
        let b = tape.constant(Tensor::zeros(2, 3));
        let err = a.matmul(b).unwrap_err();
        assert_eq!(
            err,
            TensorError::ShapeMismatch {
                op: "matmul",
                left: [2, 3],
                right: [2, 3]
            }
        );
        assert!(err.to_string().contains("[2, 3]"));
        let c = tape.constant(Tensor::zeros(3, 2));
        assert!(matches!(a.add(c), Err(TensorError::ShapeMismatch { .. })));
    }

    #[test]
    fn empty_rows_rejected() {
        let tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(2, 0));
        assert!(matches!(a.softmax_rows(), Err(TensorError::EmptyRow { .. })));
        assert!(matches!(
            a.l2_normalize_rows(),
            Err(TensorError::EmptyRow { .. })
        ));
    }

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::<f64>::new();
        let x = tape.param(t(2, 3, &[1., -2., 3., 0.5, 9., -1.]));
        let g = tape.backward(x.sum()).unwrap();
        assert!(g.wrt(x).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::scalar(0.0));
        let g = tape.backward(x.sigmoid()).unwrap();
        assert!((g.wrt(x).item() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn bilinear_gradient() {
        let tape = Tape::<f64>::new();
        let x = tape.param(t(1, 2, &[1., 2.]));
        let y = tape.param(t(1, 2, &[3., 4.]));
        let loss = x.mul(y).unwrap().sum();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).data(), &[3., 4.]);
        assert_eq!(g.wrt(y).data(), &[1., 2.]);
    }

    #[test]
    fn backward_rejects_non_scalar_and_empty() {
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::zeros(2, 2));
        assert_eq!(
            tape.backward(x).unwrap_err(),
            TensorError::NonScalarLoss([2, 2])
        );
        let empty = Tape::<f64>::new();
        let stray = Var { tape: &empty, id: 0 };
        assert_eq!(empty.backward(stray).unwrap_err(), TensorError::EmptyTape);
    }

    #[test]
    fn fan_out_gradients_add() {
        let x0 = t(1, 3, &[0.3, -0.7, 1.1]);
        let single = |which: u8| {
            let tape = Tape::<f64>::new();
            let x = tape.param(x0.clone());
            let loss = match which {
                0 => x.tanh().sum(),
                1 => x.mul(x).unwrap().sum(),
                _ => x.tanh().sum().add(x.mul(x).unwrap().sum()).unwrap(),
            };
            tape.backward(loss).unwrap().wrt(x)
        };
        let a = single(0);
        let b = single(1);
        let both = single(2);
        for i in 0..3 {
            assert!((a.data()[i] + b.data()[i] - both.data()[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn eval_dropout_is_identity() {
        let tape = Tape::<f64>::new();
        let x = tape.param(t(1, 4, &[1., 2., 3., 4.]));
        let mut rng = rand::rng();
        let y = x.dropout(0.5, false, &mut rng).unwrap();
        assert_eq!(y.id(), x.id());
    }

    #[test]
    fn train_dropout_rescales_kept() {
        use rand::SeedableRng;
        let tape = Tape::<f64>::new();
        let x = tape.param(Tensor::full(1, 1000, 1.0));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let y = x.dropout(0.5, true, &mut rng).unwrap();
        let v = y.value();
        assert!(v.data().iter().all(|&e| e == 0.0 || e == 2.0));
        let kept = v.data().iter().filter(|&&e| e == 2.0).count();
        assert!((400..600).contains(&kept));
    }

    #[test]
    fn broadcast_row_and_col_gradients() {
        let tape = Tape::<f64>::new();
        let x = tape.param(t(2, 3, &[1., 2., 3., 4., 5., 6.]));
        let row = tape.param(t(1, 3, &[1., 1., 1.]));
        let col = tape.param(t(2, 1, &[2., 3.]));
        let y = x.add(row).unwrap().mul(col).unwrap().sum();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(row).data(), &[5., 5., 5.]);
        // col grads: sum over row of (x + 1)
        assert_eq!(g.wrt(col).data(), &[9., 18.]);
    }

    #[test]
    fn fully_masked_sequence_attends_to_nothing() {
        let tape = Tape::<f64>::new();
        let layout = SeqLayout::new(2, 2);
        let h = tape.param(t(4, 2, &[1., 2., 3., 4., 5., 6., 7., 8.]));
        // seq 0 real at t=0 only; seq 1 fully padded
        let mask = [true, false, false, false];
        let out = h.seq_attention(h, h, layout, &mask, 1.0).unwrap();
        let v = out.value().clone();
        assert_eq!(v.row_slice(0), &[1., 2.]);
        assert!(v.data()[2..].iter().all(|&e| e == 0.0));
        let pooled = h.seq_mean(layout, &mask).unwrap();
        assert_eq!(pooled.value().row_slice(0), &[1., 2.]);
        assert_eq!(pooled.value().row_slice(1), &[0., 0.]);
    }
}
