//! Dense row-major tensors and a dynamic reverse-mode tape.
//!
//! A [`Tape`] is rebuilt for every forward pass. Parameters enter it as
//! leaves (copied from their [`Tensor`]), every operation appends a node, and
//! [`Tape::backward`] replays the nodes in reverse to produce [`Gradients`].
//! Gradients of leaves are then written back with [`Gradients::accumulate_into`].
//!
//! Only the operations the recurrent models need are provided. Rank is 1 or 2;
//! a batch of vectors is a `[rows × width]` matrix.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense tensor with an optional gradient buffer.
///
/// Equality compares shape and values only; the gradient buffer is scratch
/// state of the optimiser.
#[derive(Clone, Debug)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: PartialEq> PartialEq for Tensor<T> {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.data == other.data
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension { op: "tensor", left: shape, right: vec![data.len()] });
        }
        Ok(Self { shape, data, requires_grad: false, grad: None })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: vec![T::zero(); n], requires_grad: false, grad: None }
    }

    pub fn scalar(v: T) -> Self {
        Self { shape: vec![1], data: vec![v], requires_grad: false, grad: None }
    }

    pub fn vector(data: Vec<T>) -> Self {
        Self { shape: vec![data.len()], data, requires_grad: false, grad: None }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::Dimension { op: "from_rows", left: vec![cols], right: vec![bad.len()] });
        }
        let data = rows.iter().flatten().copied().collect();
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    /// Marks the tensor as a trainable leaf and allocates a zeroed gradient.
    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self.grad = Some(vec![T::zero(); self.data.len()]);
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Mutable access to the values; used by optimizers.
    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = T::zero());
        }
    }

    /// Adds `delta` into the gradient buffer, allocating it if needed.
    pub fn accumulate_grad(&mut self, delta: &[T]) -> Result<()> {
        if delta.len() != self.data.len() {
            return Err(Error::Dimension { op: "accumulate_grad", left: self.shape.clone(), right: vec![delta.len()] });
        }
        let n = self.data.len();
        let g = self.grad.get_or_insert_with(|| vec![T::zero(); n]);
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += *di;
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        match self.shape.as_slice() {
            [r, _] => *r,
            _ => 1,
        }
    }

    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols() + c]
    }

    pub fn row(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    /// The value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::contract(format!("expected a scalar tensor, got shape {:?}", self.shape)))
        }
    }

    fn plain(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data, requires_grad: false, grad: None }
    }
}

/// Activation functions with analytic backward rules.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    /// Softmax over each slice of the last dimension.
    SoftmaxLastDim,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Act(Var, Activation),
    Concat(Vec<Var>, usize),
    SliceCols(Var, usize, usize),
    ScaleRows(Var, Var),
    SumLastDim(Var),
    Sum(Var),
    Mean(Var),
    Gather(Var, Vec<usize>),
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b)
            | Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::AddRow(a, b)
            | Op::ScaleRows(a, b) => vec![*a, *b],
            Op::Transpose(a)
            | Op::Scale(a, _)
            | Op::Act(a, _)
            | Op::SliceCols(a, _, _)
            | Op::SumLastDim(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Gather(a, _) => vec![*a],
            Op::Concat(parts, _) => parts.clone(),
        }
    }
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Ordered record of operations. Nodes are appended in evaluation order, so
/// every node's inputs precede it.
#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by one backward pass, indexed by [`Var`].
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `v`; `None` when the loss does not depend on it or it is
    /// not differentiable.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds the gradient of `v` into `target`'s grad buffer. A node the loss
    /// does not reach contributes zero.
    pub fn accumulate_into(&self, v: Var, target: &mut Tensor<T>) -> Result<()> {
        match self.get(v) {
            Some(g) => target.accumulate_grad(g),
            None => {
                if target.grad.is_none() {
                    target.grad = Some(vec![T::zero(); target.len()]);
                }
                Ok(())
            }
        }
    }
}

fn check_finite<T: Scalar>(op: &str, data: &[T]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::numeric(format!("{op}: non-finite value {} at flat index {i}", data[i]))),
        None => Ok(()),
    }
}

// c[m×n] += a[m×k] · b[k×n]
fn gemm_nn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cj, bj) in crow.iter_mut().zip(brow) {
                *cj += aip * *bj;
            }
        }
    }
}

// c[m×k] += a[m×n] · b[k×n]ᵀ
fn gemm_nt<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = T::zero();
            for (x, y) in arow.iter().zip(brow) {
                acc += *x * *y;
            }
            c[i * k + p] += acc;
        }
    }
}

// c[k×n] += a[m×k]ᵀ · b[m×n]
fn gemm_tn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (cj, bj) in crow.iter_mut().zip(brow) {
                *cj += aip * *bj;
            }
        }
    }
}

fn softmax_rows<T: Scalar>(x: &[T], width: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for (src, dst) in x.chunks(width).zip(out.chunks_mut(width)) {
        let max = src.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for (d, s) in dst.iter_mut().zip(src) {
            *d = (*s - max).exp();
            total += *d;
        }
        for d in dst.iter_mut() {
            *d = *d / total;
        }
    }
    out
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a leaf holding a copy of `t`; it is differentiable iff
    /// `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        let rg = t.requires_grad;
        self.push(Tensor::plain(t.shape.clone(), t.data.clone()), Op::Leaf, rg)
    }

    /// Records a non-differentiable input.
    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(Tensor::plain(t.shape, t.data), Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn dim_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Dimension { op, left: self.value(a).shape.clone(), right: self.value(b).shape.clone() }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if !av.is_matrix() || !bv.is_matrix() || av.shape[1] != bv.shape[0] {
            return Err(self.dim_err("matmul", a, b));
        }
        let (m, k, n) = (av.shape[0], av.shape[1], bv.shape[1]);
        let mut out = vec![T::zero(); m * n];
        gemm_nn(&av.data, &bv.data, &mut out, m, k, n);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::plain(vec![m, n], out), Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if !av.is_matrix() {
            return Err(Error::Dimension { op: "transpose", left: av.shape.clone(), right: vec![] });
        }
        let (m, n) = (av.shape[0], av.shape[1]);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = av.data[i * n + j];
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::plain(vec![n, m], out), Op::Transpose(a), rg))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape != bv.shape {
            return Err(self.dim_err(name, a, b));
        }
        let out = av.data.iter().zip(&bv.data).map(|(x, y)| f(*x, *y)).collect();
        let shape = av.shape.clone();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::plain(shape, out), op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_same(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds the vector `b[n]` to every row of `a[m×n]`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let n = av.cols();
        if bv.shape.len() != 1 || bv.shape[0] != n {
            return Err(self.dim_err("add_row", a, b));
        }
        let out = av.data.chunks(n).flat_map(|row| row.iter().zip(&bv.data).map(|(x, y)| *x + *y)).collect();
        let shape = av.shape.clone();
        let rg = self.rg(&[a, b]);
        Ok(self.push(Tensor::plain(shape, out), Op::AddRow(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Var {
        let av = self.value(a);
        let out = av.data.iter().map(|x| *x * k).collect();
        let shape = av.shape.clone();
        let rg = self.rg(&[a]);
        self.push(Tensor::plain(shape, out), Op::Scale(a, k), rg)
    }

    pub fn activation(&mut self, a: Var, kind: Activation) -> Result<Var> {
        let av = self.value(a);
        let name = match kind {
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::SoftmaxLastDim => "softmax",
        };
        check_finite(name, &av.data)?;
        let out = match kind {
            Activation::Sigmoid => av.data.iter().map(|x| sigmoid(*x)).collect(),
            Activation::Tanh => av.data.iter().map(|x| x.tanh()).collect(),
            Activation::SoftmaxLastDim => {
                let w = av.cols();
                if w == 0 {
                    return Err(Error::contract("softmax over an empty last dimension"));
                }
                softmax_rows(&av.data, w)
            }
        };
        let shape = av.shape.clone();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::plain(shape, out), Op::Act(a, kind), rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::Tanh)
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.activation(a, Activation::SoftmaxLastDim)
    }

    /// Concatenates along `axis`. Vectors only support axis 0; matrices
    /// support 0 (stack rows) and 1 (side by side).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::contract("concat of zero tensors"))?;
        let rank = self.value(first).shape.len();
        if axis >= rank {
            return Err(Error::contract(format!("concat axis {axis} on rank {rank}")));
        }
        for &p in &parts[1..] {
            let (s0, sp) = (&self.value(first).shape, &self.value(p).shape);
            let ok = s0.len() == sp.len() && s0.iter().zip(sp).enumerate().all(|(d, (x, y))| d == axis || x == y);
            if !ok {
                return Err(self.dim_err("concat", first, p));
            }
        }
        let (shape, data) = if axis == 0 {
            let mut shape = self.value(first).shape.clone();
            shape[0] = parts.iter().map(|p| self.value(*p).shape[0]).sum();
            let data = parts.iter().flat_map(|p| self.value(*p).data.iter().copied()).collect();
            (shape, data)
        } else {
            let rows = self.value(first).shape[0];
            let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).shape[1]).collect();
            let total: usize = widths.iter().sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for (p, w) in parts.iter().zip(&widths) {
                    data.extend_from_slice(&self.value(*p).data[r * w..(r + 1) * w]);
                }
            }
            (vec![rows, total], data)
        };
        let rg = self.rg(parts);
        Ok(self.push(Tensor::plain(shape, data), Op::Concat(parts.to_vec(), axis), rg))
    }

    /// Columns `start..start + width` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let av = self.value(a);
        if !av.is_matrix() || width == 0 || start + width > av.shape[1] {
            return Err(Error::Dimension { op: "slice_cols", left: av.shape.clone(), right: vec![start, width] });
        }
        let (m, n) = (av.shape[0], av.shape[1]);
        let mut out = Vec::with_capacity(m * width);
        for i in 0..m {
            out.extend_from_slice(&av.data[i * n + start..i * n + start + width]);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::plain(vec![m, width], out), Op::SliceCols(a, start, width), rg))
    }

    /// Column `j` of a matrix as an `[m×1]` matrix.
    pub fn column(&mut self, a: Var, j: usize) -> Result<Var> {
        self.slice_cols(a, j, 1)
    }

    /// Multiplies row `i` of `a[m×n]` by `w[i]` where `w` is `[m×1]`.
    pub fn scale_rows(&mut self, a: Var, w: Var) -> Result<Var> {
        let (av, wv) = (self.value(a), self.value(w));
        if !av.is_matrix() || wv.shape != [av.shape[0], 1] {
            return Err(self.dim_err("scale_rows", a, w));
        }
        let n = av.shape[1];
        let out = av.data.chunks(n).zip(&wv.data).flat_map(|(row, k)| row.iter().map(move |x| *x * *k)).collect();
        let shape = av.shape.clone();
        let rg = self.rg(&[a, w]);
        Ok(self.push(Tensor::plain(shape, out), Op::ScaleRows(a, w), rg))
    }

    /// Row sums of `a[m×n]` as `[m×1]`.
    pub fn sum_last_dim(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if !av.is_matrix() {
            return Err(Error::Dimension { op: "sum_last_dim", left: av.shape.clone(), right: vec![] });
        }
        let (m, n) = (av.shape[0], av.shape[1]);
        let out = av.data.chunks(n).map(|r| r.iter().copied().sum()).collect();
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::plain(vec![m, 1], out), Op::SumLastDim(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().copied().sum();
        let rg = self.rg(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        if av.data.is_empty() {
            return Err(Error::contract("mean of an empty tensor"));
        }
        let s: T = av.data.iter().copied().sum();
        let m = s / T::of(av.data.len() as f64);
        let rg = self.rg(&[a]);
        Ok(self.push(Tensor::scalar(m), Op::Mean(a), rg))
    }

    /// Selects rows of `table[c×d]` by index, producing `[indices.len()×d]`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let tv = self.value(table);
        if !tv.is_matrix() {
            return Err(Error::Dimension { op: "gather_rows", left: tv.shape.clone(), right: vec![] });
        }
        let (c, d) = (tv.shape[0], tv.shape[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= c) {
            return Err(Error::Category { feature: "table".into(), index: bad, cardinality: c });
        }
        let mut out = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            out.extend_from_slice(&tv.data[i * d..(i + 1) * d]);
        }
        let rg = self.rg(&[table]);
        Ok(self.push(Tensor::plain(vec![indices.len(), d], out), Op::Gather(table, indices.to_vec()), rg))
    }

    /// Mean squared difference between two equal-shape tensors.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let d = self.sub(pred, target)?;
        let sq = self.mul(d, d)?;
        self.mean(sq)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.data.len() != 1 {
            return Err(Error::contract(format!("backward needs a scalar loss, got shape {:?}", lv.shape)));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        // only differentiable nodes keep gradients
        for (g, n) in grads.iter_mut().zip(&self.nodes) {
            if !n.requires_grad {
                *g = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let val = |v: Var| &self.nodes[v.0].value;
        fn slot<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
            grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
        }

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (m, k, n) = (av.shape[0], av.shape[1], bv.shape[1]);
                if needs(*a) {
                    gemm_nt(g, &bv.data, slot(grads, *a, m * k), m, n, k);
                }
                if needs(*b) {
                    gemm_tn(&av.data, g, slot(grads, *b, k * n), m, k, n);
                }
            }
            Op::Transpose(a) => {
                if needs(*a) {
                    let (m, n) = (val(*a).shape[0], val(*a).shape[1]);
                    let ga = slot(grads, *a, m * n);
                    for i in 0..m {
                        for j in 0..n {
                            ga[i * n + j] += g[j * m + i];
                        }
                    }
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -T::one() } else { T::one() };
                if needs(*a) {
                    for (x, d) in slot(grads, *a, g.len()).iter_mut().zip(g) {
                        *x += *d;
                    }
                }
                if needs(*b) {
                    for (x, d) in slot(grads, *b, g.len()).iter_mut().zip(g) {
                        *x += sign * *d;
                    }
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let bv = val(*b).data.clone();
                    for ((x, d), y) in slot(grads, *a, g.len()).iter_mut().zip(g).zip(&bv) {
                        *x += *d * *y;
                    }
                }
                if needs(*b) {
                    let av = val(*a).data.clone();
                    for ((x, d), y) in slot(grads, *b, g.len()).iter_mut().zip(g).zip(&av) {
                        *x += *d * *y;
                    }
                }
            }
            Op::AddRow(a, b) => {
                if needs(*a) {
                    for (x, d) in slot(grads, *a, g.len()).iter_mut().zip(g) {
                        *x += *d;
                    }
                }
                if needs(*b) {
                    let n = val(*b).data.len();
                    let gb = slot(grads, *b, n);
                    for row in g.chunks(n) {
                        for (x, d) in gb.iter_mut().zip(row) {
                            *x += *d;
                        }
                    }
                }
            }
            Op::Scale(a, k) => {
                if needs(*a) {
                    for (x, d) in slot(grads, *a, g.len()).iter_mut().zip(g) {
                        *x += *d * *k;
                    }
                }
            }
            Op::Act(a, kind) => {
                if !needs(*a) {
                    return;
                }
                let y = &node.value.data;
                let ga = slot(grads, *a, g.len());
                match kind {
                    Activation::Sigmoid => {
                        for ((x, d), s) in ga.iter_mut().zip(g).zip(y) {
                            *x += *d * *s * (T::one() - *s);
                        }
                    }
                    Activation::Tanh => {
                        for ((x, d), t) in ga.iter_mut().zip(g).zip(y) {
                            *x += *d * (T::one() - *t * *t);
                        }
                    }
                    Activation::SoftmaxLastDim => {
                        let w = node.value.cols();
                        for ((gx, gd), s) in ga.chunks_mut(w).zip(g.chunks(w)).zip(y.chunks(w)) {
                            let dot: T = gd.iter().zip(s).map(|(d, si)| *d * *si).sum();
                            for ((x, d), si) in gx.iter_mut().zip(gd).zip(s) {
                                *x += *si * (*d - dot);
                            }
                        }
                    }
                }
            }
            Op::Concat(parts, axis) => {
                if *axis == 0 {
                    let mut off = 0;
                    for p in parts {
                        let len = val(*p).data.len();
                        if needs(*p) {
                            for (x, d) in slot(grads, *p, len).iter_mut().zip(&g[off..off + len]) {
                                *x += *d;
                            }
                        }
                        off += len;
                    }
                } else {
                    let rows = node.value.shape[0];
                    let total = node.value.shape[1];
                    let mut col = 0;
                    for p in parts {
                        let w = val(*p).shape[1];
                        if needs(*p) {
                            let gp = slot(grads, *p, rows * w);
                            for r in 0..rows {
                                for c in 0..w {
                                    gp[r * w + c] += g[r * total + col + c];
                                }
                            }
                        }
                        col += w;
                    }
                }
            }
            Op::SliceCols(a, start, width) => {
                if needs(*a) {
                    let (m, n) = (val(*a).shape[0], val(*a).shape[1]);
                    let ga = slot(grads, *a, m * n);
                    for i in 0..m {
                        for (x, d) in
                            ga[i * n + start..i * n + start + width].iter_mut().zip(&g[i * width..(i + 1) * width])
                        {
                            *x += *d;
                        }
                    }
                }
            }
            Op::ScaleRows(a, w) => {
                let n = val(*a).shape[1];
                if needs(*a) {
                    let wv = val(*w).data.clone();
                    let ga = slot(grads, *a, g.len());
                    for ((gx, gd), k) in ga.chunks_mut(n).zip(g.chunks(n)).zip(&wv) {
                        for (x, d) in gx.iter_mut().zip(gd) {
                            *x += *d * *k;
                        }
                    }
                }
                if needs(*w) {
                    let av = val(*a).data.clone();
                    let gw = slot(grads, *w, av.len() / n);
                    for ((x, gd), row) in gw.iter_mut().zip(g.chunks(n)).zip(av.chunks(n)) {
                        *x += gd.iter().zip(row).map(|(d, r)| *d * *r).sum();
                    }
                }
            }
            Op::SumLastDim(a) => {
                if needs(*a) {
                    let n = val(*a).shape[1];
                    let ga = slot(grads, *a, g.len() * n);
                    for (row, d) in ga.chunks_mut(n).zip(g) {
                        row.iter_mut().for_each(|x| *x += *d);
                    }
                }
            }
            Op::Sum(a) | Op::Mean(a) => {
                if needs(*a) {
                    let len = val(*a).data.len();
                    let d = if matches!(node.op, Op::Mean(_)) { g[0] / T::of(len as f64) } else { g[0] };
                    slot(grads, *a, len).iter_mut().for_each(|x| *x += d);
                }
            }
            Op::Gather(table, indices) => {
                if needs(*table) {
                    let tv = val(*table);
                    let d = tv.shape[1];
                    let gt = slot(grads, *table, tv.data.len());
                    for (row, &i) in g.chunks(d).zip(indices) {
                        for (x, v) in gt[i * d..(i + 1) * d].iter_mut().zip(row) {
                            *x += *v;
                        }
                    }
                }
            }
        }
    }

    /// Input references of node `v`, in recorded order. Used by tests that
    /// check the tape's topological order.
    pub fn inputs_of(&self, v: Var) -> Vec<Var> {
        self.nodes[v.0].op.inputs()
    }
}

/// Zeroes the gradient buffer of every tensor.
pub fn zero_grads<'a, T: Scalar + 'a>(params: impl IntoIterator<Item = &'a mut Tensor<T>>) {
    for p in params {
        p.zero_grad();
    }
}

/// Compares tape gradients with central finite differences.
///
/// `f` builds a scalar loss from leaves corresponding to `params` (same
/// order). Returns the maximum over all coordinates of
/// `|analytic - numeric| / max(1, |numeric|)`.
pub fn grad_check<T, F>(f: F, params: &[Tensor<T>], eps: T) -> Result<T>
where
    T: Scalar,
    F: Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
{
    if eps <= T::zero() {
        return Err(Error::contract("grad_check step must be positive"));
    }
    let eval = |ps: &[Tensor<T>]| -> Result<T> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.leaf(p)).collect();
        let loss = f(&mut tape, &vars)?;
        let v = tape.value(loss).item()?;
        if !v.is_finite() {
            return Err(Error::numeric("grad_check: non-finite loss"));
        }
        Ok(v)
    };

    let leaves: Vec<Tensor<T>> = params.iter().map(|p| p.clone().with_grad()).collect();
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|p| tape.leaf(p)).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let two = T::of(2.0);
    let mut worst = T::zero();
    let mut probe = leaves.clone();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads.get(*var);
        for ci in 0..probe[pi].len() {
            let orig = probe[pi].data[ci];
            probe[pi].data[ci] = orig + eps;
            let up = eval(&probe)?;
            probe[pi].data[ci] = orig - eps;
            let down = eval(&probe)?;
            probe[pi].data[ci] = orig;
            let numeric = (up - down) / (two * eps);
            let a = analytic.map_or(T::zero(), |g| g[ci]);
            let rel = (a - numeric).abs() / T::one().max(numeric.abs());
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
