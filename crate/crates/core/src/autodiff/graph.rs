use std::collections::HashMap;

use super::params::{ParamGrads, ParamId, ParamStore};
use super::tensor::{matrix_dims, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Operation kinds recorded on the graph.
#[derive(Clone, Debug)]
pub enum OpKind {
    Input,
    Param(ParamId),
    MatMul(Var, Var),
    /// Second operand is broadcast over the first (`1 x k`, `m x 1` or `1 x 1`).
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat { inputs: Vec<Var>, axis: usize },
    Tanh(Var),
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    SoftmaxRows(Var),
    LogSumExpRows(Var),
    GatherRows(Var, Vec<usize>),
    GatherElems(Var, Vec<usize>),
    SliceCols { input: Var, start: usize, end: usize },
    DropoutMask(Var, Vec<f64>),
    Sum(Var),
    Reshape(Var),
    Transpose(Var),
}

impl OpKind {
    fn name(&self) -> &'static str {
        match self {
            OpKind::Input => "input",
            OpKind::Param(_) => "param",
            OpKind::MatMul(..) => "matmul",
            OpKind::Add(..) => "add",
            OpKind::Sub(..) => "sub",
            OpKind::Mul(..) => "mul",
            OpKind::Scale(..) => "scale",
            OpKind::Concat { .. } => "concat",
            OpKind::Tanh(_) => "tanh",
            OpKind::Relu(_) => "relu",
            OpKind::Sigmoid(_) => "sigmoid",
            OpKind::Softplus(_) => "softplus",
            OpKind::SoftmaxRows(_) => "softmax_rows",
            OpKind::LogSumExpRows(_) => "log_sum_exp_rows",
            OpKind::GatherRows(..) => "gather_rows",
            OpKind::GatherElems(..) => "gather_elems",
            OpKind::SliceCols { .. } => "slice_cols",
            OpKind::DropoutMask(..) => "dropout_mask_apply",
            OpKind::Sum(_) => "scalar_sum",
            OpKind::Reshape(_) => "reshape",
            OpKind::Transpose(_) => "transpose",
        }
    }
}

struct Node {
    op: OpKind,
    /// `None` for parameter leaves, whose value lives in the store.
    value: Option<Tensor>,
    requires_grad: bool,
}

/// A tape of operations in topological order.
///
/// Every node's inputs precede it, so a reverse sweep is a valid
/// backward schedule.
pub struct Graph<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

static EMPTY_STORE: ParamStore = ParamStore::new();

impl Graph<'static> {
    /// A graph with no parameter store; all leaves are inputs.
    pub fn standalone() -> Self {
        Graph::new(&EMPTY_STORE)
    }
}

impl<'s> Graph<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, OpKind::Param(id)) => self.store.value(*id),
            _ => unreachable!("non-param node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    /// Scalar value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    pub fn op(&self, v: Var) -> &OpKind {
        &self.nodes[v.0].op
    }

    fn push(&mut self, op: OpKind, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value: Some(value),
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(OpKind::Input, value, false)
    }

    /// A leaf whose gradient is reported by [`Gradients::wrt`].
    pub fn input(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(OpKind::Input, value, requires_grad)
    }

    /// The leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let requires_grad = self.store.get(id).trainable;
        self.nodes.push(Node {
            op: OpKind::Param(id),
            value: None,
            requires_grad,
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars.insert(id, v);
        v
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        matrix_dims(self.shape(v))
    }

    fn shape_err(&self, op: &'static str, a: Var, b: Var) -> Error {
        Error::Shape {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() > 2 || sb.len() > 2 {
            return Err(self.shape_err("matmul", a, b));
        }
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(self.shape_err("matmul", a, b));
        }
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            OpKind::MatMul(a, b),
            Tensor::new(vec![m, n], out)?,
            rg,
        ))
    }

    fn broadcast_check(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize, usize, usize)> {
        let (m, n) = self.dims(a);
        let (bm, bn) = self.dims(b);
        let ok = (bm == m || bm == 1) && (bn == n || bn == 1);
        if !ok || (self.shape(b).len() > 2 && self.shape(a) != self.shape(b)) {
            return Err(self.shape_err(op, a, b));
        }
        Ok((m, n, bm, bn))
    }

    fn broadcast_binary(
        &mut self,
        op: OpKind,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let (m, n, bm, bn) = self.broadcast_check(op.name(), a, b)?;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            let br = if bm == 1 { 0 } else { r };
            for c in 0..n {
                let bc = if bn == 1 { 0 } else { c };
                out.push(f(av[r * n + c], bv[br * bn + bc]));
            }
        }
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(op, Tensor::new(shape, out)?, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary(OpKind::Add(a, b), a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_binary(OpKind::Sub(a, b), a, b, |x, y| x - y)
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(self.shape_err("mul", a, b));
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(OpKind::Mul(a, b), Tensor::new(shape, out)?, rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.unary(OpKind::Scale(a, factor), a, |x| x * factor)
    }

    fn unary(&mut self, op: OpKind, a: Var, f: impl Fn(f64) -> f64) -> Var {
        let t = self.value(a);
        let out: Vec<f64> = t.data().iter().map(|&x| f(x)).collect();
        let value = Tensor::new(t.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(a);
        self.push(op, value, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(OpKind::Tanh(a), a, f64::tanh)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(OpKind::Relu(a), a, |x| x.max(0.0))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(OpKind::Sigmoid(a), a, sigmoid)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(OpKind::Softplus(a), a, softplus)
    }

    /// Concatenate 2-d tensors along rows (`axis = 0`) or columns (`axis = 1`).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs
            .first()
            .ok_or_else(|| Error::InvalidTensor("concat of zero tensors".into()))?;
        if axis > 1 {
            return Err(Error::InvalidTensor(format!("concat axis {axis} unsupported")));
        }
        let (m0, n0) = self.dims(first);
        for &v in inputs {
            let (m, n) = self.dims(v);
            if self.shape(v).len() > 2 || (axis == 1 && m != m0) || (axis == 0 && n != n0) {
                return Err(self.shape_err("concat", first, v));
            }
        }
        let (out, shape) = if axis == 0 {
            let mut out = Vec::new();
            for &v in inputs {
                out.extend_from_slice(self.value(v).data());
            }
            let rows = out.len() / n0;
            (out, vec![rows, n0])
        } else {
            let total: usize = inputs.iter().map(|&v| self.dims(v).1).sum();
            let mut out = Vec::with_capacity(m0 * total);
            for r in 0..m0 {
                for &v in inputs {
                    out.extend_from_slice(self.value(v).row_slice(r));
                }
            }
            (out, vec![m0, total])
        };
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            OpKind::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            Tensor::new(shape, out)?,
            rg,
        ))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (m, n) = matrix_dims(t.shape());
        let mut out = Vec::with_capacity(m * n);
        for r in 0..m {
            let row = t.row_slice(r);
            let lse = log_sum_exp(row);
            out.extend(row.iter().map(|x| (x - lse).exp()));
        }
        let value = Tensor::new(t.shape().to_vec(), out).expect("same shape");
        let rg = self.rg(a);
        self.push(OpKind::SoftmaxRows(a), value, rg)
    }

    /// Row-wise `log Σ exp`, returning an `m x 1` column.
    pub fn log_sum_exp_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let m = t.rows();
        let out: Vec<f64> = (0..m).map(|r| log_sum_exp(t.row_slice(r))).collect();
        let value = Tensor::new(vec![m, 1], out).expect("column");
        let rg = self.rg(a);
        self.push(OpKind::LogSumExpRows(a), value, rg)
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = matrix_dims(t.shape());
        if indices.is_empty() {
            return Err(Error::InvalidTensor("gather_rows with no indices".into()));
        }
        let mut out = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            if i >= m {
                return Err(Error::OutOfRange {
                    context: "gather_rows",
                    index: i,
                    len: m,
                });
            }
            out.extend_from_slice(t.row_slice(i));
        }
        let rg = self.rg(a);
        Ok(self.push(
            OpKind::GatherRows(a, indices.to_vec()),
            Tensor::new(vec![indices.len(), n], out)?,
            rg,
        ))
    }

    /// Pick entries by flat row-major index into a `1 x len` row.
    pub fn gather_elems(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let data = self.value(a).data();
        if indices.is_empty() {
            return Err(Error::InvalidTensor("gather_elems with no indices".into()));
        }
        let mut out = Vec::with_capacity(indices.len());
        for &i in indices {
            out.push(*data.get(i).ok_or(Error::OutOfRange {
                context: "gather_elems",
                index: i,
                len: data.len(),
            })?);
        }
        let rg = self.rg(a);
        Ok(self.push(
            OpKind::GatherElems(a, indices.to_vec()),
            Tensor::row(out),
            rg,
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        let (m, n) = matrix_dims(t.shape());
        if start >= end || end > n {
            return Err(Error::Shape {
                op: "slice_cols",
                left: t.shape().to_vec(),
                right: vec![start, end],
            });
        }
        let mut out = Vec::with_capacity(m * (end - start));
        for r in 0..m {
            out.extend_from_slice(&t.row_slice(r)[start..end]);
        }
        let rg = self.rg(a);
        Ok(self.push(
            OpKind::SliceCols { input: a, start, end },
            Tensor::new(vec![m, end - start], out)?,
            rg,
        ))
    }

    /// Multiply by a caller-supplied mask (already scaled for inverted dropout).
    pub fn dropout_mask_apply(&mut self, a: Var, mask: &Tensor) -> Result<Var> {
        if self.shape(a) != mask.shape() {
            return Err(Error::Shape {
                op: "dropout_mask_apply",
                left: self.shape(a).to_vec(),
                right: mask.shape().to_vec(),
            });
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(mask.data())
            .map(|(x, m)| x * m)
            .collect();
        let shape = self.shape(a).to_vec();
        let rg = self.rg(a);
        Ok(self.push(
            OpKind::DropoutMask(a, mask.data().to_vec()),
            Tensor::new(shape, out)?,
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(OpKind::Sum(a), Tensor::scalar(s), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let t = self.value(a).clone().reshape(shape.to_vec())?;
        let rg = self.rg(a);
        Ok(self.push(OpKind::Reshape(a), t, rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        if self.shape(a).len() > 2 {
            return Err(Error::InvalidTensor("transpose of rank > 2 tensor".into()));
        }
        let t = self.value(a);
        let (m, n) = matrix_dims(t.shape());
        let d = t.data();
        let mut out = vec![0.0; m * n];
        for r in 0..m {
            for c in 0..n {
                out[c * m + r] = d[r * n + c];
            }
        }
        let rg = self.rg(a);
        Ok(self.push(OpKind::Transpose(a), Tensor::new(vec![n, m], out)?, rg))
    }

    /// Reverse sweep from a scalar loss.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if !self.value(loss).is_scalar() {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(vec![0.0; self.value(v).numel()]);
        }
        f(slot.as_mut().expect("initialized"));
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let out = node.value.as_ref();
        match &node.op {
            OpKind::Input | OpKind::Param(_) => {}
            OpKind::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                self.accumulate(grads, *a, |ga| {
                    // ga += g · bᵀ
                    for i in 0..m {
                        for j in 0..n {
                            let gij = g[i * n + j];
                            if gij == 0.0 {
                                continue;
                            }
                            let brow = j;
                            for p in 0..k {
                                ga[i * k + p] += gij * bv[p * n + brow];
                            }
                        }
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    // gb += aᵀ · g
                    for i in 0..m {
                        for p in 0..k {
                            let aip = av[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            let grow = &g[i * n..(i + 1) * n];
                            let gbrow = &mut gb[p * n..(p + 1) * n];
                            for (dst, &x) in gbrow.iter_mut().zip(grow) {
                                *dst += aip * x;
                            }
                        }
                    }
                });
            }
            OpKind::Add(a, b) | OpKind::Sub(a, b) => {
                let sign = if matches!(node.op, OpKind::Sub(..)) { -1.0 } else { 1.0 };
                self.accumulate(grads, *a, |ga| {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                });
                let (m, n) = self.dims(*a);
                let (bm, bn) = self.dims(*b);
                self.accumulate(grads, *b, |gb| {
                    for r in 0..m {
                        let br = if bm == 1 { 0 } else { r };
                        for c in 0..n {
                            let bc = if bn == 1 { 0 } else { c };
                            gb[br * bn + bc] += sign * g[r * n + c];
                        }
                    }
                });
            }
            OpKind::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                self.accumulate(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * bv[i];
                    }
                });
                self.accumulate(grads, *b, |gb| {
                    for i in 0..gb.len() {
                        gb[i] += g[i] * av[i];
                    }
                });
            }
            OpKind::Scale(a, c) => {
                self.accumulate(grads, *a, |ga| {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += c * y);
                });
            }
            OpKind::Concat { inputs, axis } => {
                let (_, total) = matrix_dims(out.expect("value").shape());
                if *axis == 0 {
                    let mut offset = 0;
                    for &v in inputs {
                        let len = self.value(v).numel();
                        self.accumulate(grads, v, |gv| {
                            gv.iter_mut()
                                .zip(&g[offset..offset + len])
                                .for_each(|(x, y)| *x += y);
                        });
                        offset += len;
                    }
                } else {
                    let mut col = 0;
                    for &v in inputs {
                        let (m, n) = self.dims(v);
                        self.accumulate(grads, v, |gv| {
                            for r in 0..m {
                                for c in 0..n {
                                    gv[r * n + c] += g[r * total + col + c];
                                }
                            }
                        });
                        col += n;
                    }
                }
            }
            OpKind::Tanh(a) => {
                let y = out.expect("value").data();
                self.accumulate(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                });
            }
            OpKind::Relu(a) => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        if x[i] > 0.0 {
                            ga[i] += g[i];
                        }
                    }
                });
            }
            OpKind::Sigmoid(a) => {
                let y = out.expect("value").data();
                self.accumulate(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                });
            }
            OpKind::Softplus(a) => {
                let x = self.value(*a).data();
                self.accumulate(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * sigmoid(x[i]);
                    }
                });
            }
            OpKind::SoftmaxRows(a) => {
                let y = out.expect("value");
                let (m, n) = matrix_dims(y.shape());
                let yv = y.data();
                self.accumulate(grads, *a, |ga| {
                    for r in 0..m {
                        let row = r * n..(r + 1) * n;
                        let dot: f64 = g[row.clone()].iter().zip(&yv[row.clone()]).map(|(a, b)| a * b).sum();
                        for i in row {
                            ga[i] += yv[i] * (g[i] - dot);
                        }
                    }
                });
            }
            OpKind::LogSumExpRows(a) => {
                let x = self.value(*a);
                let (m, n) = matrix_dims(x.shape());
                let lse = out.expect("value").data();
                let xv = x.data();
                self.accumulate(grads, *a, |ga| {
                    for r in 0..m {
                        for c in 0..n {
                            let i = r * n + c;
                            ga[i] += g[r] * (xv[i] - lse[r]).exp();
                        }
                    }
                });
            }
            OpKind::GatherRows(a, indices) => {
                let n = self.dims(*a).1;
                self.accumulate(grads, *a, |ga| {
                    for (r, &src) in indices.iter().enumerate() {
                        for c in 0..n {
                            ga[src * n + c] += g[r * n + c];
                        }
                    }
                });
            }
            OpKind::GatherElems(a, indices) => {
                self.accumulate(grads, *a, |ga| {
                    for (r, &src) in indices.iter().enumerate() {
                        ga[src] += g[r];
                    }
                });
            }
            OpKind::SliceCols { input, start, end } => {
                let (m, n) = self.dims(*input);
                let w = end - start;
                self.accumulate(grads, *input, |ga| {
                    for r in 0..m {
                        for c in 0..w {
                            ga[r * n + start + c] += g[r * w + c];
                        }
                    }
                });
            }
            OpKind::DropoutMask(a, mask) => {
                self.accumulate(grads, *a, |ga| {
                    for i in 0..ga.len() {
                        ga[i] += g[i] * mask[i];
                    }
                });
            }
            OpKind::Sum(a) => {
                self.accumulate(grads, *a, |ga| ga.iter_mut().for_each(|x| *x += g[0]));
            }
            OpKind::Reshape(a) => {
                self.accumulate(grads, *a, |ga| {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
                });
            }
            OpKind::Transpose(a) => {
                let (m, n) = self.dims(*a);
                self.accumulate(grads, *a, |ga| {
                    for r in 0..m {
                        for c in 0..n {
                            ga[r * n + c] += g[c * m + r];
                        }
                    }
                });
            }
        }
    }
}

/// Result of [`Graph::backward`]: the gradient of the loss at every node
/// that requires one.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Collect parameter gradients, keyed by the store's ids.
    pub fn param_grads(&self, graph: &Graph<'_>) -> ParamGrads {
        let mut out = ParamGrads::zeros_like(graph.store);
        for (&id, &v) in &graph.param_vars {
            if let Some(g) = self.wrt(v) {
                out.accumulate(id, g);
            }
        }
        out
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `log Σ exp(x)` with the max-shift trick.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &x) in orow.iter_mut().zip(brow) {
                *o += aip * x;
            }
        }
    }
    out
}
