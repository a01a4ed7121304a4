use std::sync::atomic::{AtomicU64, Ordering};

use super::Tensor;
use crate::error::{Error, Result};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a node inside one particular [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId {
    graph: u64,
    index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    /// Elementwise add; the right operand may be a `1 x n` row broadcast
    /// over every row of the left operand.
    Add(usize, usize),
    Sub(usize, usize),
    Hadamard(usize, usize),
    Scale(usize, f64),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    SoftmaxRows(usize),
    Concat(Vec<usize>, Axis),
    Slice(usize, Axis, usize, usize),
    SelectRows(usize, Vec<usize>),
    Transpose(usize),
    Mean(usize),
    Sum(usize),
    Mse(usize, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    trainable: bool,
    needs_grad: bool,
}

/// A single-owner computation tape. Nodes are appended in evaluation order,
/// so the node list is always topologically sorted.
#[derive(Debug)]
pub struct Graph {
    id: u64,
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to the trainable leaves.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<(NodeId, Tensor)>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.iter().find(|(k, _)| *k == id).map(|(_, g)| g)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &Tensor)> {
        self.grads.iter().map(|(k, g)| (*k, g))
    }

    /// Gradients for `ids`, in the same order.
    pub fn collect(&self, ids: &[NodeId]) -> Result<Vec<Tensor>> {
        ids.iter()
            .map(|id| {
                self.get(*id)
                    .cloned()
                    .ok_or_else(|| Error::Autodiff(format!("no gradient for node {}", id.index)))
            })
            .collect()
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn dims(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    if !t.is_matrix() {
        return Err(Error::shape(op, format!("expected a matrix, got {:?}", t.shape())));
    }
    Ok((t.shape()[0], t.shape()[1]))
}

fn finite(op: &'static str, data: Vec<f64>, shape: Vec<usize>) -> Result<Tensor> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { op });
    }
    Ok(Tensor::from_parts(shape, data))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn matmul_raw(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * m..(p + 1) * m];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], n: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[j * n + i] = a[i * m + j];
        }
    }
    out
}

impl Graph {
    pub fn new() -> Self {
        Self {
            id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, id: NodeId) -> Result<usize> {
        if id.graph != self.id || id.index >= self.nodes.len() {
            return Err(Error::Autodiff(format!(
                "node {} does not belong to this graph",
                id.index
            )));
        }
        Ok(id.index)
    }

    fn push(&mut self, value: Tensor, op: Op, trainable: bool) -> NodeId {
        let needs_grad = trainable
            || match &op {
                Op::Leaf => false,
                Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Hadamard(a, b) | Op::Mse(a, b) => {
                    self.nodes[*a].needs_grad || self.nodes[*b].needs_grad
                }
                Op::Scale(a, _)
                | Op::Tanh(a)
                | Op::Sigmoid(a)
                | Op::Relu(a)
                | Op::SoftmaxRows(a)
                | Op::Slice(a, ..)
                | Op::SelectRows(a, _)
                | Op::Transpose(a)
                | Op::Mean(a)
                | Op::Sum(a) => self.nodes[*a].needs_grad,
                Op::Concat(xs, _) => xs.iter().any(|x| self.nodes[*x].needs_grad),
            };
        self.nodes.push(Node {
            value,
            op,
            trainable,
            needs_grad,
        });
        NodeId {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// Trainable leaf: backward returns a gradient for it.
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Non-trainable leaf.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, id: NodeId) -> Result<&Tensor> {
        Ok(&self.nodes[self.idx(id)?].value)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (n, k) = dims(&self.nodes[ia].value, "matmul")?;
        let (k2, m) = dims(&self.nodes[ib].value, "matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", format!("[{n}, {k}] x [{k2}, {m}]")));
        }
        let out = matmul_raw(self.nodes[ia].value.data(), self.nodes[ib].value.data(), n, k, m);
        let t = finite("matmul", out, vec![n, m])?;
        Ok(self.push(t, Op::MatMul(ia, ib), false))
    }

    fn binary(
        &mut self,
        op_name: &'static str,
        a: NodeId,
        b: NodeId,
        allow_row_broadcast: bool,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(usize, usize, Tensor)> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (n, m) = dims(&self.nodes[ia].value, op_name)?;
        let (n2, m2) = dims(&self.nodes[ib].value, op_name)?;
        let av = self.nodes[ia].value.data();
        let bv = self.nodes[ib].value.data();
        let out: Vec<f64> = if (n, m) == (n2, m2) {
            av.iter().zip(bv).map(|(x, y)| f(*x, *y)).collect()
        } else if allow_row_broadcast && n2 == 1 && m == m2 {
            av.iter().enumerate().map(|(i, x)| f(*x, bv[i % m])).collect()
        } else {
            return Err(Error::shape(op_name, format!("[{n}, {m}] vs [{n2}, {m2}]")));
        };
        Ok((ia, ib, finite(op_name, out, vec![n, m])?))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ia, ib, t) = self.binary("add", a, b, true, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(ia, ib), false))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ia, ib, t) = self.binary("sub", a, b, true, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(ia, ib), false))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ia, ib, t) = self.binary("hadamard", a, b, false, |x, y| x * y)?;
        Ok(self.push(t, Op::Hadamard(ia, ib), false))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        let ia = self.idx(a)?;
        let v = &self.nodes[ia].value;
        let out = v.data().iter().map(|x| x * c).collect();
        let t = finite("scale", out, v.shape().to_vec())?;
        Ok(self.push(t, Op::Scale(ia, c), false))
    }

    fn unary(&mut self, op_name: &'static str, a: NodeId, f: impl Fn(f64) -> f64) -> Result<(usize, Tensor)> {
        let ia = self.idx(a)?;
        let v = &self.nodes[ia].value;
        dims(v, op_name)?;
        let out = v.data().iter().map(|x| f(*x)).collect();
        Ok((ia, finite(op_name, out, v.shape().to_vec())?))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        let (ia, t) = self.unary("tanh", a, f64::tanh)?;
        Ok(self.push(t, Op::Tanh(ia), false))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let (ia, t) = self.unary("sigmoid", a, sigmoid)?;
        Ok(self.push(t, Op::Sigmoid(ia), false))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let (ia, t) = self.unary("relu", a, |x| x.max(0.0))?;
        Ok(self.push(t, Op::Relu(ia), false))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> Result<NodeId> {
        let ia = self.idx(a)?;
        let v = &self.nodes[ia].value;
        let (n, m) = dims(v, "softmax_rows")?;
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let row = &v.data()[i * m..(i + 1) * m];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for (o, x) in out[i * m..(i + 1) * m].iter_mut().zip(row) {
                *o = (x - max).exp();
                z += *o;
            }
            for o in &mut out[i * m..(i + 1) * m] {
                *o /= z;
            }
        }
        let t = finite("softmax_rows", out, vec![n, m])?;
        Ok(self.push(t, Op::SoftmaxRows(ia), false))
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: Axis) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape("concat", "no inputs"));
        }
        let idxs = parts.iter().map(|p| self.idx(*p)).collect::<Result<Vec<_>>>()?;
        let shapes = idxs
            .iter()
            .map(|&i| dims(&self.nodes[i].value, "concat"))
            .collect::<Result<Vec<_>>>()?;
        let t = match axis {
            Axis::Rows => {
                let m = shapes[0].1;
                if shapes.iter().any(|s| s.1 != m) {
                    return Err(Error::shape("concat", format!("row concat of {shapes:?}")));
                }
                let n = shapes.iter().map(|s| s.0).sum();
                let mut data = Vec::with_capacity(n * m);
                for &i in &idxs {
                    data.extend_from_slice(self.nodes[i].value.data());
                }
                Tensor::from_parts(vec![n, m], data)
            }
            Axis::Cols => {
                let n = shapes[0].0;
                if shapes.iter().any(|s| s.0 != n) {
                    return Err(Error::shape("concat", format!("column concat of {shapes:?}")));
                }
                let m: usize = shapes.iter().map(|s| s.1).sum();
                let mut data = Vec::with_capacity(n * m);
                for r in 0..n {
                    for (&i, s) in idxs.iter().zip(&shapes) {
                        data.extend_from_slice(&self.nodes[i].value.data()[r * s.1..(r + 1) * s.1]);
                    }
                }
                Tensor::from_parts(vec![n, m], data)
            }
        };
        Ok(self.push(t, Op::Concat(idxs, axis), false))
    }

    /// Half-open range `start..end` along `axis`.
    pub fn slice(&mut self, a: NodeId, axis: Axis, start: usize, end: usize) -> Result<NodeId> {
        let ia = self.idx(a)?;
        let v = &self.nodes[ia].value;
        let (n, m) = dims(v, "slice")?;
        let limit = if axis == Axis::Rows { n } else { m };
        if start >= end || end > limit {
            return Err(Error::shape(
                "slice",
                format!("range {start}..{end} on axis {axis:?} of [{n}, {m}]"),
            ));
        }
        let t = match axis {
            Axis::Rows => Tensor::from_parts(vec![end - start, m], v.data()[start * m..end * m].to_vec()),
            Axis::Cols => {
                let w = end - start;
                let mut data = Vec::with_capacity(n * w);
                for r in 0..n {
                    data.extend_from_slice(&v.data()[r * m + start..r * m + end]);
                }
                Tensor::from_parts(vec![n, w], data)
            }
        };
        Ok(self.push(t, Op::Slice(ia, axis, start, end), false))
    }

    /// Gathers rows by index (indices may repeat).
    pub fn select_rows(&mut self, a: NodeId, rows: &[usize]) -> Result<NodeId> {
        let ia = self.idx(a)?;
        let v = &self.nodes[ia].value;
        let (n, m) = dims(v, "select_rows")?;
        if rows.is_empty() || rows.iter().any(|&r| r >= n) {
            return Err(Error::shape("select_rows", format!("indices {rows:?} for {n} rows")));
        }
        let mut data = Vec::with_capacity(rows.len() * m);
        for &r in rows {
            data.extend_from_slice(&v.data()[r * m..(r + 1) * m]);
        }
        let t = Tensor::from_parts(vec![rows.len(), m], data);
        Ok(self.push(t, Op::SelectRows(ia, rows.to_vec()), false))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let ia = self.idx(a)?;
        let v = &self.nodes[ia].value;
        let (n, m) = dims(v, "transpose")?;
        let t = Tensor::from_parts(vec![m, n], transpose_raw(v.data(), n, m));
        Ok(self.push(t, Op::Transpose(ia), false))
    }

    /// Mean of all elements, as a 1x1 tensor.
    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let ia = self.idx(a)?;
        let v = &self.nodes[ia].value;
        let s: f64 = v.data().iter().sum::<f64>() / v.len() as f64;
        let t = finite("mean", vec![s], vec![1, 1])?;
        Ok(self.push(t, Op::Mean(ia), false))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        let ia = self.idx(a)?;
        let v = &self.nodes[ia].value;
        let s: f64 = v.data().iter().sum();
        let t = finite("sum", vec![s], vec![1, 1])?;
        Ok(self.push(t, Op::Sum(ia), false))
    }

    /// Mean squared error between two equally shaped tensors.
    pub fn mse(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let (ip, it) = (self.idx(pred)?, self.idx(target)?);
        let (p, t) = (&self.nodes[ip].value, &self.nodes[it].value);
        if p.shape() != t.shape() {
            return Err(Error::shape("mse", format!("{:?} vs {:?}", p.shape(), t.shape())));
        }
        let s: f64 = p
            .data()
            .iter()
            .zip(t.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / p.len() as f64;
        let out = finite("mse", vec![s], vec![1, 1])?;
        Ok(self.push(out, Op::Mse(ip, it), false))
    }

    /// Reverse pass from a scalar `loss`. Returns one gradient per trainable
    /// leaf (zeros for leaves the loss does not depend on).
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let root = self.idx(loss)?;
        if self.nodes[root].value.len() != 1 {
            return Err(Error::Autodiff(format!(
                "loss must be scalar, got shape {:?}",
                self.nodes[root].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; root + 1];
        grads[root] = Some(vec![1.0]);

        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }

        let out = self
            .nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.trainable)
            .map(|(i, n)| {
                let g = grads
                    .get_mut(i)
                    .and_then(Option::take)
                    .unwrap_or_else(|| vec![0.0; n.value.len()]);
                (
                    NodeId {
                        graph: self.id,
                        index: i,
                    },
                    Tensor::from_parts(n.value.shape().to_vec(), g),
                )
            })
            .collect();
        Ok(Gradients { grads: out })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<f64>>], target: usize, g: Vec<f64>) {
        if !self.nodes[target].needs_grad {
            return;
        }
        match &mut grads[target] {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (&self.nodes[*a].value, &self.nodes[*b].value);
                let (n, k) = (av.shape()[0], av.shape()[1]);
                let m = bv.shape()[1];
                if self.nodes[*a].needs_grad {
                    let bt = transpose_raw(bv.data(), k, m);
                    self.accumulate(grads, *a, matmul_raw(g, &bt, n, m, k));
                }
                if self.nodes[*b].needs_grad {
                    let at = transpose_raw(av.data(), n, k);
                    self.accumulate(grads, *b, matmul_raw(&at, g, k, n, m));
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                self.accumulate(grads, *a, g.to_vec());
                let blen = self.nodes[*b].value.len();
                let gb = if blen == g.len() {
                    g.iter().map(|x| sign * x).collect()
                } else {
                    let mut acc = vec![0.0; blen];
                    for (j, x) in g.iter().enumerate() {
                        acc[j % blen] += sign * x;
                    }
                    acc
                };
                self.accumulate(grads, *b, gb);
            }
            Op::Hadamard(a, b) => {
                let (av, bv) = (self.nodes[*a].value.data(), self.nodes[*b].value.data());
                self.accumulate(grads, *a, g.iter().zip(bv).map(|(x, y)| x * y).collect());
                self.accumulate(grads, *b, g.iter().zip(av).map(|(x, y)| x * y).collect());
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g.iter().map(|x| x * c).collect()),
            Op::Tanh(a) => {
                let d = g.iter().zip(out).map(|(x, y)| x * (1.0 - y * y)).collect();
                self.accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => {
                let d = g.iter().zip(out).map(|(x, y)| x * y * (1.0 - y)).collect();
                self.accumulate(grads, *a, d);
            }
            Op::Relu(a) => {
                let inp = self.nodes[*a].value.data();
                let d = g
                    .iter()
                    .zip(inp)
                    .map(|(x, v)| if *v > 0.0 { *x } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, d);
            }
            Op::SoftmaxRows(a) => {
                let m = node.value.shape()[1];
                let mut d = vec![0.0; g.len()];
                for (r, (gr, yr)) in g.chunks(m).zip(out.chunks(m)).enumerate() {
                    let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                    for j in 0..m {
                        d[r * m + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::Concat(parts, axis) => {
                let (n, m) = (node.value.shape()[0], node.value.shape()[1]);
                match axis {
                    Axis::Rows => {
                        let mut offset = 0;
                        for &p in parts {
                            let len = self.nodes[p].value.len();
                            self.accumulate(grads, p, g[offset..offset + len].to_vec());
                            offset += len;
                        }
                    }
                    Axis::Cols => {
                        let mut col = 0;
                        for &p in parts {
                            let w = self.nodes[p].value.shape()[1];
                            let mut d = Vec::with_capacity(n * w);
                            for r in 0..n {
                                d.extend_from_slice(&g[r * m + col..r * m + col + w]);
                            }
                            self.accumulate(grads, p, d);
                            col += w;
                        }
                    }
                }
            }
            Op::Slice(a, axis, start, end) => {
                let src = &self.nodes[*a].value;
                let (n, m) = (src.shape()[0], src.shape()[1]);
                let mut d = vec![0.0; n * m];
                match axis {
                    Axis::Rows => d[start * m..end * m].copy_from_slice(g),
                    Axis::Cols => {
                        let w = end - start;
                        for r in 0..n {
                            d[r * m + start..r * m + end].copy_from_slice(&g[r * w..(r + 1) * w]);
                        }
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::SelectRows(a, rows) => {
                let src = &self.nodes[*a].value;
                let m = src.shape()[1];
                let mut d = vec![0.0; src.len()];
                for (k, &r) in rows.iter().enumerate() {
                    for j in 0..m {
                        d[r * m + j] += g[k * m + j];
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::Transpose(a) => {
                let (n, m) = (node.value.shape()[0], node.value.shape()[1]);
                self.accumulate(grads, *a, transpose_raw(g, n, m));
            }
            Op::Mean(a) => {
                let len = self.nodes[*a].value.len();
                self.accumulate(grads, *a, vec![g[0] / len as f64; len]);
            }
            Op::Sum(a) => {
                let len = self.nodes[*a].value.len();
                self.accumulate(grads, *a, vec![g[0]; len]);
            }
            Op::Mse(p, t) => {
                let (pv, tv) = (self.nodes[*p].value.data(), self.nodes[*t].value.data());
                let scale = 2.0 * g[0] / pv.len() as f64;
                let d: Vec<f64> = pv.iter().zip(tv).map(|(a, b)| scale * (a - b)).collect();
                if self.nodes[*t].needs_grad {
                    self.accumulate(grads, *t, d.iter().map(|x| -x).collect());
                }
                self.accumulate(grads, *p, d);
            }
        }
    }
}
