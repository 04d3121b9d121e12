//! Tape-based reverse-mode automatic differentiation.
//!
//! Every operation appends a node holding its forward value, so node order
//! is a topological order by construction. [`Graph::backward`] walks the
//! tape once in reverse. A graph is built for one forward pass and dropped
//! after its gradients have been read.

use super::{matmul_nt_raw, matmul_raw, matmul_tn_raw, Result, Tensor, TensorError};

/// Variance stabilizer inside the LayerNorm square root.
pub const LAYER_NORM_EPS: f64 = 1e-12;

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    RowSoftmax(NodeId),
    LayerNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gather {
        table: NodeId,
        ids: Vec<usize>,
    },
    MeanRows(NodeId),
    Sum(NodeId),
    CrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

/// Recorded computation: an ordered list of operation nodes.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::Shape {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn any_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Registers an input or parameter tensor.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        self.push(Op::Leaf, value, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, true)
    }

    /// Matrix product of `r×s` and `s×t` operands. Vectors are treated as
    /// single rows.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let (r, s) = av.dims2();
        let (s2, t) = bv.dims2();
        if s != s2 || av.shape().len() > 2 || bv.shape().len() > 2 {
            return Err(shape_err("matmul", av, bv));
        }
        let out = Tensor::from_parts(vec![r, t], matmul_raw(av.data(), bv.data(), r, s, t));
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), out, rg))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let (r, c) = av.dims2();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = av.data()[i * c + j];
            }
        }
        let rg = self.any_grad(&[a]);
        self.push(Op::Transpose(a), Tensor::from_parts(vec![c, r], data), rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("add", av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
        let out = Tensor::from_parts(av.shape().to_vec(), data);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Op::Add(a, b), out, rg))
    }

    /// Adds the vector `b` (length `c`) to every row of the `r×c` matrix `a`.
    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        let (_, c) = av.dims2();
        if bv.len() != c {
            return Err(shape_err("add_row", av, bv));
        }
        let data = av
            .data()
            .iter()
            .enumerate()
            .map(|(i, x)| x + bv.data()[i % c])
            .collect();
        let out = Tensor::from_parts(av.shape().to_vec(), data);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Op::AddRow(a, b), out, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("mul", av, bv));
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::from_parts(av.shape().to_vec(), data);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Op::Mul(a, b), out, rg))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let out = self.value(a).map(|x| x * factor);
        let rg = self.any_grad(&[a]);
        self.push(Op::Scale(a, factor), out, rg)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let rg = self.any_grad(&[a]);
        self.push(Op::Relu(a), out, rg)
    }

    /// Softmax along each row, with the row maximum subtracted first.
    pub fn row_softmax(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let (r, c) = av.dims2();
        let mut data = av.data().to_vec();
        for i in 0..r {
            softmax_in_place(&mut data[i * c..(i + 1) * c]);
        }
        let out = Tensor::from_parts(av.shape().to_vec(), data);
        let rg = self.any_grad(&[a]);
        self.push(Op::RowSoftmax(a), out, rg)
    }

    /// LayerNorm applied to each row of `a` with gain `gamma` and offset
    /// `beta`, using population variance plus [`LAYER_NORM_EPS`].
    pub fn layer_norm(&mut self, a: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        let (av, gv, bv) = (self.value(a), self.value(gamma), self.value(beta));
        let (r, d) = av.dims2();
        if gv.len() != d {
            return Err(shape_err("layer_norm", av, gv));
        }
        if bv.len() != d {
            return Err(shape_err("layer_norm", av, bv));
        }
        let mut normalized = vec![0.0; r * d];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * d];
        for i in 0..r {
            let row = &av.data()[i * d..(i + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[i] = is;
            for j in 0..d {
                let xh = (row[j] - mean) * is;
                normalized[i * d + j] = xh;
                out[i * d + j] = gv.data()[j] * xh + bv.data()[j];
            }
        }
        let out = Tensor::from_parts(av.shape().to_vec(), out);
        let rg = self.any_grad(&[a, gamma, beta]);
        Ok(self.push(
            Op::LayerNorm {
                input: a,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            out,
            rg,
        ))
    }

    /// Selects rows of `table` by index (embedding lookup).
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let tv = self.value(table);
        let (rows, d) = tv.dims2();
        if ids.is_empty() {
            return Err(TensorError::EmptyDimension(vec![0, d]));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= rows {
                return Err(TensorError::Index {
                    op: "gather",
                    index: id,
                    bound: rows,
                });
            }
            data.extend_from_slice(tv.row(id));
        }
        let out = Tensor::from_parts(vec![ids.len(), d], data);
        let rg = self.any_grad(&[table]);
        Ok(self.push(
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            out,
            rg,
        ))
    }

    /// Mean over rows: `r×c` to a length-`c` vector.
    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let av = self.value(a);
        let (r, c) = av.dims2();
        let mut data = vec![0.0; c];
        for i in 0..r {
            for (o, x) in data.iter_mut().zip(av.row(i)) {
                *o += x;
            }
        }
        for o in &mut data {
            *o /= r as f64;
        }
        let rg = self.any_grad(&[a]);
        self.push(Op::MeanRows(a), Tensor::from_parts(vec![c], data), rg)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).sum();
        let rg = self.any_grad(&[a]);
        self.push(Op::Sum(a), Tensor::scalar(s), rg)
    }

    /// Mean negative log-softmax of the labelled class over the rows of
    /// `logits` (`B×C`, or a single length-`C` vector).
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let lv = self.value(logits);
        let (b, c) = lv.dims2();
        if labels.len() != b {
            return Err(TensorError::Shape {
                op: "cross_entropy",
                lhs: lv.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        let mut probs = lv.data().to_vec();
        let mut total = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            if label >= c {
                return Err(TensorError::Index {
                    op: "cross_entropy",
                    index: label,
                    bound: c,
                });
            }
            let row = &lv.data()[i * c..(i + 1) * c];
            total += neg_log_softmax(row, label);
            softmax_in_place(&mut probs[i * c..(i + 1) * c]);
        }
        let out = Tensor::scalar(total / b as f64);
        let rg = self.any_grad(&[logits]);
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            out,
            rg,
        ))
    }

    /// Reverse-mode sweep from a scalar `loss`. Every node that requires a
    /// gradient and feeds `loss` receives one of its own shape.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &upstream, &mut grads);
            grads[idx] = Some(upstream);
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if !node.requires_grad {
                grads[idx] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut grads[id.0] {
            Some(g) => g.add_assign(&delta),
            slot => *slot = Some(delta),
        }
    }

    fn propagate(&self, node: &Node, up: &Tensor, grads: &mut [Option<Tensor>]) {
        let g = up.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (r, s) = av.dims2();
                let (_, t) = bv.dims2();
                if self.requires_grad(*a) {
                    let da = matmul_nt_raw(g, bv.data(), r, t, s);
                    self.accumulate(grads, *a, Tensor::from_parts(av.shape().to_vec(), da));
                }
                if self.requires_grad(*b) {
                    let db = matmul_tn_raw(av.data(), g, r, s, t);
                    self.accumulate(grads, *b, Tensor::from_parts(bv.shape().to_vec(), db));
                }
            }
            Op::Transpose(a) => {
                let av = self.value(*a);
                let (r, c) = av.dims2();
                let mut data = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        data[i * c + j] = g[j * r + i];
                    }
                }
                self.accumulate(grads, *a, Tensor::from_parts(av.shape().to_vec(), data));
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, up.clone());
                self.accumulate(grads, *b, up.clone());
            }
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, up.clone());
                if self.requires_grad(*b) {
                    let bv = self.value(*b);
                    let c = bv.len();
                    let mut db = vec![0.0; c];
                    for (i, x) in g.iter().enumerate() {
                        db[i % c] += x;
                    }
                    self.accumulate(grads, *b, Tensor::from_parts(bv.shape().to_vec(), db));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let da = g.iter().zip(bv.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *a, Tensor::from_parts(av.shape().to_vec(), da));
                }
                if self.requires_grad(*b) {
                    let db = g.iter().zip(av.data()).map(|(x, y)| x * y).collect();
                    self.accumulate(grads, *b, Tensor::from_parts(bv.shape().to_vec(), db));
                }
            }
            Op::Scale(a, factor) => {
                self.accumulate(grads, *a, up.map(|x| x * factor));
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                let da = g
                    .iter()
                    .zip(av.data())
                    .map(|(x, &v)| if v > 0.0 { *x } else { 0.0 })
                    .collect();
                self.accumulate(grads, *a, Tensor::from_parts(av.shape().to_vec(), da));
            }
            Op::RowSoftmax(a) => {
                let y = &node.value;
                let (r, c) = y.dims2();
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    let yr = y.row(i);
                    let gr = &g[i * c..(i + 1) * c];
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..c {
                        da[i * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(grads, *a, Tensor::from_parts(y.shape().to_vec(), da));
            }
            Op::LayerNorm {
                input,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let gv = self.value(*gamma);
                let (r, d) = node.value.dims2();
                if self.requires_grad(*gamma) {
                    let mut dg = vec![0.0; d];
                    for i in 0..r {
                        for j in 0..d {
                            dg[j] += g[i * d + j] * normalized[i * d + j];
                        }
                    }
                    self.accumulate(grads, *gamma, Tensor::from_parts(gv.shape().to_vec(), dg));
                }
                if self.requires_grad(*beta) {
                    let mut db = vec![0.0; d];
                    for i in 0..r {
                        for j in 0..d {
                            db[j] += g[i * d + j];
                        }
                    }
                    let bshape = self.value(*beta).shape().to_vec();
                    self.accumulate(grads, *beta, Tensor::from_parts(bshape, db));
                }
                if self.requires_grad(*input) {
                    let mut da = vec![0.0; r * d];
                    for i in 0..r {
                        let xh = &normalized[i * d..(i + 1) * d];
                        let dxh: Vec<f64> = (0..d).map(|j| g[i * d + j] * gv.data()[j]).collect();
                        let mean_dxh = dxh.iter().sum::<f64>() / d as f64;
                        let mean_dxh_xh = dxh.iter().zip(xh).map(|(p, q)| p * q).sum::<f64>() / d as f64;
                        for j in 0..d {
                            da[i * d + j] = inv_std[i] * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh);
                        }
                    }
                    let ashape = self.value(*input).shape().to_vec();
                    self.accumulate(grads, *input, Tensor::from_parts(ashape, da));
                }
            }
            Op::Gather { table, ids } => {
                let tv = self.value(*table);
                let (_, d) = tv.dims2();
                let mut dt = vec![0.0; tv.len()];
                for (i, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] += g[i * d + j];
                    }
                }
                self.accumulate(grads, *table, Tensor::from_parts(tv.shape().to_vec(), dt));
            }
            Op::MeanRows(a) => {
                let av = self.value(*a);
                let (r, c) = av.dims2();
                let mut da = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        da[i * c + j] = g[j] / r as f64;
                    }
                }
                self.accumulate(grads, *a, Tensor::from_parts(av.shape().to_vec(), da));
            }
            Op::Sum(a) => {
                let av = self.value(*a);
                self.accumulate(grads, *a, Tensor::filled(av.shape(), g[0]));
            }
            Op::CrossEntropy { logits, labels, probs } => {
                let lv = self.value(*logits);
                let (b, c) = lv.dims2();
                let scale = g[0] / b as f64;
                let mut dl: Vec<f64> = probs.iter().map(|p| p * scale).collect();
                for (i, &label) in labels.iter().enumerate() {
                    dl[i * c + label] -= scale;
                }
                self.accumulate(grads, *logits, Tensor::from_parts(lv.shape().to_vec(), dl));
            }
        }
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// `log_sum_exp(row) - row[label]`, written as `(max - row[label]) +
/// ln(1 + Σ_{j≠argmax} e^{row[j]-max})` so that near-zero losses keep full
/// relative precision.
fn neg_log_softmax(row: &[f64], label: usize) -> f64 {
    let mut arg = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[arg] {
            arg = j;
        }
    }
    let max = row[arg];
    let rest: f64 = row
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != arg)
        .map(|(_, v)| (v - max).exp())
        .sum();
    (max - row[label]) + rest.ln_1p()
}

#[cfg(test)]
fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
