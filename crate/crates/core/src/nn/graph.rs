//! Eager tape: every op computes its value when recorded, and `backward`
//! walks the tape in reverse to fill gradients. Rank-2 tensors only;
//! anything batched is expressed by stacking rows.

use std::collections::HashMap;

use super::store::ParameterStore;
use super::tensor::{NnError, TensorValue};

pub const LAYER_NORM_EPS: f32 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Const,
    Param(usize),
    MatMul(NodeId, NodeId),
    /// a [m,k] times b[n,k] transposed -> [m,n]
    MatMulNt(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    MulElem(NodeId, NodeId),
    MulScalar(NodeId, f32),
    Relu(NodeId),
    Log(NodeId),
    SumAll(NodeId),
    SoftmaxRows(NodeId),
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId },
    Reshape(NodeId),
    SliceRows { x: NodeId, start: usize, len: usize },
    SliceCols { x: NodeId, start: usize, len: usize },
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
}

struct Node {
    value: TensorValue,
    op: Op,
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    param_nodes: HashMap<usize, NodeId>,
}

// ---- matmul kernels (row-major, accumulate into out) ----

fn mm_nn_acc(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let brow = &b[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
}

fn mm_nt_acc(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (j, o) in orow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut s = 0.0;
            for (x, y) in arow.iter().zip(brow) {
                s += x * y;
            }
            *o += s;
        }
    }
}

fn mm_tn_acc(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av != 0.0 {
                let orow = &mut out[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += av * bv;
                }
            }
        }
    }
}

fn softmax_rows_masked(x: &TensorValue, mask: Option<&[bool]>) -> TensorValue {
    let (m, n) = x.dims2();
    let mut out = vec![0.0f32; m * n];
    let active = |j: usize| mask.map_or(true, |mk| mk[j]);
    let any_active = (0..n).any(active);
    if any_active {
        for i in 0..m {
            let row = &x.data()[i * n..(i + 1) * n];
            let mut mx = f32::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if active(j) && v > mx {
                    mx = v;
                }
            }
            let mut sum = 0.0f32;
            let orow = &mut out[i * n..(i + 1) * n];
            for (j, &v) in row.iter().enumerate() {
                if active(j) {
                    let e = (v - mx).exp();
                    orow[j] = e;
                    sum += e;
                }
            }
            for o in orow.iter_mut() {
                *o /= sum;
            }
        }
    }
    TensorValue::new(vec![m, n], out).unwrap()
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

    pub fn value(&self, id: NodeId) -> &TensorValue {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: TensorValue, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: TensorValue) -> NodeId {
        self.push(value, Op::Const)
    }

    pub fn scalar(&mut self, v: f32) -> NodeId {
        self.constant(TensorValue::scalar(v))
    }

    /// Leaf bound to a named parameter; one node per parameter per graph,
    /// so repeated uses share the same tape entry.
    pub fn param(&mut self, store: &ParameterStore, name: &str) -> Result<NodeId, NnError> {
        let idx = store.index_of(name)?;
        if let Some(&id) = self.param_nodes.get(&idx) {
            return Ok(id);
        }
        let id = self.push(store.slot(idx).value.clone(), Op::Param(idx));
        self.param_nodes.insert(idx, id);
        Ok(id)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let (m, ka) = self.value(a).dims2();
        let (kb, n) = self.value(b).dims2();
        if ka != kb {
            return Err(NnError::ShapeMismatch {
                op: "matmul",
                detail: format!("[{m},{ka}] x [{kb},{n}]"),
            });
        }
        let mut out = vec![0.0; m * n];
        mm_nn_acc(self.value(a).data(), self.value(b).data(), m, ka, n, &mut out);
        Ok(self.push(TensorValue::new(vec![m, n], out)?, Op::MatMul(a, b)))
    }

    /// a [m,k] times transpose of b [n,k] -> [m,n]
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let (m, ka) = self.value(a).dims2();
        let (n, kb) = self.value(b).dims2();
        if ka != kb {
            return Err(NnError::ShapeMismatch {
                op: "matmul_nt",
                detail: format!("[{m},{ka}] x [{n},{kb}]^T"),
            });
        }
        let mut out = vec![0.0; m * n];
        mm_nt_acc(self.value(a).data(), self.value(b).data(), m, ka, n, &mut out);
        Ok(self.push(TensorValue::new(vec![m, n], out)?, Op::MatMulNt(a, b)))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        self.zip_op("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        self.zip_op("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul_elem(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        self.zip_op("mul_elem", a, b, |x, y| x * y, Op::MulElem(a, b))
    }

    fn zip_op(
        &mut self,
        name: &'static str,
        a: NodeId,
        b: NodeId,
        f: impl Fn(f32, f32) -> f32,
        op: Op,
    ) -> Result<NodeId, NnError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(NnError::ShapeMismatch {
                op: name,
                detail: format!("{:?} vs {:?}", self.value(a).shape(), self.value(b).shape()),
            });
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.value(a).shape().to_vec();
        Ok(self.push(TensorValue::new(shape, data)?, op))
    }

    /// Broadcast a [1,n] bias over the rows of a [m,n] tensor.
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId, NnError> {
        let (m, n) = self.value(a).dims2();
        let (bm, bn) = self.value(bias).dims2();
        if bm != 1 || bn != n {
            return Err(NnError::ShapeMismatch {
                op: "add_bias",
                detail: format!("[{m},{n}] + [{bm},{bn}]"),
            });
        }
        let mut data = self.value(a).data().to_vec();
        let b = self.value(bias).data();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += b[j];
            }
        }
        Ok(self.push(TensorValue::new(vec![m, n], data)?, Op::AddBias(a, bias)))
    }

    /// Affine map x.W + b; the workhorse of every encoder and head.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    pub fn mul_scalar(&mut self, a: NodeId, c: f32) -> NodeId {
        let data = self.value(a).data().iter().map(|&x| x * c).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(TensorValue::new(shape, data).unwrap(), Op::MulScalar(a, c))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let data = self.value(a).data().iter().map(|&x| x.max(0.0)).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(TensorValue::new(shape, data).unwrap(), Op::Relu(a))
    }

    /// Elementwise natural log; inputs must be strictly positive.
    pub fn log(&mut self, a: NodeId) -> NodeId {
        let data = self.value(a).data().iter().map(|&x| x.ln()).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(TensorValue::new(shape, data).unwrap(), Op::Log(a))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f32 = self.value(a).data().iter().sum();
        self.push(TensorValue::scalar(s), Op::SumAll(a))
    }

    /// Row-wise softmax with max-subtraction. Masked columns get weight 0;
    /// if every column is masked the output rows are all zero.
    pub fn softmax_rows(&mut self, a: NodeId, mask: Option<Vec<bool>>) -> Result<NodeId, NnError> {
        let (_, n) = self.value(a).dims2();
        if let Some(mk) = &mask {
            if mk.len() != n {
                return Err(NnError::ShapeMismatch {
                    op: "softmax_rows",
                    detail: format!("mask len {} vs {} cols", mk.len(), n),
                });
            }
        }
        let value = softmax_rows_masked(self.value(a), mask.as_deref());
        Ok(self.push(value, Op::SoftmaxRows(a)))
    }

    /// Per-row normalization to zero mean and unit variance followed by a
    /// learned affine; gamma/beta are [1, n].
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId, NnError> {
        let (m, n) = self.value(x).dims2();
        for (nm, id) in [("gamma", gamma), ("beta", beta)] {
            let (bm, bn) = self.value(id).dims2();
            if bm != 1 || bn != n {
                return Err(NnError::ShapeMismatch {
                    op: "layer_norm",
                    detail: format!("{nm} [{bm},{bn}] vs cols {n}"),
                });
            }
        }
        let mut out = vec![0.0f32; m * n];
        {
            let xd = self.value(x).data();
            let g = self.value(gamma).data();
            let b = self.value(beta).data();
            for i in 0..m {
                let row = &xd[i * n..(i + 1) * n];
                let mean = row.iter().sum::<f32>() / n as f32;
                let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f32>() / n as f32;
                let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] = (row[j] - mean) * inv * g[j] + b[j];
                }
            }
        }
        Ok(self.push(TensorValue::new(vec![m, n], out)?, Op::LayerNorm { x, gamma, beta }))
    }

    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId, NnError> {
        let numel: usize = shape.iter().product();
        if numel != self.value(a).numel() {
            return Err(NnError::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {:?}", self.value(a).shape(), shape),
            });
        }
        let data = self.value(a).data().to_vec();
        Ok(self.push(TensorValue::new(shape, data)?, Op::Reshape(a)))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId, NnError> {
        let (m, n) = self.value(a).dims2();
        if start + len > m {
            return Err(NnError::ShapeMismatch {
                op: "slice_rows",
                detail: format!("rows {start}..{} of [{m},{n}]", start + len),
            });
        }
        let data = self.value(a).data()[start * n..(start + len) * n].to_vec();
        Ok(self.push(TensorValue::new(vec![len, n], data)?, Op::SliceRows { x: a, start, len }))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId, NnError> {
        let (m, n) = self.value(a).dims2();
        if start + len > n {
            return Err(NnError::ShapeMismatch {
                op: "slice_cols",
                detail: format!("cols {start}..{} of [{m},{n}]", start + len),
            });
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&src[i * n + start..i * n + start + len]);
        }
        Ok(self.push(TensorValue::new(vec![m, len], data)?, Op::SliceCols { x: a, start, len }))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId, NnError> {
        assert!(!parts.is_empty());
        let (_, n) = self.value(parts[0]).dims2();
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (pm, pn) = self.value(p).dims2();
            if pn != n {
                return Err(NnError::ShapeMismatch {
                    op: "concat_rows",
                    detail: format!("col widths differ: {pn} vs {n}"),
                });
            }
            rows += pm;
            data.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(TensorValue::new(vec![rows, n], data)?, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, NnError> {
        assert!(!parts.is_empty());
        let (m, _) = self.value(parts[0]).dims2();
        let mut widths = Vec::with_capacity(parts.len());
        let mut total = 0;
        for &p in parts {
            let (pm, pn) = self.value(p).dims2();
            if pm != m {
                return Err(NnError::ShapeMismatch {
                    op: "concat_cols",
                    detail: format!("row counts differ: {pm} vs {m}"),
                });
            }
            widths.push(pn);
            total += pn;
        }
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                let src = self.value(p).data();
                data.extend_from_slice(&src[i * w..(i + 1) * w]);
            }
        }
        Ok(self.push(TensorValue::new(vec![m, total], data)?, Op::ConcatCols(parts.to_vec())))
    }

    /// Reverse-mode sweep from a scalar loss; returns one gradient buffer
    /// per node.
    pub fn backward(&self, loss: NodeId) -> Result<Vec<Vec<f32>>, NnError> {
        let loss_value = self.value(loss);
        if !loss_value.is_scalar() {
            return Err(NnError::NotScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Vec<f32>> =
            self.nodes.iter().map(|n| vec![0.0; n.value.numel()]).collect();
        grads[loss.0][0] = 1.0;

        for idx in (0..self.nodes.len()).rev() {
            if grads[idx].iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = std::mem::take(&mut grads[idx]);
            let node = &self.nodes[idx];
            match &node.op {
                Op::Const | Op::Param(_) => {
                    grads[idx] = g;
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (m, k) = self.value(*a).dims2();
                    let (_, n) = self.value(*b).dims2();
                    mm_nt_acc(&g, self.value(*b).data(), m, n, k, &mut grads[a.0]);
                    mm_tn_acc(self.value(*a).data(), &g, m, k, n, &mut grads[b.0]);
                }
                Op::MatMulNt(a, b) => {
                    let (m, k) = self.value(*a).dims2();
                    let (n, _) = self.value(*b).dims2();
                    mm_nn_acc(&g, self.value(*b).data(), m, n, k, &mut grads[a.0]);
                    mm_tn_acc(&g, self.value(*a).data(), m, n, k, &mut grads[b.0]);
                }
                Op::AddBias(a, bias) => {
                    let (m, n) = self.value(*a).dims2();
                    for (ga, &gv) in grads[a.0].iter_mut().zip(&g) {
                        *ga += gv;
                    }
                    for i in 0..m {
                        for j in 0..n {
                            grads[bias.0][j] += g[i * n + j];
                        }
                    }
                }
                Op::Add(a, b) => {
                    for (ga, &gv) in grads[a.0].iter_mut().zip(&g) {
                        *ga += gv;
                    }
                    for (gb, &gv) in grads[b.0].iter_mut().zip(&g) {
                        *gb += gv;
                    }
                }
                Op::Sub(a, b) => {
                    for (ga, &gv) in grads[a.0].iter_mut().zip(&g) {
                        *ga += gv;
                    }
                    for (gb, &gv) in grads[b.0].iter_mut().zip(&g) {
                        *gb -= gv;
                    }
                }
                Op::MulElem(a, b) => {
                    // handles a == b (square) by accumulating both halves
                    for i in 0..g.len() {
                        grads[a.0][i] += g[i] * self.value(*b).data()[i];
                    }
                    for i in 0..g.len() {
                        grads[b.0][i] += g[i] * self.value(*a).data()[i];
                    }
                }
                Op::MulScalar(a, c) => {
                    for (ga, &gv) in grads[a.0].iter_mut().zip(&g) {
                        *ga += c * gv;
                    }
                }
                Op::Relu(a) => {
                    let x = self.value(*a).data();
                    for i in 0..g.len() {
                        if x[i] > 0.0 {
                            grads[a.0][i] += g[i];
                        }
                    }
                }
                Op::Log(a) => {
                    let x = self.value(*a).data();
                    for i in 0..g.len() {
                        grads[a.0][i] += g[i] / x[i];
                    }
                }
                Op::SumAll(a) => {
                    let gv = g[0];
                    for ga in grads[a.0].iter_mut() {
                        *ga += gv;
                    }
                }
                Op::SoftmaxRows(a) => {
                    let y = node.value.data();
                    let (m, n) = node.value.dims2();
                    for i in 0..m {
                        let yr = &y[i * n..(i + 1) * n];
                        let gr = &g[i * n..(i + 1) * n];
                        let dot: f32 = yr.iter().zip(gr).map(|(&yv, &gv)| yv * gv).sum();
                        let out = &mut grads[a.0][i * n..(i + 1) * n];
                        for j in 0..n {
                            out[j] += yr[j] * (gr[j] - dot);
                        }
                    }
                }
                Op::LayerNorm { x, gamma, beta } => {
                    let (m, n) = self.value(*x).dims2();
                    let xd = self.value(*x).data();
                    let gd = self.value(*gamma).data();
                    for i in 0..m {
                        let row = &xd[i * n..(i + 1) * n];
                        let gr = &g[i * n..(i + 1) * n];
                        let mean = row.iter().sum::<f32>() / n as f32;
                        let var =
                            row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f32>() / n as f32;
                        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                        let mut sum_dxhat = 0.0f32;
                        let mut sum_dxhat_xhat = 0.0f32;
                        for j in 0..n {
                            let xhat = (row[j] - mean) * inv;
                            let dxhat = gr[j] * gd[j];
                            sum_dxhat += dxhat;
                            sum_dxhat_xhat += dxhat * xhat;
                            grads[gamma.0][j] += gr[j] * xhat;
                            grads[beta.0][j] += gr[j];
                        }
                        let out = &mut grads[x.0][i * n..(i + 1) * n];
                        for j in 0..n {
                            let xhat = (row[j] - mean) * inv;
                            let dxhat = gr[j] * gd[j];
                            out[j] += inv
                                * (dxhat - sum_dxhat / n as f32 - xhat * sum_dxhat_xhat / n as f32);
                        }
                    }
                }
                Op::Reshape(a) => {
                    for (ga, &gv) in grads[a.0].iter_mut().zip(&g) {
                        *ga += gv;
                    }
                }
                Op::SliceRows { x, start, len } => {
                    let (_, n) = self.value(*x).dims2();
                    let dst = &mut grads[x.0][start * n..(start + len) * n];
                    for (d, &gv) in dst.iter_mut().zip(&g) {
                        *d += gv;
                    }
                }
                Op::SliceCols { x, start, len } => {
                    let (m, n) = self.value(*x).dims2();
                    for i in 0..m {
                        for j in 0..*len {
                            grads[x.0][i * n + start + j] += g[i * len + j];
                        }
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let numel = self.value(p).numel();
                        let src = &g[offset..offset + numel];
                        for (d, &gv) in grads[p.0].iter_mut().zip(src) {
                            *d += gv;
                        }
                        offset += numel;
                    }
                }
                Op::ConcatCols(parts) => {
                    let (m, _) = node.value.dims2();
                    let total: usize = node.value.dims2().1;
                    let mut offset = 0;
                    for &p in parts {
                        let (_, w) = self.value(p).dims2();
                        for i in 0..m {
                            for j in 0..w {
                                grads[p.0][i * w + j] += g[i * total + offset + j];
                            }
                        }
                        offset += w;
                    }
                }
            }
            grads[idx] = g;
        }
        Ok(grads)
    }

    /// Sign pattern of every ReLU input in tape order. Gradient checks
    /// compare patterns across perturbed evaluations: a changed sign
    /// means the sweep crossed a kink and the difference quotient is not
    /// an estimate of the gradient there.
    pub fn relu_input_signs(&self) -> Vec<bool> {
        let mut signs = Vec::new();
        for node in &self.nodes {
            if let Op::Relu(a) = node.op {
                signs.extend(self.value(a).data().iter().map(|&v| v > 0.0));
            }
        }
        signs
    }

    /// Backward plus accumulation of parameter gradients into the store.
    /// Parameters that never entered the graph keep their current (zero)
    /// gradient.
    pub fn backward_into(&self, loss: NodeId, store: &mut ParameterStore) -> Result<(), NnError> {
        let grads = self.backward(loss)?;
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Param(slot) = node.op {
                store.accumulate_grad(slot, &grads[idx]);
            }
        }
        store.mark_grads_ready();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::super::store::Init;
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn t(rows: &[Vec<f32>]) -> TensorValue {
        TensorValue::from_rows(rows)
    }

    #[test]
    fn linear_identity_weights() {
        let mut g = Graph::new();
        let x = g.constant(t(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.5, 0.0]]));
        let w = g.constant(t(&[
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ]));
        let b = g.constant(t(&[vec![0.0, 0.0, 0.0]]));
        let y = g.linear(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), g.value(x).data());
    }

    #[test]
    fn linear_zero_input_broadcasts_bias() {
        let mut g = Graph::new();
        let x = g.constant(TensorValue::zeros(vec![3, 2]));
        let w = g.constant(TensorValue::zeros(vec![2, 4]));
        let b = g.constant(t(&[vec![0.5, -1.0, 2.0, 0.25]]));
        let y = g.linear(x, w, b).unwrap();
        for i in 0..3 {
            assert_eq!(&g.value(y).data()[i * 4..(i + 1) * 4], &[0.5, -1.0, 2.0, 0.25]);
        }
    }

    // Oracle: nested-loop matmul, written independently of the kernels.
    fn matmul_oracle(a: &[Vec<f32>], b: &[Vec<f32>]) -> Vec<Vec<f32>> {
        let (m, k, n) = (a.len(), b.len(), b[0].len());
        let mut out = vec![vec![0.0f32; n]; m];
        for i in 0..m {
            for j in 0..n {
                let mut acc = 0.0f64;
                for p in 0..k {
                    acc += a[i][p] as f64 * b[p][j] as f64;
                }
                out[i][j] = acc as f32;
            }
        }
        out
    }

    #[test]
    fn linear_random_case_matches_loop_oracle() {
        let mut rng = seeded(99);
        let mut next = |_: ()| crate::rng::uniform(&mut rng, -2.0, 2.0) as f32;
        let a: Vec<Vec<f32>> = (0..3).map(|_| (0..4).map(|_| next(())).collect()).collect();
        let b: Vec<Vec<f32>> = (0..4).map(|_| (0..2).map(|_| next(())).collect()).collect();
        let bias: Vec<f32> = (0..2).map(|_| next(())).collect();

        let mut g = Graph::new();
        let xa = g.constant(t(&a));
        let xb = g.constant(t(&b));
        let xbias = g.constant(t(&[bias.clone()]));
        let y = g.linear(xa, xb, xbias).unwrap();

        let want = matmul_oracle(&a, &b);
        for i in 0..3 {
            for j in 0..2 {
                let got = g.value(y).data()[i * 2 + j];
                assert!((got - (want[i][j] + bias[j])).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut g = Graph::new();
        let a = g.constant(TensorValue::zeros(vec![2, 3]));
        let b = g.constant(TensorValue::zeros(vec![4, 2]));
        assert!(matches!(g.matmul(a, b), Err(NnError::ShapeMismatch { .. })));
    }

    #[test]
    fn softmax_equal_logits() {
        let mut g = Graph::new();
        let x = g.constant(t(&[vec![3.0, 3.0, 3.0, 3.0]]));
        let y = g.softmax_rows(x, None).unwrap();
        for &v in g.value(y).data() {
            assert!((v - 0.25).abs() < 1e-7);
        }
    }

    #[test]
    fn softmax_extreme_logits_stable() {
        let mut g = Graph::new();
        let x = g.constant(t(&[vec![1000.0, 0.0]]));
        let y = g.softmax_rows(x, None).unwrap();
        let d = g.value(y).data();
        assert!(d.iter().all(|v| v.is_finite()));
        assert!((d[0] - 1.0).abs() < 1e-6);
        assert!(d[1].abs() < 1e-6);
    }

    #[test]
    fn softmax_matches_exp_sum_oracle() {
        let logits = [0.3f64, -1.2, 2.0];
        // oracle: direct exp/sum in f64
        let exps: Vec<f64> = logits.iter().map(|v| v.exp()).collect();
        let total: f64 = exps.iter().sum();
        let want: Vec<f64> = exps.iter().map(|e| e / total).collect();

        let mut g = Graph::new();
        let x = g.constant(t(&[logits.iter().map(|&v| v as f32).collect()]));
        let y = g.softmax_rows(x, None).unwrap();
        for (got, want) in g.value(y).data().iter().zip(&want) {
            assert!((*got as f64 - want).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_fully_masked_rows_are_zero() {
        let mut g = Graph::new();
        let x = g.constant(t(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let y = g.softmax_rows(x, Some(vec![false, false])).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn layer_norm_constant_row_is_beta() {
        let mut g = Graph::new();
        let x = g.constant(t(&[vec![5.0, 5.0, 5.0, 5.0]]));
        let gamma = g.constant(t(&[vec![1.0; 4]]));
        let beta = g.constant(t(&[vec![0.0; 4]]));
        let y = g.layer_norm(x, gamma, beta).unwrap();
        for &v in g.value(y).data() {
            assert!(v.abs() < 1e-6);
        }
    }

    #[test]
    fn layer_norm_already_normalized_row() {
        let mut g = Graph::new();
        let x = g.constant(t(&[vec![-1.0, 1.0]]));
        let gamma = g.constant(t(&[vec![1.0, 1.0]]));
        let beta = g.constant(t(&[vec![0.0, 0.0]]));
        let y = g.layer_norm(x, gamma, beta).unwrap();
        let d = g.value(y).data();
        assert!((d[0] + 1.0).abs() < 1e-4);
        assert!((d[1] - 1.0).abs() < 1e-4);
    }

    #[test]
    fn layer_norm_matches_mean_variance_oracle() {
        let row = [0.3f64, -0.9, 2.2, 0.05, -1.4];
        let mean: f64 = row.iter().sum::<f64>() / 5.0;
        let var: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 5.0;
        let want: Vec<f64> = row
            .iter()
            .map(|v| (v - mean) / (var + LAYER_NORM_EPS as f64).sqrt() * 2.0 + 0.5)
            .collect();

        let mut g = Graph::new();
        let x = g.constant(t(&[row.iter().map(|&v| v as f32).collect()]));
        let gamma = g.constant(t(&[vec![2.0; 5]]));
        let beta = g.constant(t(&[vec![0.5; 5]]));
        let y = g.layer_norm(x, gamma, beta).unwrap();
        for (got, want) in g.value(y).data().iter().zip(&want) {
            assert!((*got as f64 - want).abs() < 1e-6);
        }
    }

    #[test]
    fn backward_of_sum_is_ones() {
        let mut rng = seeded(1);
        let mut store = ParameterStore::new();
        store.define("w", vec![2, 3], Init::Uniform { scale: 1.0 }, &mut rng).unwrap();
        let mut g = Graph::new();
        let w = g.param(&store, "w").unwrap();
        let loss = g.sum_all(w);
        store.zero_grads();
        g.backward_into(loss, &mut store).unwrap();
        assert_eq!(store.grad("w").unwrap(), &[1.0; 6]);
    }

    #[test]
    fn backward_unreachable_parameter_gets_zero() {
        let mut rng = seeded(1);
        let mut store = ParameterStore::new();
        store.define("w", vec![2, 2], Init::Uniform { scale: 1.0 }, &mut rng).unwrap();
        store.define("u", vec![2, 2], Init::Uniform { scale: 1.0 }, &mut rng).unwrap();
        let mut g = Graph::new();
        let w = g.param(&store, "w").unwrap();
        let loss = g.sum_all(w);
        store.zero_grads();
        g.backward_into(loss, &mut store).unwrap();
        assert_eq!(store.grad("u").unwrap(), &[0.0; 4]);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let x = g.constant(TensorValue::zeros(vec![2, 2]));
        assert_eq!(g.backward(x).unwrap_err(), NnError::NotScalarLoss(vec![2, 2]));
    }

    #[test]
    fn composite_loss_matches_finite_differences() {
        // linear -> softmax -> weighted sum, checked against central
        // differences with h = 1e-3
        let mut rng = seeded(7);
        let mut store = ParameterStore::new();
        store.define("w", vec![3, 4], Init::Uniform { scale: 0.6 }, &mut rng).unwrap();
        store.define("b", vec![1, 4], Init::Uniform { scale: 0.6 }, &mut rng).unwrap();

        let build = |g: &mut Graph, store: &ParameterStore| {
            let x = g.constant(t(&[vec![0.4, -0.2, 0.9], vec![-0.6, 0.35, 0.1]]));
            let w = g.param(store, "w").unwrap();
            let b = g.param(store, "b").unwrap();
            let y = g.linear(x, w, b).unwrap();
            let p = g.softmax_rows(y, None).unwrap();
            let mix = g.constant(t(&[
                vec![0.7, -0.3, 0.45, 0.2],
                vec![-0.15, 0.9, 0.05, -0.5],
            ]));
            let weighted = g.mul_elem(p, mix).unwrap();
            g.sum_all(weighted)
        };

        super::super::gradcheck::check_against_finite_differences(
            &mut store,
            &build,
            &["w", "b"],
            64,
            1e-3,
            1e-3,
            &mut seeded(3),
        )
        .unwrap();
    }

    proptest! {
        #[test]
        fn softmax_rows_form_a_simplex(rows in proptest::collection::vec(
            proptest::collection::vec(-30.0f32..30.0, 5), 1..6)) {
            let mut g = Graph::new();
            let x = g.constant(t(&rows));
            let y = g.softmax_rows(x, None).unwrap();
            let (m, n) = g.value(y).dims2();
            for i in 0..m {
                let row = &g.value(y).data()[i*n..(i+1)*n];
                let sum: f32 = row.iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-6);
                prop_assert!(row.iter().all(|&v| v > 0.0 && v < 1.0 + 1e-6));
            }
        }
    }
}
