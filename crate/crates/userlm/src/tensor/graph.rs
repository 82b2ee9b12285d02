//! Define-by-run reverse-mode differentiation on an index-arena graph.
//!
//! A [`Graph`] is rebuilt for every forward pass. Each operation validates
//! shapes, computes its value eagerly, and records what the backward sweep
//! needs. [`Graph::backward`] walks the arena in reverse creation order
//! (which is a topological order, since an op can only reference earlier
//! nodes) and applies hand-derived vector-Jacobian products, accumulating
//! gradients across all uses of a node. A graph can be differentiated once;
//! the sweep consumes the op records.

use super::{BoolMat, Tensor, TensorError};

/// Handle to a node in a [`Graph`] arena.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Neg(NodeId),
    Scale(NodeId, f64),
    Matmul(NodeId, NodeId),
    Transpose(NodeId),
    BiasAdd { x: NodeId, bias: NodeId },
    Gelu(NodeId),
    /// Plain or masked softmax over the last dimension. Backward only needs
    /// the output, which lives in the node's value; masked entries are exact
    /// zeros there, so the same formula covers both.
    Softmax(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        /// Normalized activations, saved by forward.
        xhat: Vec<f64>,
        /// 1/sqrt(var + eps) per row, saved by forward.
        inv_sigma: Vec<f64>,
    },
    SumAll(NodeId),
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        /// Which rows count toward the mean (targets not equal to the
        /// ignored id).
        counted: Vec<bool>,
        /// Softmax of the logits, saved by forward.
        probs: Vec<f64>,
        /// Number of counted rows.
        active: usize,
    },
    EmbedLookup { table: NodeId, ids: Vec<usize> },
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceRows { x: NodeId, start: usize },
    SliceCols { x: NodeId, start: usize },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Arena holding one forward pass worth of nodes.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for kk in 0..k {
            let aik = a[i * k + kk];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[kk * n..(kk + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += aik * brow[j];
            }
        }
    }
    out
}

fn transpose_raw(a: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j];
        }
    }
    out
}

/// Hyperbolic-tangent approximation of the Gaussian error linear unit.
pub fn gelu_scalar(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

/// Derivative of [`gelu_scalar`].
pub fn gelu_grad_scalar(x: f64) -> f64 {
    const C: f64 = 0.7978845608028654;
    let u = C * (x + 0.044715 * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * 0.044715 * x * x)
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, requires_grad: bool, op: Op) -> NodeId {
        self.nodes.push(Node { value, grad: None, requires_grad, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf that participates in differentiation (a parameter).
    pub fn param(&mut self, t: Tensor) -> NodeId {
        self.push(t, true, Op::Leaf)
    }

    /// Leaf excluded from differentiation (data, masks rendered as values).
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(t, false, Op::Leaf)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last backward root with respect to this node, if the
    /// node was reached.
    pub fn grad(&self, id: NodeId) -> Option<Tensor> {
        let node = &self.nodes[id.0];
        node.grad.as_ref().map(|g| {
            Tensor::new(node.value.shape().to_vec(), g.clone()).expect("grad matches value shape")
        })
    }

    pub fn grad_data(&self, id: NodeId) -> Option<&[f64]> {
        self.nodes[id.0].grad.as_deref()
    }

    fn requires(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    // ---- elementwise ----

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), TensorError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(TensorError::BinaryShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape("add", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.requires(&[a, b]);
        Ok(self.push(t, rg, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape("sub", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.requires(&[a, b]);
        Ok(self.push(t, rg, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        self.same_shape("mul", a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.requires(&[a, b]);
        Ok(self.push(t, rg, Op::Mul(a, b)))
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let data = self.value(a).data().iter().map(|x| -x).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data).expect("same shape");
        let rg = self.requires(&[a]);
        self.push(t, rg, Op::Neg(a))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let data = self.value(a).data().iter().map(|x| c * x).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data).expect("same shape");
        let rg = self.requires(&[a]);
        self.push(t, rg, Op::Scale(a, c))
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let data = self.value(a).data().iter().map(|&x| gelu_scalar(x)).collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data).expect("same shape");
        let rg = self.requires(&[a]);
        self.push(t, rg, Op::Gelu(a))
    }

    // ---- linear algebra ----

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TensorError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.shape()[1] != bv.shape()[0] {
            return Err(TensorError::MatmulShape {
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let (m, k) = (av.shape()[0], av.shape()[1]);
        let n = bv.shape()[1];
        let data = matmul_raw(av.data(), bv.data(), m, k, n);
        let t = Tensor::new(vec![m, n], data)?;
        let rg = self.requires(&[a, b]);
        Ok(self.push(t, rg, Op::Matmul(a, b)))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let av = self.value(a);
        let (r, c) = av.dims2().map_err(|_| TensorError::RankMismatch {
            op: "transpose",
            expected: 2,
            got: av.shape().to_vec(),
        })?;
        let t = Tensor::new(vec![c, r], transpose_raw(av.data(), r, c))?;
        let rg = self.requires(&[a]);
        Ok(self.push(t, rg, Op::Transpose(a)))
    }

    /// Add a length-C bias vector to every row of an R-by-C matrix. The only
    /// broadcast this graph performs, kept explicit as its own op.
    pub fn bias_add(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId, TensorError> {
        let xv = self.value(x);
        let bv = self.value(bias);
        let (r, c) = xv.dims2()?;
        if bv.rank() != 1 || bv.shape()[0] != c {
            return Err(TensorError::BinaryShapeMismatch {
                op: "bias_add",
                lhs: xv.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let mut data = xv.data().to_vec();
        for i in 0..r {
            for j in 0..c {
                data[i * c + j] += bv.data()[j];
            }
        }
        let t = Tensor::new(vec![r, c], data)?;
        let rg = self.requires(&[x, bias]);
        Ok(self.push(t, rg, Op::BiasAdd { x, bias }))
    }

    // ---- normalization and attention plumbing ----

    fn check_finite(&self, op: &'static str, id: NodeId) -> Result<(), TensorError> {
        if let Some((index, value)) = self.value(id).first_non_finite() {
            return Err(TensorError::NonFinite { op, index, value });
        }
        Ok(())
    }

    /// Softmax over the last dimension of a rank-1 or rank-2 tensor.
    /// Rejects non-finite inputs instead of silently saturating.
    pub fn softmax_lastdim(&mut self, a: NodeId) -> Result<NodeId, TensorError> {
        let av = self.value(a);
        let (rows, cols) = match av.rank() {
            1 => (1, av.shape()[0]),
            2 => (av.shape()[0], av.shape()[1]),
            _ => {
                return Err(TensorError::RankMismatch {
                    op: "softmax",
                    expected: 2,
                    got: av.shape().to_vec(),
                })
            }
        };
        if cols == 0 {
            return Err(TensorError::BadDimension {
                msg: "softmax over an empty dimension".into(),
            });
        }
        self.check_finite("softmax", a)?;
        let x = self.value(a).data();
        let mut data = vec![0.0; rows * cols];
        for i in 0..rows {
            let row = &x[i * cols..(i + 1) * cols];
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for j in 0..cols {
                let e = (row[j] - m).exp();
                data[i * cols + j] = e;
                denom += e;
            }
            for j in 0..cols {
                data[i * cols + j] /= denom;
            }
        }
        let t = Tensor::new(self.value(a).shape().to_vec(), data)?;
        let rg = self.requires(&[a]);
        Ok(self.push(t, rg, Op::Softmax(a)))
    }

    /// Softmax over each row with blocked entries forced to probability zero.
    /// Blocking happens inside the op, so no infinity is ever materialized in
    /// a tensor. A row with every key blocked is an error.
    pub fn masked_softmax(&mut self, a: NodeId, mask: &BoolMat) -> Result<NodeId, TensorError> {
        let av = self.value(a);
        let (rows, cols) = av.dims2().map_err(|_| TensorError::RankMismatch {
            op: "masked softmax",
            expected: 2,
            got: av.shape().to_vec(),
        })?;
        if mask.rows() != rows || mask.cols() != cols {
            return Err(TensorError::BinaryShapeMismatch {
                op: "masked softmax",
                lhs: vec![rows, cols],
                rhs: vec![mask.rows(), mask.cols()],
            });
        }
        if let Some(row) = mask.first_fully_blocked_row() {
            return Err(TensorError::AllMaskedRow { row });
        }
        self.check_finite("masked softmax", a)?;
        let x = self.value(a).data();
        let mut data = vec![0.0; rows * cols];
        for i in 0..rows {
            let mut m = f64::NEG_INFINITY;
            for j in 0..cols {
                if !mask.is_blocked(i, j) {
                    m = m.max(x[i * cols + j]);
                }
            }
            let mut denom = 0.0;
            for j in 0..cols {
                if !mask.is_blocked(i, j) {
                    let e = (x[i * cols + j] - m).exp();
                    data[i * cols + j] = e;
                    denom += e;
                }
            }
            for j in 0..cols {
                data[i * cols + j] /= denom;
            }
        }
        let t = Tensor::new(vec![rows, cols], data)?;
        let rg = self.requires(&[a]);
        Ok(self.push(t, rg, Op::Softmax(a)))
    }

    /// Per-row layer normalization with learned gain and bias:
    /// `y = gain * (x - mean) / sqrt(var + eps) + bias`, variance taken as the
    /// population variance over the row.
    pub fn layer_norm(
        &mut self,
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        eps: f64,
    ) -> Result<NodeId, TensorError> {
        let xv = self.value(x);
        let (r, c) = xv.dims2()?;
        if c == 0 {
            return Err(TensorError::BadDimension { msg: "layer_norm over width 0".into() });
        }
        for (name, id) in [("gain", gain), ("bias", bias)] {
            let v = self.value(id);
            if v.rank() != 1 || v.shape()[0] != c {
                return Err(TensorError::BinaryShapeMismatch {
                    op: if name == "gain" { "layer_norm gain" } else { "layer_norm bias" },
                    lhs: vec![r, c],
                    rhs: v.shape().to_vec(),
                });
            }
        }
        if eps < 0.0 {
            return Err(TensorError::BadDimension { msg: format!("layer_norm eps {eps} < 0") });
        }
        let xd = self.value(x).data();
        let gd = self.value(gain).data();
        let bd = self.value(bias).data();
        let mut data = vec![0.0; r * c];
        let mut xhat = vec![0.0; r * c];
        let mut inv_sigma = vec![0.0; r];
        for i in 0..r {
            let row = &xd[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_sigma[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                data[i * c + j] = gd[j] * h + bd[j];
            }
        }
        let t = Tensor::new(vec![r, c], data)?;
        let rg = self.requires(&[x, gain, bias]);
        Ok(self.push(t, rg, Op::LayerNorm { x, gain, bias, xhat, inv_sigma }))
    }

    // ---- reductions and losses ----

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.value(a).data().iter().sum();
        let rg = self.requires(&[a]);
        self.push(Tensor::scalar(s), rg, Op::SumAll(a))
    }

    /// Arithmetic mean of all entries, composed from sum and scale.
    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.value(a).numel().max(1);
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Mean cross-entropy between rows of `logits` and integer `targets`,
    /// fused with the log-softmax for stability. Rows whose target equals
    /// `ignore` (padding) are excluded from the mean.
    pub fn cross_entropy_mean(
        &mut self,
        logits: NodeId,
        targets: &[usize],
        ignore: Option<usize>,
    ) -> Result<NodeId, TensorError> {
        let lv = self.value(logits);
        let (m, v) = lv.dims2().map_err(|_| TensorError::RankMismatch {
            op: "cross_entropy",
            expected: 2,
            got: lv.shape().to_vec(),
        })?;
        if targets.len() != m {
            return Err(TensorError::BinaryShapeMismatch {
                op: "cross_entropy",
                lhs: vec![m, v],
                rhs: vec![targets.len()],
            });
        }
        self.check_finite("cross_entropy", logits)?;
        let mut counted = vec![false; m];
        let mut active = 0usize;
        for (i, &t) in targets.iter().enumerate() {
            if Some(t) == ignore {
                continue;
            }
            if t >= v {
                return Err(TensorError::BadTokenId { id: t, vocab: v });
            }
            counted[i] = true;
            active += 1;
        }
        if active == 0 {
            return Err(TensorError::BadDimension {
                msg: "cross_entropy: every target is the ignored id".into(),
            });
        }
        let x = self.value(logits).data();
        let mut probs = vec![0.0; m * v];
        let mut total = 0.0;
        for i in 0..m {
            let row = &x[i * v..(i + 1) * v];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for j in 0..v {
                let e = (row[j] - mx).exp();
                probs[i * v + j] = e;
                denom += e;
            }
            for j in 0..v {
                probs[i * v + j] /= denom;
            }
            if counted[i] {
                // log-sum-exp minus the target logit, all relative to mx.
                total += denom.ln() + mx - row[targets[i]];
            }
        }
        let loss = total / active as f64;
        let rg = self.requires(&[logits]);
        Ok(self.push(
            Tensor::scalar(loss),
            rg,
            Op::CrossEntropy { logits, targets: targets.to_vec(), counted, probs, active },
        ))
    }

    /// Gather rows of an embedding table by token id.
    pub fn embed_lookup(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId, TensorError> {
        let tv = self.value(table);
        let (vocab, dim) = tv.dims2().map_err(|_| TensorError::RankMismatch {
            op: "embed_lookup",
            expected: 2,
            got: tv.shape().to_vec(),
        })?;
        for &id in ids {
            if id >= vocab {
                return Err(TensorError::BadTokenId { id, vocab });
            }
        }
        let src = self.value(table).data();
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            data.extend_from_slice(&src[id * dim..(id + 1) * dim]);
        }
        let t = Tensor::new(vec![ids.len(), dim], data)?;
        let rg = self.requires(&[table]);
        Ok(self.push(t, rg, Op::EmbedLookup { table, ids: ids.to_vec() }))
    }

    // ---- stacking and slicing ----

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> Result<NodeId, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::BadDimension { msg: "concat_rows of zero tensors".into() });
        }
        let (_, c) = self.value(parts[0]).dims2()?;
        let mut rows = 0;
        for &p in parts {
            let (pr, pc) = self.value(p).dims2()?;
            if pc != c {
                return Err(TensorError::BinaryShapeMismatch {
                    op: "concat_rows",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
            rows += pr;
        }
        let mut data = Vec::with_capacity(rows * c);
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let t = Tensor::new(vec![rows, c], data)?;
        let rg = self.requires(parts);
        Ok(self.push(t, rg, Op::ConcatRows(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId, TensorError> {
        let (r, c) = self.value(x).dims2()?;
        if len == 0 || start + len > r {
            return Err(TensorError::IndexOutOfBounds {
                op: "slice_rows",
                index: start + len,
                bound: r,
            });
        }
        let data = self.value(x).data()[start * c..(start + len) * c].to_vec();
        let t = Tensor::new(vec![len, c], data)?;
        let rg = self.requires(&[x]);
        Ok(self.push(t, rg, Op::SliceRows { x, start }))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, TensorError> {
        if parts.is_empty() {
            return Err(TensorError::BadDimension { msg: "concat_cols of zero tensors".into() });
        }
        let (r, _) = self.value(parts[0]).dims2()?;
        let mut cols = 0;
        for &p in parts {
            let (pr, pc) = self.value(p).dims2()?;
            if pr != r {
                return Err(TensorError::BinaryShapeMismatch {
                    op: "concat_cols",
                    lhs: self.value(parts[0]).shape().to_vec(),
                    rhs: self.value(p).shape().to_vec(),
                });
            }
            cols += pc;
        }
        let mut data = vec![0.0; r * cols];
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            let pc = pv.shape()[1];
            for i in 0..r {
                data[i * cols + offset..i * cols + offset + pc]
                    .copy_from_slice(&pv.data()[i * pc..(i + 1) * pc]);
            }
            offset += pc;
        }
        let t = Tensor::new(vec![r, cols], data)?;
        let rg = self.requires(parts);
        Ok(self.push(t, rg, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_cols(&mut self, x: NodeId, start: usize, len: usize) -> Result<NodeId, TensorError> {
        let (r, c) = self.value(x).dims2()?;
        if len == 0 || start + len > c {
            return Err(TensorError::IndexOutOfBounds {
                op: "slice_cols",
                index: start + len,
                bound: c,
            });
        }
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let t = Tensor::new(vec![r, len], data)?;
        let rg = self.requires(&[x]);
        Ok(self.push(t, rg, Op::SliceCols { x, start }))
    }

    // ---- backward ----

    /// Reverse sweep from a scalar root. Gradients accumulate across every
    /// use of a node; op records are consumed, so a graph differentiates once.
    pub fn backward(&mut self, root: NodeId) -> Result<(), TensorError> {
        if self.backward_done {
            return Err(TensorError::GraphState {
                msg: "backward already ran on this graph".into(),
            });
        }
        if self.nodes[root.0].value.numel() != 1 {
            return Err(TensorError::GraphState {
                msg: format!(
                    "backward root must be a scalar, got shape {:?}",
                    self.nodes[root.0].value.shape()
                ),
            });
        }
        if !self.nodes[root.0].requires_grad {
            return Err(TensorError::GraphState {
                msg: "backward root does not depend on any parameter".into(),
            });
        }
        self.backward_done = true;
        self.nodes[root.0].grad = Some(vec![1.0]);

        for idx in (0..=root.0).rev() {
            if !self.nodes[idx].requires_grad || self.nodes[idx].grad.is_none() {
                continue;
            }
            let op = std::mem::replace(&mut self.nodes[idx].op, Op::Leaf);
            let out_grad = self.nodes[idx].grad.clone().expect("checked above");
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    self.accumulate(a, &out_grad);
                    self.accumulate(b, &out_grad);
                }
                Op::Sub(a, b) => {
                    self.accumulate(a, &out_grad);
                    let neg: Vec<f64> = out_grad.iter().map(|g| -g).collect();
                    self.accumulate(b, &neg);
                }
                Op::Mul(a, b) => {
                    let da: Vec<f64> = out_grad
                        .iter()
                        .zip(self.nodes[b.0].value.data())
                        .map(|(g, y)| g * y)
                        .collect();
                    let db: Vec<f64> = out_grad
                        .iter()
                        .zip(self.nodes[a.0].value.data())
                        .map(|(g, x)| g * x)
                        .collect();
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::Neg(a) => {
                    let da: Vec<f64> = out_grad.iter().map(|g| -g).collect();
                    self.accumulate(a, &da);
                }
                Op::Scale(a, c) => {
                    let da: Vec<f64> = out_grad.iter().map(|g| c * g).collect();
                    self.accumulate(a, &da);
                }
                Op::Matmul(a, b) => {
                    // C = A B  =>  dA = dC B^T,  dB = A^T dC
                    let (m, k) = (self.nodes[a.0].value.shape()[0], self.nodes[a.0].value.shape()[1]);
                    let n = self.nodes[b.0].value.shape()[1];
                    let bt = transpose_raw(self.nodes[b.0].value.data(), k, n);
                    let da = matmul_raw(&out_grad, &bt, m, n, k);
                    let at = transpose_raw(self.nodes[a.0].value.data(), m, k);
                    let db = matmul_raw(&at, &out_grad, k, m, n);
                    self.accumulate(a, &da);
                    self.accumulate(b, &db);
                }
                Op::Transpose(a) => {
                    let (r, c) = (self.nodes[a.0].value.shape()[0], self.nodes[a.0].value.shape()[1]);
                    // out is c-by-r, so transpose the gradient back.
                    let da = transpose_raw(&out_grad, c, r);
                    self.accumulate(a, &da);
                }
                Op::BiasAdd { x, bias } => {
                    let (r, c) = (self.nodes[x.0].value.shape()[0], self.nodes[x.0].value.shape()[1]);
                    self.accumulate(x, &out_grad);
                    let mut db = vec![0.0; c];
                    for i in 0..r {
                        for j in 0..c {
                            db[j] += out_grad[i * c + j];
                        }
                    }
                    self.accumulate(bias, &db);
                }
                Op::Gelu(a) => {
                    let da: Vec<f64> = self.nodes[a.0]
                        .value
                        .data()
                        .iter()
                        .zip(&out_grad)
                        .map(|(&x, g)| g * gelu_grad_scalar(x))
                        .collect();
                    self.accumulate(a, &da);
                }
                Op::Softmax(a) => {
                    // dx_j = y_j * (dy_j - sum_k dy_k y_k), per row. Masked
                    // entries have y = 0 and receive zero gradient.
                    let shape = self.nodes[idx].value.shape().to_vec();
                    let (rows, cols) = if shape.len() == 1 {
                        (1, shape[0])
                    } else {
                        (shape[0], shape[1])
                    };
                    let y = self.nodes[idx].value.data();
                    let mut da = vec![0.0; rows * cols];
                    for i in 0..rows {
                        let yr = &y[i * cols..(i + 1) * cols];
                        let gr = &out_grad[i * cols..(i + 1) * cols];
                        let dot: f64 = yr.iter().zip(gr).map(|(yj, gj)| yj * gj).sum();
                        for j in 0..cols {
                            da[i * cols + j] = yr[j] * (gr[j] - dot);
                        }
                    }
                    self.accumulate(a, &da);
                }
                Op::LayerNorm { x, gain, bias, xhat, inv_sigma } => {
                    let (r, c) = (self.nodes[x.0].value.shape()[0], self.nodes[x.0].value.shape()[1]);
                    let gd = self.nodes[gain.0].value.data().to_vec();
                    let mut dgain = vec![0.0; c];
                    let mut dbias = vec![0.0; c];
                    let mut dx = vec![0.0; r * c];
                    for i in 0..r {
                        let h = &xhat[i * c..(i + 1) * c];
                        let g = &out_grad[i * c..(i + 1) * c];
                        // dxhat = dy * gain; then with population statistics:
                        // dx = inv_sigma * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..c {
                            let dh = g[j] * gd[j];
                            mean_dh += dh;
                            mean_dh_h += dh * h[j];
                            dgain[j] += g[j] * h[j];
                            dbias[j] += g[j];
                        }
                        mean_dh /= c as f64;
                        mean_dh_h /= c as f64;
                        for j in 0..c {
                            let dh = g[j] * gd[j];
                            dx[i * c + j] = inv_sigma[i] * (dh - mean_dh - h[j] * mean_dh_h);
                        }
                    }
                    self.accumulate(x, &dx);
                    self.accumulate(gain, &dgain);
                    self.accumulate(bias, &dbias);
                }
                Op::SumAll(a) => {
                    let n = self.nodes[a.0].value.numel();
                    let da = vec![out_grad[0]; n];
                    self.accumulate(a, &da);
                }
                Op::CrossEntropy { logits, targets, counted, probs, active } => {
                    // d logits = (softmax - onehot) / active on counted rows.
                    let v = self.nodes[logits.0].value.shape()[1];
                    let scale = out_grad[0] / active as f64;
                    let mut dl = vec![0.0; probs.len()];
                    for (i, &is_counted) in counted.iter().enumerate() {
                        if !is_counted {
                            continue;
                        }
                        for j in 0..v {
                            let onehot = if j == targets[i] { 1.0 } else { 0.0 };
                            dl[i * v + j] = (probs[i * v + j] - onehot) * scale;
                        }
                    }
                    self.accumulate(logits, &dl);
                }
                Op::EmbedLookup { table, ids } => {
                    let dim = self.nodes[table.0].value.shape()[1];
                    let numel = self.nodes[table.0].value.numel();
                    let mut dt = vec![0.0; numel];
                    for (row, &id) in ids.iter().enumerate() {
                        for j in 0..dim {
                            dt[id * dim + j] += out_grad[row * dim + j];
                        }
                    }
                    self.accumulate(table, &dt);
                }
                Op::ConcatRows(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let numel = self.nodes[p.0].value.numel();
                        let slice = out_grad[offset..offset + numel].to_vec();
                        self.accumulate(p, &slice);
                        offset += numel;
                    }
                }
                Op::ConcatCols(parts) => {
                    let r = self.nodes[idx].value.shape()[0];
                    let total_c = self.nodes[idx].value.shape()[1];
                    let mut offset = 0;
                    for p in parts {
                        let pc = self.nodes[p.0].value.shape()[1];
                        let mut dp = vec![0.0; r * pc];
                        for i in 0..r {
                            dp[i * pc..(i + 1) * pc].copy_from_slice(
                                &out_grad[i * total_c + offset..i * total_c + offset + pc],
                            );
                        }
                        self.accumulate(p, &dp);
                        offset += pc;
                    }
                }
                Op::SliceRows { x, start } => {
                    let (xr, xc) = (self.nodes[x.0].value.shape()[0], self.nodes[x.0].value.shape()[1]);
                    let len = out_grad.len() / xc;
                    let mut dx = vec![0.0; xr * xc];
                    dx[start * xc..(start + len) * xc].copy_from_slice(&out_grad);
                    self.accumulate(x, &dx);
                }
                Op::SliceCols { x, start } => {
                    let (xr, xc) = (self.nodes[x.0].value.shape()[0], self.nodes[x.0].value.shape()[1]);
                    let len = out_grad.len() / xr;
                    let mut dx = vec![0.0; xr * xc];
                    for i in 0..xr {
                        dx[i * xc + start..i * xc + start + len]
                            .copy_from_slice(&out_grad[i * len..(i + 1) * len]);
                    }
                    self.accumulate(x, &dx);
                }
            }
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, contribution: &[f64]) {
        let node = &mut self.nodes[id.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(g) => {
                debug_assert_eq!(g.len(), contribution.len());
                for (gi, ci) in g.iter_mut().zip(contribution) {
                    *gi += ci;
                }
            }
            None => node.grad = Some(contribution.to_vec()),
        }
    }
}
