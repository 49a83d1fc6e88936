//! Dense 64-bit tensors and a tape-style reverse-mode differentiation engine.
//!
//! The tape ([`Graph`]) is an append-only list of nodes; inputs of a node
//! always have smaller ids than the node itself, so the graph is acyclic by
//! construction and `backward` is a single reverse sweep over the node list.
//! Two parameter copies (a model and its perturbed twin) can live in the same
//! graph, which is what the composite smoothing objective needs.

use crate::error::{Error, Result};

/// Dense n-dimensional array of `f64` in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build a tensor, checking that `shape` and `data` agree.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero-sized dimension in {shape:?}")));
        }
        if numel != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} implies {numel} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    /// Scalar tensor of shape `[1]`.
    pub fn scalar(v: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![v],
        }
    }

    /// 2-D tensor from rows; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Shape("from_rows: no rows".into()));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("from_rows: ragged rows".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            data.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), cols], data)
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a scalar tensor.
    pub fn item(&self) -> Result<f64> {
        if !self.is_scalar() {
            return Err(Error::Contract(format!(
                "item() on tensor of shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    /// Rows of a 2-D tensor.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Columns of a 2-D tensor.
    pub fn cols(&self) -> usize {
        self.shape[self.shape.len() - 1]
    }

    pub fn is_2d(&self) -> bool {
        self.shape.len() == 2
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Row `r` of a 2-D tensor as a slice.
    pub fn row(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }
}

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    /// Input leaf; `param` marks it as a differentiation root.
    Leaf { param: bool },
    /// Matrix product `[m,k] x [k,n] -> [m,n]`.
    Matmul(NodeId, NodeId),
    /// Elementwise sum of equal shapes.
    Add(NodeId, NodeId),
    /// Row-broadcast bias addition: `[b,k] + [k]`.
    AddRow(NodeId, NodeId),
    Sub(NodeId, NodeId),
    /// Elementwise product of equal shapes.
    Mul(NodeId, NodeId),
    /// Multiply by a constant.
    Scale(NodeId, f64),
    Relu(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    /// `max(x, c)` elementwise; gradient passes only where `x > c`.
    ClampMin(NodeId, f64),
    /// Fused row-wise log-softmax over the last axis of a 2-D tensor.
    LogSoftmax(NodeId),
    /// Sum of all elements, producing a scalar.
    Sum(NodeId),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Append-only computation tape. Single-owner during construction.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Graph::backward`].
///
/// Every parameter node has an entry (zero tensor if the loss does not depend
/// on it); non-parameter nodes have entries only if they were reached by the
/// backward sweep.
#[derive(Debug)]
pub struct GradientMap {
    grads: Vec<Option<Tensor>>,
}

impl GradientMap {
    pub fn wrt(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Cached output of a node.
    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn is_parameter(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.0].op, Op::Leaf { param: true })
    }

    fn push(&mut self, op: Op, value: Tensor) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    /// Leaf that is not differentiated against.
    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Leaf { param: false }, t)
    }

    /// Leaf registered as a differentiation root.
    pub fn parameter(&mut self, t: Tensor) -> NodeId {
        self.push(Op::Leaf { param: true }, t)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.is_2d() || !tb.is_2d() || ta.cols() != tb.rows() {
            return Err(Error::Shape(format!(
                "matmul: {:?} x {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let out = matmul_raw(ta.data(), tb.data(), m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(Op::Matmul(a, b), value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!(
                "add: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x + y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::Add(a, b), value))
    }

    /// `a[b,k] + bias[k]`, bias broadcast over rows.
    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if !ta.is_2d() || tb.shape().len() != 1 || ta.cols() != tb.shape()[0] {
            return Err(Error::Shape(format!(
                "add_row: {:?} + {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let k = ta.cols();
        let mut data = ta.data().to_vec();
        for (i, v) in data.iter_mut().enumerate() {
            *v += tb.data()[i % k];
        }
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::AddRow(a, bias), value))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!(
                "sub: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x - y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::Sub(a, b), value))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!(
                "mul: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(Op::Mul(a, b), value))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| c * x).collect();
        let value = Tensor {
            shape: ta.shape().to_vec(),
            data,
        };
        self.push(Op::Scale(a, c), value)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect();
        let value = Tensor {
            shape: ta.shape().to_vec(),
            data,
        };
        self.push(Op::Relu(a), value)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x.tanh()).collect();
        let value = Tensor {
            shape: ta.shape().to_vec(),
            data,
        };
        self.push(Op::Tanh(a), value)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let ta = self.value(a);
        let data = ta.data().iter().map(|x| x.exp()).collect();
        let value = Tensor {
            shape: ta.shape().to_vec(),
            data,
        };
        self.push(Op::Exp(a), value)
    }

    pub fn clamp_min(&mut self, a: NodeId, c: f64) -> NodeId {
        let ta = self.value(a);
        let data = ta.data().iter().map(|&x| x.max(c)).collect();
        let value = Tensor {
            shape: ta.shape().to_vec(),
            data,
        };
        self.push(Op::ClampMin(a, c), value)
    }

    /// Numerically stable fused log-softmax over each row of a `[b,k]` tensor.
    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        let ta = self.value(a);
        if !ta.is_2d() || ta.cols() < 2 {
            return Err(Error::Shape(format!(
                "log_softmax: want [batch,k] with k >= 2, got {:?}",
                ta.shape()
            )));
        }
        if !ta.all_finite() {
            return Err(Error::Numeric("log_softmax: non-finite input".into()));
        }
        let (b, k) = (ta.rows(), ta.cols());
        let mut data = vec![0.0; b * k];
        for r in 0..b {
            let row = ta.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            for (j, x) in row.iter().enumerate() {
                data[r * k + j] = x - m - lse;
            }
        }
        let value = Tensor::new(vec![b, k], data)?;
        Ok(self.push(Op::LogSoftmax(a), value))
    }

    /// Sum of all elements; output is a scalar of shape `[1]`.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total: f64 = self.value(a).data().iter().sum();
        self.push(Op::Sum(a), Tensor::scalar(total))
    }

    /// Reverse sweep from `loss` back to the parameter leaves.
    ///
    /// `loss` must be a scalar node. Parameters the loss does not depend on
    /// receive zero gradients.
    pub fn backward(&self, loss: NodeId) -> Result<GradientMap> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward: loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let g = match adj[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Leaf { .. } => {
                    adj[i] = Some(g); // keep for collection below
                }
                Op::Matmul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    // dA = dC * B^T
                    let da = matmul_nt(&g, tb.data(), m, n, k);
                    // dB = A^T * dC
                    let db = matmul_tn(ta.data(), &g, m, k, n);
                    accumulate(&mut adj, a.0, &da);
                    accumulate(&mut adj, b.0, &db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, a.0, &g);
                    accumulate(&mut adj, b.0, &g);
                }
                Op::AddRow(a, bias) => {
                    let k = self.value(*bias).numel();
                    accumulate(&mut adj, a.0, &g);
                    let mut gb = vec![0.0; k];
                    for (idx, v) in g.iter().enumerate() {
                        gb[idx % k] += v;
                    }
                    accumulate(&mut adj, bias.0, &gb);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj, a.0, &g);
                    let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                    accumulate(&mut adj, b.0, &neg);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let da: Vec<f64> = g.iter().zip(tb.data()).map(|(v, y)| v * y).collect();
                    let db: Vec<f64> = g.iter().zip(ta.data()).map(|(v, x)| v * x).collect();
                    accumulate(&mut adj, a.0, &da);
                    accumulate(&mut adj, b.0, &db);
                }
                Op::Scale(a, c) => {
                    let da: Vec<f64> = g.iter().map(|v| c * v).collect();
                    accumulate(&mut adj, a.0, &da);
                }
                Op::Relu(a) => {
                    let ta = self.value(*a);
                    let da: Vec<f64> = g
                        .iter()
                        .zip(ta.data())
                        .map(|(v, &x)| if x > 0.0 { *v } else { 0.0 })
                        .collect();
                    accumulate(&mut adj, a.0, &da);
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[i].value;
                    let da: Vec<f64> = g
                        .iter()
                        .zip(y.data())
                        .map(|(v, y)| v * (1.0 - y * y))
                        .collect();
                    accumulate(&mut adj, a.0, &da);
                }
                Op::Exp(a) => {
                    let y = &self.nodes[i].value;
                    let da: Vec<f64> = g.iter().zip(y.data()).map(|(v, y)| v * y).collect();
                    accumulate(&mut adj, a.0, &da);
                }
                Op::ClampMin(a, c) => {
                    let ta = self.value(*a);
                    let da: Vec<f64> = g
                        .iter()
                        .zip(ta.data())
                        .map(|(v, &x)| if x > *c { *v } else { 0.0 })
                        .collect();
                    accumulate(&mut adj, a.0, &da);
                }
                Op::LogSoftmax(a) => {
                    // dX = g - softmax(x) * rowsum(g)
                    let y = &self.nodes[i].value;
                    let (b, k) = (y.rows(), y.cols());
                    let mut da = vec![0.0; b * k];
                    for r in 0..b {
                        let gs: f64 = g[r * k..(r + 1) * k].iter().sum();
                        for j in 0..k {
                            let p = y.data()[r * k + j].exp();
                            da[r * k + j] = g[r * k + j] - p * gs;
                        }
                    }
                    accumulate(&mut adj, a.0, &da);
                }
                Op::Sum(a) => {
                    let n = self.value(*a).numel();
                    let da = vec![g[0]; n];
                    accumulate(&mut adj, a.0, &da);
                }
            }
        }

        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let g = match adj.get_mut(i).and_then(|g| g.take()) {
                Some(g) => Some(Tensor {
                    shape: node.value.shape().to_vec(),
                    data: g,
                }),
                // unused parameters get explicit zero gradients
                None if matches!(node.op, Op::Leaf { param: true }) => {
                    Some(Tensor::zeros(node.value.shape().to_vec()))
                }
                None => None,
            };
            grads.push(g);
        }
        Ok(GradientMap { grads })
    }
}

fn accumulate(adj: &mut [Option<Vec<f64>>], idx: usize, g: &[f64]) {
    match &mut adj[idx] {
        Some(buf) => {
            for (b, v) in buf.iter_mut().zip(g) {
                *b += v;
            }
        }
        slot => *slot = Some(g.to_vec()),
    }
}

/// `C[m,n] = A[m,k] * B[k,n]`.
fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

/// `C[m,k] = A[m,n] * B[k,n]^T`.
fn matmul_nt(a: &[f64], b: &[f64], m: usize, n: usize, k: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * k];
    for i in 0..m {
        for j in 0..k {
            let mut s = 0.0;
            for p in 0..n {
                s += a[i * n + p] * b[j * n + p];
            }
            c[i * k + j] = s;
        }
    }
    c
}

/// `C[k,n] = A[m,k]^T * B[m,n]`.
fn matmul_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; k * n];
    for p in 0..m {
        for i in 0..k {
            let av = a[p * k + i];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}
