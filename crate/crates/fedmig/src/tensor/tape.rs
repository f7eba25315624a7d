//! Reverse-mode differentiation tape.
//!
//! A [`Tape`] is an ordered record of primitive applications. Building an
//! op computes its forward value immediately; [`Tape::backward`] walks the
//! record exactly once in reverse, accumulating input gradients additively
//! so fan-out (the same [`Value`] feeding several ops) just works. Handles
//! are indices, so they are `Copy` and ops are appended strictly after
//! their inputs, which keeps the record topologically ordered for free.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::graph::Csr;
use crate::tensor::Tensor;

/// Probabilities are clamped to this floor before any logarithm; the same
/// floor guards row norms in L2 normalization.
pub const LOG_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Value(usize);

enum Op {
    Leaf,
    Detach,
    Matmul { a: usize, b: usize },
    Transpose { x: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { x: usize, c: f64 },
    AddRow { x: usize, bias: usize },
    Relu { x: usize },
    LnClamped { x: usize },
    SoftmaxRows { x: usize },
    SumAll { x: usize },
    NeighborMean { x: usize, adj: Arc<Csr> },
    L2NormalizeRows { x: usize },
}

struct Node {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    /// Gradient accumulator; empty unless `requires_grad`.
    grad: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, rows: usize, cols: usize, values: Vec<f64>, rg: bool, op: Op) -> Value {
        debug_assert_eq!(values.len(), rows * cols);
        debug_assert!(
            values.iter().all(|v| v.is_finite()),
            "non-finite forward output"
        );
        let grad = if rg { vec![0.0; rows * cols] } else { Vec::new() };
        self.nodes.push(Node {
            rows,
            cols,
            values,
            grad,
            requires_grad: rg,
            op,
        });
        Value(self.nodes.len() - 1)
    }

    fn dims(&self, v: Value) -> (usize, usize) {
        (self.nodes[v.0].rows, self.nodes[v.0].cols)
    }

    /// Registers a trainable leaf; gradients will be tracked.
    pub fn param(&mut self, t: &Tensor) -> Value {
        let (r, c) = t.dims2();
        self.push(r, c, t.values().to_vec(), true, Op::Leaf)
    }

    /// Registers a non-trainable leaf.
    pub fn constant(&mut self, t: &Tensor) -> Value {
        let (r, c) = t.dims2();
        self.push(r, c, t.values().to_vec(), false, Op::Leaf)
    }

    /// Registers a leaf honoring the tensor's own `requires_grad` flag.
    pub fn input(&mut self, t: &Tensor) -> Value {
        if t.requires_grad() {
            self.param(t)
        } else {
            self.constant(t)
        }
    }

    /// Copies a node's current value, cutting the gradient path.
    pub fn detach(&mut self, x: Value) -> Value {
        let (r, c) = self.dims(x);
        let values = self.nodes[x.0].values.clone();
        self.push(r, c, values, false, Op::Detach)
    }

    pub fn matmul(&mut self, a: Value, b: Value) -> Result<Value> {
        let (m, ka) = self.dims(a);
        let (kb, n) = self.dims(b);
        if ka != kb {
            return Err(Error::shape(
                "matmul",
                format!("inner dims disagree: {m}x{ka} vs {kb}x{n}"),
            ));
        }
        let av = &self.nodes[a.0].values;
        let bv = &self.nodes[b.0].values;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for k in 0..ka {
                let aik = av[i * ka + k];
                if aik == 0.0 {
                    continue;
                }
                let brow = &bv[k * n..(k + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &bkj) in orow.iter_mut().zip(brow) {
                    *o += aik * bkj;
                }
            }
        }
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(m, n, out, rg, Op::Matmul { a: a.0, b: b.0 }))
    }

    pub fn transpose(&mut self, x: Value) -> Value {
        let (m, n) = self.dims(x);
        let xv = &self.nodes[x.0].values;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = xv[i * n + j];
            }
        }
        let rg = self.requires(x);
        self.push(n, m, out, rg, Op::Transpose { x: x.0 })
    }

    pub fn add(&mut self, a: Value, b: Value) -> Result<Value> {
        self.zip("add", a, b, |x, y| x + y, |a0, b0| Op::Add { a: a0, b: b0 })
    }

    pub fn sub(&mut self, a: Value, b: Value) -> Result<Value> {
        self.zip("sub", a, b, |x, y| x - y, |a0, b0| Op::Sub { a: a0, b: b0 })
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Value, b: Value) -> Result<Value> {
        self.zip("mul", a, b, |x, y| x * y, |a0, b0| Op::Mul { a: a0, b: b0 })
    }

    fn zip(
        &mut self,
        opname: &'static str,
        a: Value,
        b: Value,
        f: impl Fn(f64, f64) -> f64,
        op: impl Fn(usize, usize) -> Op,
    ) -> Result<Value> {
        let (m, n) = self.dims(a);
        if self.dims(b) != (m, n) {
            return Err(Error::shape(
                opname,
                format!("{:?} vs {:?}", self.dims(a), self.dims(b)),
            ));
        }
        let out: Vec<f64> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(m, n, out, rg, op(a.0, b.0)))
    }

    pub fn scale(&mut self, x: Value, c: f64) -> Value {
        let (m, n) = self.dims(x);
        let out: Vec<f64> = self.nodes[x.0].values.iter().map(|&v| c * v).collect();
        let rg = self.requires(x);
        self.push(m, n, out, rg, Op::Scale { x: x.0, c })
    }

    /// Adds a `1 x n` bias row to every row of an `m x n` input.
    pub fn add_row(&mut self, x: Value, bias: Value) -> Result<Value> {
        let (m, n) = self.dims(x);
        let (br, bc) = self.dims(bias);
        if br != 1 || bc != n {
            return Err(Error::shape(
                "add_row",
                format!("bias {br}x{bc} does not broadcast over {m}x{n}"),
            ));
        }
        let bv = self.nodes[bias.0].values.clone();
        let xv = &self.nodes[x.0].values;
        let mut out = Vec::with_capacity(m * n);
        for i in 0..m {
            for j in 0..n {
                out.push(xv[i * n + j] + bv[j]);
            }
        }
        let rg = self.requires(x) || self.requires(bias);
        Ok(self.push(
            m,
            n,
            out,
            rg,
            Op::AddRow {
                x: x.0,
                bias: bias.0,
            },
        ))
    }

    pub fn relu(&mut self, x: Value) -> Value {
        let (m, n) = self.dims(x);
        let out: Vec<f64> = self.nodes[x.0].values.iter().map(|&v| v.max(0.0)).collect();
        let rg = self.requires(x);
        self.push(m, n, out, rg, Op::Relu { x: x.0 })
    }

    /// Natural log with inputs clamped to [`LOG_FLOOR`]; below the floor the
    /// output is constant, so the (sub)gradient there is zero.
    pub fn ln_clamped(&mut self, x: Value) -> Value {
        let (m, n) = self.dims(x);
        let out: Vec<f64> = self.nodes[x.0]
            .values
            .iter()
            .map(|&v| v.max(LOG_FLOOR).ln())
            .collect();
        let rg = self.requires(x);
        self.push(m, n, out, rg, Op::LnClamped { x: x.0 })
    }

    /// Row-wise softmax with max subtraction for stability.
    pub fn softmax_rows(&mut self, x: Value) -> Value {
        let (m, n) = self.dims(x);
        let xv = &self.nodes[x.0].values;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..n {
                let e = (row[j] - mx).exp();
                out[i * n + j] = e;
                sum += e;
            }
            for j in 0..n {
                out[i * n + j] /= sum;
            }
        }
        let rg = self.requires(x);
        self.push(m, n, out, rg, Op::SoftmaxRows { x: x.0 })
    }

    /// Sum of all elements, as a `1 x 1` scalar node.
    pub fn sum_all(&mut self, x: Value) -> Value {
        let s: f64 = self.nodes[x.0].values.iter().sum();
        let rg = self.requires(x);
        self.push(1, 1, vec![s], rg, Op::SumAll { x: x.0 })
    }

    /// Mean over each node's neighbor rows; isolated nodes aggregate to the
    /// zero vector.
    pub fn neighbor_mean(&mut self, x: Value, adj: &Csr) -> Result<Value> {
        let (m, n) = self.dims(x);
        if m != adj.num_nodes() {
            return Err(Error::shape(
                "neighbor_mean",
                format!("{m} feature rows vs {} graph nodes", adj.num_nodes()),
            ));
        }
        let xv = &self.nodes[x.0].values;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let nbrs = adj.neighbors(i);
            if nbrs.is_empty() {
                continue;
            }
            let inv = 1.0 / nbrs.len() as f64;
            let orow = &mut out[i * n..(i + 1) * n];
            for &j in nbrs {
                let xrow = &xv[j * n..(j + 1) * n];
                for (o, &v) in orow.iter_mut().zip(xrow) {
                    *o += v;
                }
            }
            for o in orow.iter_mut() {
                *o *= inv;
            }
        }
        let rg = self.requires(x);
        Ok(self.push(
            m,
            n,
            out,
            rg,
            Op::NeighborMean {
                x: x.0,
                adj: Arc::new(adj.clone()),
            },
        ))
    }

    /// Scales each row to unit L2 norm; rows with norm below [`LOG_FLOOR`]
    /// are divided by the floor instead, keeping the map differentiable.
    pub fn l2_normalize_rows(&mut self, x: Value) -> Value {
        let (m, n) = self.dims(x);
        let xv = &self.nodes[x.0].values;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &xv[i * n..(i + 1) * n];
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            let denom = norm.max(LOG_FLOOR);
            for j in 0..n {
                out[i * n + j] = row[j] / denom;
            }
        }
        let rg = self.requires(x);
        self.push(m, n, out, rg, Op::L2NormalizeRows { x: x.0 })
    }

    fn requires(&self, v: Value) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Value) -> Tensor {
        let node = &self.nodes[v.0];
        Tensor::from_values(&[node.rows, node.cols], node.values.clone())
            .expect("node dims are consistent")
    }

    pub fn value_slice(&self, v: Value) -> &[f64] {
        &self.nodes[v.0].values
    }

    pub fn scalar_value(&self, v: Value) -> Result<f64> {
        let node = &self.nodes[v.0];
        if node.rows * node.cols != 1 {
            return Err(Error::shape(
                "scalar_value",
                format!("node is {}x{}", node.rows, node.cols),
            ));
        }
        Ok(node.values[0])
    }

    /// Gradient of the last `backward` target with respect to `v`.
    pub fn grad(&self, v: Value) -> Result<Tensor> {
        let node = &self.nodes[v.0];
        if !node.requires_grad {
            return Err(Error::Numeric(
                "gradient requested for a non-tracked value".into(),
            ));
        }
        Tensor::from_values(&[node.rows, node.cols], node.grad.clone())
    }

    /// Runs one reverse sweep from a scalar `loss`. All accumulators are
    /// reset first, so repeated calls recompute rather than double-count.
    pub fn backward(&mut self, loss: Value) -> Result<()> {
        {
            let node = &self.nodes[loss.0];
            if node.rows * node.cols != 1 {
                return Err(Error::shape(
                    "backward",
                    format!("loss must be 1x1, got {}x{}", node.rows, node.cols),
                ));
            }
            if !node.requires_grad {
                return Err(Error::Numeric(
                    "backward target does not depend on any trainable leaf".into(),
                ));
            }
        }
        for node in &mut self.nodes {
            for g in &mut node.grad {
                *g = 0.0;
            }
        }
        self.nodes[loss.0].grad[0] = 1.0;

        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].requires_grad {
                continue;
            }
            // Split so the node's own grad can be read while inputs are written.
            let (before, rest) = self.nodes.split_at_mut(idx);
            let node = &rest[0];
            let g = &node.grad;
            let (m, n) = (node.rows, node.cols);
            match &node.op {
                Op::Leaf | Op::Detach => {}
                Op::Matmul { a, b } => {
                    let k = before[*a].cols;
                    if before[*a].requires_grad {
                        // dA += G B^T
                        let mut da = std::mem::take(&mut before[*a].grad);
                        let bv = &before[*b].values;
                        for i in 0..m {
                            for j in 0..n {
                                let gij = g[i * n + j];
                                if gij == 0.0 {
                                    continue;
                                }
                                for kk in 0..k {
                                    da[i * k + kk] += gij * bv[kk * n + j];
                                }
                            }
                        }
                        before[*a].grad = da;
                    }
                    if before[*b].requires_grad {
                        // dB += A^T G
                        let mut db = std::mem::take(&mut before[*b].grad);
                        let av = &before[*a].values;
                        for i in 0..m {
                            for kk in 0..k {
                                let aik = av[i * k + kk];
                                if aik == 0.0 {
                                    continue;
                                }
                                for j in 0..n {
                                    db[kk * n + j] += aik * g[i * n + j];
                                }
                            }
                        }
                        before[*b].grad = db;
                    }
                }
                Op::Transpose { x } => {
                    if before[*x].requires_grad {
                        let (xm, xn) = (before[*x].rows, before[*x].cols);
                        for i in 0..xm {
                            for j in 0..xn {
                                before[*x].grad[i * xn + j] += g[j * xm + i];
                            }
                        }
                    }
                }
                Op::Add { a, b } => {
                    if before[*a].requires_grad {
                        for (d, &gi) in before[*a].grad.iter_mut().zip(g) {
                            *d += gi;
                        }
                    }
                    if before[*b].requires_grad {
                        for (d, &gi) in before[*b].grad.iter_mut().zip(g) {
                            *d += gi;
                        }
                    }
                }
                Op::Sub { a, b } => {
                    if before[*a].requires_grad {
                        for (d, &gi) in before[*a].grad.iter_mut().zip(g) {
                            *d += gi;
                        }
                    }
                    if before[*b].requires_grad {
                        for (d, &gi) in before[*b].grad.iter_mut().zip(g) {
                            *d -= gi;
                        }
                    }
                }
                Op::Mul { a, b } => {
                    if before[*a].requires_grad {
                        let mut da = std::mem::take(&mut before[*a].grad);
                        let bv = &before[*b].values;
                        for ((d, &gi), &bvi) in da.iter_mut().zip(g).zip(bv) {
                            *d += gi * bvi;
                        }
                        before[*a].grad = da;
                    }
                    if before[*b].requires_grad {
                        let mut db = std::mem::take(&mut before[*b].grad);
                        let av = &before[*a].values;
                        for ((d, &gi), &avi) in db.iter_mut().zip(g).zip(av) {
                            *d += gi * avi;
                        }
                        before[*b].grad = db;
                    }
                }
                Op::Scale { x, c } => {
                    if before[*x].requires_grad {
                        for (d, &gi) in before[*x].grad.iter_mut().zip(g) {
                            *d += c * gi;
                        }
                    }
                }
                Op::AddRow { x, bias } => {
                    if before[*x].requires_grad {
                        for (d, &gi) in before[*x].grad.iter_mut().zip(g) {
                            *d += gi;
                        }
                    }
                    if before[*bias].requires_grad {
                        for i in 0..m {
                            for j in 0..n {
                                before[*bias].grad[j] += g[i * n + j];
                            }
                        }
                    }
                }
                Op::Relu { x } => {
                    if before[*x].requires_grad {
                        let mut dx = std::mem::take(&mut before[*x].grad);
                        let xv = &before[*x].values;
                        for ((d, &gi), &xi) in dx.iter_mut().zip(g).zip(xv) {
                            if xi > 0.0 {
                                *d += gi;
                            }
                        }
                        before[*x].grad = dx;
                    }
                }
                Op::LnClamped { x } => {
                    if before[*x].requires_grad {
                        let mut dx = std::mem::take(&mut before[*x].grad);
                        let xv = &before[*x].values;
                        for ((d, &gi), &xi) in dx.iter_mut().zip(g).zip(xv) {
                            if xi > LOG_FLOOR {
                                *d += gi / xi;
                            }
                        }
                        before[*x].grad = dx;
                    }
                }
                Op::SoftmaxRows { x } => {
                    if before[*x].requires_grad {
                        let yv = &node.values;
                        for i in 0..m {
                            let grow = &g[i * n..(i + 1) * n];
                            let yrow = &yv[i * n..(i + 1) * n];
                            let dot: f64 = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                            for j in 0..n {
                                before[*x].grad[i * n + j] += yrow[j] * (grow[j] - dot);
                            }
                        }
                    }
                }
                Op::SumAll { x } => {
                    if before[*x].requires_grad {
                        let g0 = g[0];
                        for d in before[*x].grad.iter_mut() {
                            *d += g0;
                        }
                    }
                }
                Op::NeighborMean { x, adj } => {
                    if before[*x].requires_grad {
                        for i in 0..m {
                            let nbrs = adj.neighbors(i);
                            if nbrs.is_empty() {
                                continue;
                            }
                            let inv = 1.0 / nbrs.len() as f64;
                            for &j in nbrs {
                                for c in 0..n {
                                    before[*x].grad[j * n + c] += g[i * n + c] * inv;
                                }
                            }
                        }
                    }
                }
                Op::L2NormalizeRows { x } => {
                    if before[*x].requires_grad {
                        let mut dx = std::mem::take(&mut before[*x].grad);
                        let xv = &before[*x].values;
                        let yv = &node.values;
                        for i in 0..m {
                            let xrow = &xv[i * n..(i + 1) * n];
                            let yrow = &yv[i * n..(i + 1) * n];
                            let grow = &g[i * n..(i + 1) * n];
                            let norm = xrow.iter().map(|v| v * v).sum::<f64>().sqrt();
                            if norm > LOG_FLOOR {
                                let dot: f64 = grow.iter().zip(yrow).map(|(&a, &b)| a * b).sum();
                                for j in 0..n {
                                    dx[i * n + j] += (grow[j] - dot * yrow[j]) / norm;
                                }
                            } else {
                                for j in 0..n {
                                    dx[i * n + j] += grow[j] / LOG_FLOOR;
                                }
                            }
                        }
                        before[*x].grad = dx;
                    }
                }
            }
        }
        Ok(())
    }
}
