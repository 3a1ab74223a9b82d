//! Reverse-mode automatic differentiation over a dynamic tape.
//!
//! Every operation appends a node holding its forward value and a record of
//! its inputs. [`Tape::backward`] walks the nodes in reverse and accumulates
//! gradients into the leaves created with [`Tape::param`]. Nodes created with
//! [`Tape::constant`] never receive gradients, and neither does anything
//! computed only from constants.
//!
//! A tape is meant to live for a single minibatch: build it, run the forward
//! pass, call `backward`, read the leaf gradients, drop it.
//!
//! ```
//! use fairlatent::tape::Tape;
//! use fairlatent::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let w = tape.param(Tensor::from_rows(&[[1.0, 2.0]]).unwrap());
//! let x = tape.constant(Tensor::from_rows(&[[1.0], [1.0]]).unwrap());
//! let wx = tape.matmul(w, x).unwrap();
//! let loss = tape.sum(wx).unwrap();
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(w).unwrap().data(), &[1.0, 1.0]);
//! ```

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    SubRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Abs(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    SumCols(Var),
    Transpose(Var),
    Concat(Vec<Var>),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    LogMeanExp(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of a leaf, if `backward` reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Gradient of a parameter leaf, or zeros of the right shape when the
    /// loss did not depend on it.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        match self.grad(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.value(v).shape();
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        self.push("add", value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        self.push("sub", value, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        self.push("mul", value, Op::Mul(a, b), &[a, b])
    }

    /// Adds a `1 x cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let value = broadcast_row(self.value(a), self.value(row), "add_row", |x, r| x + r)?;
        self.push("add_row", value, Op::AddRow(a, row), &[a, row])
    }

    /// Subtracts a `1 x cols` row from every row of `a`.
    pub fn sub_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let value = broadcast_row(self.value(a), self.value(row), "sub_row", |x, r| x - r)?;
        self.push("sub_row", value, Op::SubRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        let value = self.value(a).scale(k);
        self.push("scale", value, Op::Scale(a, k), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Result<Var> {
        let value = self.value(a).map(|v| v + k);
        self.push("add_scalar", value, Op::AddScalar(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|v| v.max(0.0));
        self.push("relu", value, Op::Relu(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::tanh);
        self.push("tanh", value, Op::Tanh(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(sigmoid);
        self.push("sigmoid", value, Op::Sigmoid(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::exp);
        self.push("exp", value, Op::Exp(a), &[a])
    }

    /// Elementwise `|x|`; the subgradient at zero is zero.
    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(f64::abs);
        self.push("abs", value, Op::Abs(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).map(|v| v * v);
        self.push("square", value, Op::Square(a), &[a])
    }

    /// Clamps into `[lo, hi]`; gradient passes only inside the interval.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        let value = self.value(a).map(|v| v.clamp(lo, hi));
        self.push("clamp", value, Op::Clamp(a, lo, hi), &[a])
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).softmax_rows();
        self.push("softmax", value, Op::Softmax(a), &[a])
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).log_softmax_rows();
        self.push("log_softmax", value, Op::LogSoftmax(a), &[a])
    }

    /// Sum of all entries as a 1x1 tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(a).sum());
        self.push("sum", value, Op::Sum(a), &[a])
    }

    /// Mean of all entries as a 1x1 tensor.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        let value = Tensor::scalar(t.mean());
        self.push("mean", value, Op::Mean(a), &[a])
    }

    /// Column means over rows: `r x c -> 1 x c`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        if self.value(a).rows() == 0 {
            return Err(Error::Contract("mean over zero rows".into()));
        }
        let value = self.value(a).col_means();
        self.push("mean_rows", value, Op::MeanRows(a), &[a])
    }

    /// Row sums across columns: `r x c -> r x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).row_sums();
        self.push("sum_cols", value, Op::SumCols(a), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = self.value(a).transpose();
        self.push("transpose", value, Op::Transpose(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let tensors: Vec<&Tensor> = parts.iter().map(|&v| self.value(v)).collect();
        let value = Tensor::concat_cols(&tensors)?;
        self.push("concat_cols", value, Op::Concat(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let value = self.value(a).slice_cols(start, end)?;
        self.push("slice_cols", value, Op::SliceCols(a, start), &[a])
    }

    /// Selects rows by index; gradients scatter-add back.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let value = self.value(a).select_rows(indices)?;
        self.push("gather_rows", value, Op::GatherRows(a, indices.to_vec()), &[a])
    }

    /// `log(mean(exp(x)))` over all entries, computed with max subtraction.
    pub fn log_mean_exp(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.is_empty() {
            return Err(Error::Contract("log_mean_exp of an empty tensor".into()));
        }
        let value = Tensor::scalar(log_mean_exp(t.data()));
        self.push("log_mean_exp", value, Op::LogMeanExp(a), &[a])
    }

    /// Back-propagates from a scalar loss and accumulates into every
    /// reachable parameter leaf. Calling it twice without
    /// [`Tape::zero_grad`] adds the gradients together.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).shape() != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a 1x1 loss, got {}x{}",
                self.value(loss).rows(),
                self.value(loss).cols()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            if matches!(self.nodes[idx].op, Op::Leaf) {
                let node = &mut self.nodes[idx];
                match &mut node.grad {
                    Some(acc) => acc.add_assign(&g)?,
                    None => node.grad = Some(g),
                }
                continue;
            }
            for (parent, pg) in self.local_grads(idx, &g)? {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut adj[parent.0] {
                    Some(acc) => acc.add_assign(&pg)?,
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `idx` for upstream gradient `g`.
    fn local_grads(&self, idx: usize, g: &Tensor) -> Result<Vec<(Var, Tensor)>> {
        let node = &self.nodes[idx];
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let out = match &node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let mut out = Vec::with_capacity(2);
                if needs(*a) {
                    out.push((*a, g.matmul_nt(val(*b))?));
                }
                if needs(*b) {
                    out.push((*b, val(*a).matmul_tn(g)?));
                }
                out
            }
            Op::Add(a, b) => vec![(*a, g.clone()), (*b, g.clone())],
            Op::Sub(a, b) => vec![(*a, g.clone()), (*b, g.scale(-1.0))],
            Op::Mul(a, b) => {
                let mut out = Vec::with_capacity(2);
                if needs(*a) {
                    out.push((*a, g.hadamard(val(*b))?));
                }
                if needs(*b) {
                    out.push((*b, g.hadamard(val(*a))?));
                }
                out
            }
            Op::AddRow(a, row) => vec![(*a, g.clone()), (*row, g.col_sums())],
            Op::SubRow(a, row) => vec![(*a, g.clone()), (*row, g.col_sums().scale(-1.0))],
            Op::Scale(a, k) => vec![(*a, g.scale(*k))],
            Op::AddScalar(a) => vec![(*a, g.clone())],
            Op::Relu(a) => vec![(*a, g.zip_map(val(*a), "relu'", |g, x| if x > 0.0 { g } else { 0.0 })?)],
            Op::Tanh(a) => vec![(*a, g.zip_map(y, "tanh'", |g, t| g * (1.0 - t * t))?)],
            Op::Sigmoid(a) => vec![(*a, g.zip_map(y, "sigmoid'", |g, s| g * s * (1.0 - s))?)],
            Op::Exp(a) => vec![(*a, g.hadamard(y)?)],
            Op::Abs(a) => vec![(*a, g.zip_map(val(*a), "abs'", |g, x| g * sign(x))?)],
            Op::Square(a) => vec![(*a, g.zip_map(val(*a), "square'", |g, x| 2.0 * g * x)?)],
            Op::Clamp(a, lo, hi) => {
                let (lo, hi) = (*lo, *hi);
                vec![(
                    *a,
                    g.zip_map(val(*a), "clamp'", |g, x| if x >= lo && x <= hi { g } else { 0.0 })?,
                )]
            }
            Op::Softmax(a) => {
                let mut dx = g.hadamard(y)?;
                for r in 0..dx.rows() {
                    let dot: f64 = dx.row(r).iter().sum();
                    let yr = y.row(r);
                    for (d, &s) in dx.row_mut(r).iter_mut().zip(yr) {
                        *d -= s * dot;
                    }
                }
                vec![(*a, dx)]
            }
            Op::LogSoftmax(a) => {
                let probs = y.map(f64::exp);
                let mut dx = g.clone();
                for r in 0..dx.rows() {
                    let total: f64 = g.row(r).iter().sum();
                    for (d, &p) in dx.row_mut(r).iter_mut().zip(probs.row(r)) {
                        *d -= p * total;
                    }
                }
                vec![(*a, dx)]
            }
            Op::Sum(a) => {
                let (r, c) = val(*a).shape();
                vec![(*a, Tensor::full(r, c, g.data()[0]))]
            }
            Op::Mean(a) => {
                let (r, c) = val(*a).shape();
                vec![(*a, Tensor::full(r, c, g.data()[0] / (r * c) as f64))]
            }
            Op::MeanRows(a) => {
                let (r, c) = val(*a).shape();
                let mut dx = Tensor::zeros(r, c);
                let inv = 1.0 / r as f64;
                for i in 0..r {
                    for (d, &gv) in dx.row_mut(i).iter_mut().zip(g.data()) {
                        *d = gv * inv;
                    }
                }
                vec![(*a, dx)]
            }
            Op::SumCols(a) => {
                let (r, c) = val(*a).shape();
                let mut dx = Tensor::zeros(r, c);
                for i in 0..r {
                    let gv = g.data()[i];
                    dx.row_mut(i).iter_mut().for_each(|d| *d = gv);
                }
                vec![(*a, dx)]
            }
            Op::Transpose(a) => vec![(*a, g.transpose())],
            Op::Concat(parts) => {
                let mut out = Vec::with_capacity(parts.len());
                let mut start = 0;
                for &p in parts {
                    let w = val(p).cols();
                    if needs(p) {
                        out.push((p, g.slice_cols(start, start + w)?));
                    }
                    start += w;
                }
                out
            }
            Op::SliceCols(a, start) => {
                let (r, c) = val(*a).shape();
                let mut dx = Tensor::zeros(r, c);
                let w = g.cols();
                for i in 0..r {
                    dx.row_mut(i)[*start..*start + w].copy_from_slice(g.row(i));
                }
                vec![(*a, dx)]
            }
            Op::GatherRows(a, indices) => {
                let (r, c) = val(*a).shape();
                let mut dx = Tensor::zeros(r, c);
                for (k, &i) in indices.iter().enumerate() {
                    for (d, &gv) in dx.row_mut(i).iter_mut().zip(g.row(k)) {
                        *d += gv;
                    }
                }
                vec![(*a, dx)]
            }
            Op::LogMeanExp(a) => {
                let x = val(*a);
                let lme = y.data()[0];
                let n = x.len() as f64;
                let gv = g.data()[0];
                vec![(*a, x.map(|v| gv * (v - lme).exp() / n))]
            }
        };
        Ok(out)
    }
}

fn broadcast_row(a: &Tensor, row: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if row.rows() != 1 || row.cols() != a.cols() {
        return Err(Error::dim(op, a.shape(), row.shape()));
    }
    let mut out = a.clone();
    let r = row.data();
    for i in 0..out.rows() {
        for (v, &b) in out.row_mut(i).iter_mut().zip(r) {
            *v = f(*v, b);
        }
    }
    Ok(out)
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Numerically stable `ln(mean(exp(values)))`.
pub fn log_mean_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = values.iter().map(|v| (v - max).exp()).sum::<f64>() / values.len() as f64;
    max + mean.ln()
}
