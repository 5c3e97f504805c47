use std::collections::HashMap;

use super::param::Param;
use super::tensor::{broadcast_index, broadcast_shape, Tensor};
use crate::error::{Error, Result};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Neg(Var),
    Square(Var),
    Sqrt(Var),
    Exp(Var),
    Ln(Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    LeakyRelu(Var, f64),
    Clamp(Var, f64, f64),
    Sum(Var),
    Mean(Var),
    SumAxis(Var),
    MeanAxis(Var, usize),
    RowNorm(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var),
    Transpose(Var),
    Inverse(Var),
    LogDet(Var, Tensor),
    Reshape(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run reverse-mode tape.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and [`Graph::backward`] is a single reverse sweep.
/// A graph lives for one forward/backward pass and is confined to the thread
/// that built it.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    bound: HashMap<usize, Var>,
    record_branches: bool,
    branches: Vec<i8>,
}


fn need_matrix(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::Shape {
            op,
            lhs: s.to_vec(),
            rhs: vec![],
        }),
    }
}

/// `C = A·B` for row-major `A (m×k)` and `B (k×n)`, with explicit strides
/// so transposed operands need no copy.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    c: &mut [f64],
    beta: f64,
) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: slice lengths cover every addressed element for the given
    // extents and strides; `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn lu_inverse(op: &'static str, t: &Tensor) -> Result<(nalgebra::DMatrix<f64>, f64)> {
    let (r, c) = need_matrix(op, t)?;
    if r != c {
        return Err(Error::Shape {
            op,
            lhs: t.shape().to_vec(),
            rhs: vec![c, r],
        });
    }
    let m = nalgebra::DMatrix::from_row_slice(r, c, t.data());
    let lu = m.lu();
    let det = lu.determinant();
    let inv = lu.try_inverse().ok_or_else(|| Error::Domain {
        op,
        detail: "matrix is singular".into(),
    })?;
    Ok((inv, det))
}

fn dmatrix_to_tensor(m: &nalgebra::DMatrix<f64>) -> Tensor {
    let (r, c) = m.shape();
    let mut data = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            data.push(m[(i, j)]);
        }
    }
    Tensor::from_parts(vec![r, c], data)
}

/// Sums `g` (shaped like the broadcast output) back down to `in_shape`.
fn reduce_to(g: &[f64], in_shape: &[usize], out_shape: &[usize]) -> Vec<f64> {
    if in_shape == out_shape {
        return g.to_vec();
    }
    let n: usize = in_shape.iter().product();
    let mut acc = vec![0.0; n];
    for (k, &i) in broadcast_index(in_shape, out_shape).iter().enumerate() {
        acc[i] += g[k];
    }
    acc
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    /// Records which side of every nondifferentiable point each rectifier,
    /// clamp and norm input falls on. Used by the gradient checker.
    pub fn with_branch_recording() -> Self {
        Graph {
            record_branches: true,
            ..Graph::default()
        }
    }

    pub(crate) fn branch_signature(&self) -> &[i8] {
        &self.branches
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A leaf that receives a gradient on backward.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Tensor::scalar(value))
    }

    /// Binds a trainable parameter. Binding the same parameter twice returns
    /// the same node, so shared weights accumulate one gradient.
    pub fn param(&mut self, p: &Param) -> Var {
        let key = p as *const Param as usize;
        if let Some(&v) = self.bound.get(&key) {
            return v;
        }
        let v = self.leaf(p.value.clone());
        self.bound.insert(key, v);
        v
    }

    /// Binds a parameter as a constant; it never receives a gradient.
    pub fn frozen(&mut self, p: &Param) -> Var {
        self.constant(p.value.clone())
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient of the last backward root with respect to `v`.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        self.grads.get(v.0).and_then(|g| {
            g.as_ref()
                .map(|d| Tensor::from_parts(self.nodes[v.0].value.shape().to_vec(), d.clone()))
        })
    }

    /// Gradient for a bound parameter; zeros if the parameter did not
    /// contribute to the root or was never bound.
    pub fn param_grad(&self, p: &Param) -> Tensor {
        let key = p as *const Param as usize;
        self.bound
            .get(&key)
            .and_then(|&v| self.grad(v))
            .unwrap_or_else(|| Tensor::zeros(p.value.shape()))
    }

    pub fn grads_for(&self, params: &[&Param]) -> Vec<Tensor> {
        params.iter().map(|p| self.param_grad(p)).collect()
    }

    // ------------------------------------------------------------------
    // elementwise binary with broadcasting

    fn binary(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let value = if ta.shape() == tb.shape() {
            let data = ta
                .data()
                .iter()
                .zip(tb.data())
                .map(|(&x, &y)| f(x, y))
                .collect();
            Tensor::from_parts(ta.shape().to_vec(), data)
        } else {
            let out_shape = broadcast_shape(op_name, ta.shape(), tb.shape())?;
            let ia = broadcast_index(ta.shape(), &out_shape);
            let ib = broadcast_index(tb.shape(), &out_shape);
            let data = ia
                .iter()
                .zip(&ib)
                .map(|(&i, &j)| f(ta.data()[i], tb.data()[j]))
                .collect();
            Tensor::from_parts(out_shape, data)
        };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div(a, b))
    }

    // ------------------------------------------------------------------
    // elementwise unary

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let value = self.nodes[x.0].value.map(f);
        let rg = self.rg(x);
        self.push(value, op, rg)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| c * v, Op::Scale(x, c))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.unary(x, |v| -v, Op::Neg(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.nodes[x.0].value.data().iter().find(|&&v| v < 0.0) {
            return Err(Error::Domain {
                op: "sqrt",
                detail: format!("negative input {bad}"),
            });
        }
        Ok(self.unary(x, f64::sqrt, Op::Sqrt(x)))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, f64::exp, Op::Exp(x))
    }

    pub fn ln(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.nodes[x.0].value.data().iter().find(|&&v| v < 0.0) {
            return Err(Error::Domain {
                op: "ln",
                detail: format!("negative input {bad}"),
            });
        }
        Ok(self.unary(x, f64::ln, Op::Ln(x)))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    fn record_signs(&mut self, x: Var, kink: f64) {
        if self.record_branches {
            let signs: Vec<i8> = self.nodes[x.0]
                .value
                .data()
                .iter()
                .map(|&v| {
                    if v > kink {
                        1
                    } else if v < kink {
                        -1
                    } else {
                        0
                    }
                })
                .collect();
            self.branches.extend(signs);
        }
    }

    /// Rectifier; the subgradient at 0 is 0.
    pub fn relu(&mut self, x: Var) -> Var {
        self.record_signs(x, 0.0);
        self.unary(x, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu(x))
    }

    /// Leaky rectifier with negative-side `slope`; the subgradient at 0 is 0.
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        self.record_signs(x, 0.0);
        self.unary(
            x,
            move |v| if v > 0.0 { v } else { slope * v },
            Op::LeakyRelu(x, slope),
        )
    }

    /// Clamps into `[lo, hi]`; gradient passes only strictly inside.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        self.record_signs(x, lo);
        self.record_signs(x, hi);
        self.unary(x, move |v| v.clamp(lo, hi), Op::Clamp(x, lo, hi))
    }

    // ------------------------------------------------------------------
    // reductions

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.nodes[x.0].value.data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = &self.nodes[x.0].value;
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    fn axis_sum(&self, x: Var, axis: usize) -> Result<Tensor> {
        let t = &self.nodes[x.0].value;
        if axis >= t.shape().len() {
            return Err(Error::contract(format!(
                "axis {axis} out of range for shape {:?}",
                t.shape()
            )));
        }
        let mut out_shape = t.shape().to_vec();
        out_shape[axis] = 1;
        let n: usize = out_shape.iter().product();
        let mut acc = vec![0.0; n];
        for (k, &i) in broadcast_index(&out_shape, t.shape()).iter().enumerate() {
            acc[i] += t.data()[k];
        }
        Ok(Tensor::from_parts(out_shape, acc))
    }

    /// Sum over one axis, keeping it with extent 1.
    pub fn sum_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let value = self.axis_sum(x, axis)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::SumAxis(x), rg))
    }

    /// Mean over one axis, keeping it with extent 1.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var> {
        let n = self.nodes[x.0]
            .value
            .shape()
            .get(axis)
            .copied()
            .unwrap_or(1) as f64;
        let value = self.axis_sum(x, axis)?.map(|v| v / n);
        let rg = self.rg(x);
        Ok(self.push(value, Op::MeanAxis(x, axis), rg))
    }

    /// Euclidean norm of each row: `(B, d) -> (B, 1)`. Subgradient 0 at a
    /// zero row.
    pub fn row_norm(&mut self, x: Var) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        let (r, c) = need_matrix("row_norm", t)?;
        let norms: Vec<f64> = (0..r)
            .map(|i| t.data()[i * c..(i + 1) * c].iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        if self.record_branches {
            self.branches
                .extend(norms.iter().map(|&n| if n == 0.0 { 0 } else { 1 }));
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(vec![r, 1], norms), Op::RowNorm(x), rg))
    }

    // ------------------------------------------------------------------
    // structure

    /// Concatenates matrices with equal row counts along the feature axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat_cols of nothing"))?;
        let (rows, _) = need_matrix("concat_cols", &self.nodes[first.0].value)?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let t = &self.nodes[p.0].value;
            let (r, c) = need_matrix("concat_cols", t)?;
            if r != rows {
                return Err(Error::Shape {
                    op: "concat_cols",
                    lhs: self.nodes[first.0].value.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.nodes[p.0].value.data()[i * w..(i + 1) * w]);
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::from_parts(vec![rows, total], data),
            Op::ConcatCols(parts.to_vec()),
            rg,
        ))
    }

    /// Stacks matrices with equal widths along the batch axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("concat_rows of nothing"))?;
        let (_, cols) = need_matrix("concat_rows", &self.nodes[first.0].value)?;
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let t = &self.nodes[p.0].value;
            let (r, c) = need_matrix("concat_rows", t)?;
            if c != cols {
                return Err(Error::Shape {
                    op: "concat_rows",
                    lhs: self.nodes[first.0].value.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
            rows += r;
            data.extend_from_slice(t.data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::from_parts(vec![rows, cols], data),
            Op::ConcatRows(parts.to_vec()),
            rg,
        ))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let value = self.nodes[x.0].value.slice_rows(start, len)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::SliceRows(x, start), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.nodes[x.0].value.reshaped(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        let (r, c) = need_matrix("transpose", t)?;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = t.data()[i * c + j];
            }
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(vec![c, r], data), Op::Transpose(x), rg))
    }

    // ------------------------------------------------------------------
    // linear algebra

    /// `(m, k) · (k, n) -> (m, n)`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let (m, k) = need_matrix("matmul", ta)?;
        let (k2, n) = need_matrix("matmul", tb)?;
        if k != k2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), k, 1, tb.data(), n, 1, &mut out, 0.0);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::from_parts(vec![m, n], out), Op::MatMul(a, b), rg))
    }

    pub fn inverse(&mut self, x: Var) -> Result<Var> {
        let (inv, _) = lu_inverse("inverse", &self.nodes[x.0].value)?;
        let rg = self.rg(x);
        Ok(self.push(dmatrix_to_tensor(&inv), Op::Inverse(x), rg))
    }

    /// `ln det(A)` for a square matrix with positive determinant.
    pub fn logdet(&mut self, x: Var) -> Result<Var> {
        let (inv, det) = lu_inverse("logdet", &self.nodes[x.0].value)?;
        if !(det > 0.0) {
            return Err(Error::Domain {
                op: "logdet",
                detail: format!("determinant {det} is not positive"),
            });
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::scalar(det.ln()),
            Op::LogDet(x, dmatrix_to_tensor(&inv)),
            rg,
        ))
    }

    // ------------------------------------------------------------------
    // row-wise distributions

    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        let (r, c) = need_matrix("softmax_rows", t)?;
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(c) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::from_parts(vec![r, c], data), Op::SoftmaxRows(x), rg))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let t = &self.nodes[x.0].value;
        let (r, c) = need_matrix("log_softmax_rows", t)?;
        let mut data = t.data().to_vec();
        for row in data.chunks_mut(c) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let rg = self.rg(x);
        Ok(self.push(
            Tensor::from_parts(vec![r, c], data),
            Op::LogSoftmaxRows(x),
            rg,
        ))
    }

    // ------------------------------------------------------------------
    // backward

    /// Propagates d(root)/d(node) to every node that requires a gradient.
    /// Calling it again discards the previous gradients.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward root must be a scalar, got shape {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        self.grads = vec![None; self.nodes.len()];
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, contrib: Vec<f64>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut self.grads[v.0] {
            Some(acc) => acc.iter_mut().zip(contrib).for_each(|(a, c)| *a += c),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn propagate(&mut self, i: usize, g: &[f64]) {
        let nodes = &self.nodes;
        let node = &nodes[i];
        let out = &node.value;
        let val = |v: &Var| &nodes[v.0].value;
        let mut pending: Vec<(Var, Vec<f64>)> = Vec::with_capacity(2);
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                if nodes[a.0].requires_grad {
                    pending.push((*a, reduce_to(g, val(a).shape(), out.shape())));
                }
                if nodes[b.0].requires_grad {
                    let mut gb = reduce_to(g, val(b).shape(), out.shape());
                    if sign < 0.0 {
                        gb.iter_mut().for_each(|v| *v = -*v);
                    }
                    pending.push((*b, gb));
                }
            }
            Op::Mul(a, b) | Op::Div(a, b) => {
                let is_div = matches!(node.op, Op::Div(..));
                let (ta, tb) = (val(a), val(b));
                let ia = broadcast_index(ta.shape(), out.shape());
                let ib = broadcast_index(tb.shape(), out.shape());
                if nodes[a.0].requires_grad {
                    let full: Vec<f64> = (0..g.len())
                        .map(|k| {
                            let y = tb.data()[ib[k]];
                            if is_div {
                                g[k] / y
                            } else {
                                g[k] * y
                            }
                        })
                        .collect();
                    pending.push((*a, reduce_to(&full, ta.shape(), out.shape())));
                }
                if nodes[b.0].requires_grad {
                    let full: Vec<f64> = (0..g.len())
                        .map(|k| {
                            let x = ta.data()[ia[k]];
                            if is_div {
                                let y = tb.data()[ib[k]];
                                -g[k] * x / (y * y)
                            } else {
                                g[k] * x
                            }
                        })
                        .collect();
                    pending.push((*b, reduce_to(&full, tb.shape(), out.shape())));
                }
            }
            Op::Scale(x, c) => pending.push((*x, g.iter().map(|v| v * c).collect())),
            Op::AddScalar(x) | Op::Reshape(x) => pending.push((*x, g.to_vec())),
            Op::Neg(x) => pending.push((*x, g.iter().map(|v| -v).collect())),
            Op::Square(x) => pending.push((
                *x,
                g.iter().zip(val(x).data()).map(|(g, x)| 2.0 * x * g).collect(),
            )),
            Op::Sqrt(x) => pending.push((
                *x,
                g.iter()
                    .zip(out.data())
                    .map(|(g, y)| if *y > 0.0 { 0.5 * g / y } else { 0.0 })
                    .collect(),
            )),
            Op::Exp(x) => pending.push((*x, g.iter().zip(out.data()).map(|(g, y)| g * y).collect())),
            Op::Ln(x) => pending.push((*x, g.iter().zip(val(x).data()).map(|(g, x)| g / x).collect())),
            Op::Tanh(x) => pending.push((
                *x,
                g.iter().zip(out.data()).map(|(g, y)| g * (1.0 - y * y)).collect(),
            )),
            Op::Sigmoid(x) => pending.push((
                *x,
                g.iter().zip(out.data()).map(|(g, y)| g * y * (1.0 - y)).collect(),
            )),
            Op::Relu(x) => pending.push((
                *x,
                g.iter()
                    .zip(val(x).data())
                    .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                    .collect(),
            )),
            Op::LeakyRelu(x, s) => pending.push((
                *x,
                g.iter()
                    .zip(val(x).data())
                    .map(|(g, x)| {
                        if *x > 0.0 {
                            *g
                        } else if *x < 0.0 {
                            s * g
                        } else {
                            0.0
                        }
                    })
                    .collect(),
            )),
            Op::Clamp(x, lo, hi) => pending.push((
                *x,
                g.iter()
                    .zip(val(x).data())
                    .map(|(g, x)| if *x > *lo && *x < *hi { *g } else { 0.0 })
                    .collect(),
            )),
            Op::Sum(x) => pending.push((*x, vec![g[0]; val(x).len()])),
            Op::Mean(x) => {
                let n = val(x).len();
                pending.push((*x, vec![g[0] / n as f64; n]));
            }
            Op::SumAxis(x) | Op::MeanAxis(x, _) => {
                let t = val(x);
                let scale = match node.op {
                    Op::MeanAxis(_, axis) => 1.0 / t.shape()[axis] as f64,
                    _ => 1.0,
                };
                let idx = broadcast_index(out.shape(), t.shape());
                pending.push((*x, idx.iter().map(|&j| g[j] * scale).collect()));
            }
            Op::RowNorm(x) => {
                let t = val(x);
                let c = t.cols();
                let mut gx = vec![0.0; t.len()];
                for (r, (&n, &gr)) in out.data().iter().zip(g).enumerate() {
                    if n > 0.0 {
                        for j in 0..c {
                            gx[r * c + j] = gr * t.data()[r * c + j] / n;
                        }
                    }
                }
                pending.push((*x, gx));
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for p in parts {
                    let w = val(p).cols();
                    if nodes[p.0].requires_grad {
                        let mut gp = Vec::with_capacity(out.rows() * w);
                        for r in 0..out.rows() {
                            gp.extend_from_slice(&g[r * total + offset..r * total + offset + w]);
                        }
                        pending.push((*p, gp));
                    }
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = val(p).len();
                    if nodes[p.0].requires_grad {
                        pending.push((*p, g[offset..offset + n].to_vec()));
                    }
                    offset += n;
                }
            }
            Op::SliceRows(x, start) => {
                let t = val(x);
                let c = t.cols();
                let mut gx = vec![0.0; t.len()];
                gx[start * c..start * c + g.len()].copy_from_slice(g);
                pending.push((*x, gx));
            }
            Op::Transpose(x) => {
                let (r, c) = (out.rows(), out.cols());
                let mut gx = vec![0.0; r * c];
                for i in 0..r {
                    for j in 0..c {
                        gx[j * r + i] = g[i * c + j];
                    }
                }
                pending.push((*x, gx));
            }
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(a), val(b));
                let (m, k) = (ta.rows(), ta.cols());
                let n = tb.cols();
                if nodes[a.0].requires_grad {
                    // dA = G · Bᵀ
                    let mut ga = vec![0.0; m * k];
                    gemm(m, n, k, g, n, 1, tb.data(), 1, n, &mut ga, 0.0);
                    pending.push((*a, ga));
                }
                if nodes[b.0].requires_grad {
                    // dB = Aᵀ · G
                    let mut gb = vec![0.0; k * n];
                    gemm(k, m, n, ta.data(), 1, k, g, n, 1, &mut gb, 0.0);
                    pending.push((*b, gb));
                }
            }
            Op::Inverse(x) => {
                // dA = -Yᵀ G Yᵀ with Y = A⁻¹
                let n = out.rows();
                let y = out.data();
                let mut tmp = vec![0.0; n * n];
                gemm(n, n, n, y, 1, n, g, n, 1, &mut tmp, 0.0);
                let mut gx = vec![0.0; n * n];
                gemm(n, n, n, &tmp, n, 1, y, 1, n, &mut gx, 0.0);
                gx.iter_mut().for_each(|v| *v = -*v);
                pending.push((*x, gx));
            }
            Op::LogDet(x, inv) => {
                // d ln det A / dA = A⁻ᵀ
                let n = inv.rows();
                let mut gx = vec![0.0; n * n];
                for i in 0..n {
                    for j in 0..n {
                        gx[i * n + j] = g[0] * inv.data()[j * n + i];
                    }
                }
                pending.push((*x, gx));
            }
            Op::SoftmaxRows(x) => {
                let c = out.cols();
                let mut gx = vec![0.0; out.len()];
                for (r, (yr, gr)) in out.data().chunks(c).zip(g.chunks(c)).enumerate() {
                    let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
                    for j in 0..c {
                        gx[r * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                pending.push((*x, gx));
            }
            Op::LogSoftmaxRows(x) => {
                let c = out.cols();
                let mut gx = vec![0.0; out.len()];
                for (r, (yr, gr)) in out.data().chunks(c).zip(g.chunks(c)).enumerate() {
                    let s: f64 = gr.iter().sum();
                    for j in 0..c {
                        gx[r * c + j] = gr[j] - yr[j].exp() * s;
                    }
                }
                pending.push((*x, gx));
            }
        }
        for (v, contrib) in pending {
            self.accumulate(v, contrib);
        }
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
