//! Reverse-mode gradient tape.
//!
//! Every primitive appends one node holding its output value. Nodes are
//! appended in execution order, so the tape is topologically sorted by
//! construction and [`Tape::backward`] is a single reverse sweep.

use super::tensor::{gemm, Tensor};
use crate::error::{arg_err, dim_err, Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Affine { x: Var, w: Var, b: Var },
    SharedAffine { rows: Var, shared: Var, w: Var, b: Var },
    ConcatCols { a: Var, b: Var },
    BroadcastRows { v: Var },
    StackRows { parts: Vec<Var> },
    Row { x: Var, index: usize },
    Reshape { x: Var },
    Act { x: Var, kind: Activation },
    LogSigmoid { x: Var },
    MaxPoolRows { x: Var, argmax: Vec<usize> },
    MaxOf { parts: Vec<Var>, which: Vec<usize> },
    BatchNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Normalize { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, inv_std: Vec<f64> },
    Clamp { x: Var, lo: f64, hi: f64 },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Scale { x: Var, c: f64 },
    Abs { x: Var },
    Sum { x: Var },
    Mean { x: Var },
    SumSquares { x: Var },
    Norm { x: Var },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Per-batch statistics returned by a training-mode batch norm.
#[derive(Clone, Debug)]
pub struct BatchMoments {
    pub mean: Vec<f64>,
    /// Biased (population) variance, the one used for normalization.
    pub var: Vec<f64>,
    pub count: usize,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by one backward sweep, indexed by leaf [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. `v`, or `None` if `v` does not influence it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    x.min(0.0) - (-x.abs()).exp().ln_1p()
}

pub fn apply_activation(kind: Activation, x: f64) -> f64 {
    match kind {
        Activation::Relu => x.max(0.0),
        Activation::Tanh => x.tanh(),
        Activation::Sigmoid => sigmoid(x),
    }
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

    /// Drops every node recorded after the first `len`. Handles to dropped
    /// nodes must not be used afterwards.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric(format!("non-finite output from {}", op_name(&op))));
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn any_needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Leaf whose gradient is tracked.
    pub fn variable(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf, false)
    }

    /// `y = x Wᵀ + b` for `x` of shape `[in]` or `[n × in]`.
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if wv.rank() != 2 || bv.rank() != 1 || bv.len() != wv.shape()[0] {
            return Err(dim_err!(
                "affine weights {:?} / bias {:?}",
                wv.shape(),
                bv.shape()
            ));
        }
        let (out, inp) = (wv.shape()[0], wv.shape()[1]);
        if xv.rank() == 0 || xv.rank() > 2 || xv.cols() != inp {
            return Err(dim_err!(
                "affine input {:?} against weights {:?}",
                xv.shape(),
                wv.shape()
            ));
        }
        let n = xv.rows();
        let mut y = vec![0.0; n * out];
        gemm(
            n,
            inp,
            out,
            xv.data(),
            inp as isize,
            1,
            wv.data(),
            1,
            inp as isize,
            0.0,
            &mut y,
        );
        let bias = bv.data();
        for row in y.chunks_mut(out) {
            for (o, bb) in row.iter_mut().zip(bias) {
                *o += bb;
            }
        }
        let shape = if xv.rank() == 1 { vec![out] } else { vec![n, out] };
        let needs = self.any_needs(&[x, w, b]);
        self.push(Tensor::new(shape, y)?, Op::Affine { x, w, b }, needs)
    }

    /// Affine map of `concat(shared, rows[i])` for every row, where `shared`
    /// is one vector common to all rows. Same result as
    /// `affine(concat_cols(broadcast_rows(shared, n), rows), w, b)` without
    /// materializing the repeated block.
    pub fn shared_affine(&mut self, rows: Var, shared: Var, w: Var, b: Var) -> Result<Var> {
        let (rv, sv, wv, bv) = (
            self.value(rows),
            self.value(shared),
            self.value(w),
            self.value(b),
        );
        if rv.rank() != 2 || sv.rank() != 1 || wv.rank() != 2 || bv.rank() != 1 {
            return Err(dim_err!("shared_affine expects matrix rows and vector shared input"));
        }
        let (n, p) = (rv.shape()[0], rv.shape()[1]);
        let q = sv.len();
        let (out, inp) = (wv.shape()[0], wv.shape()[1]);
        if inp != p + q || bv.len() != out {
            return Err(dim_err!(
                "shared_affine weights {:?} for inputs {} + {}",
                wv.shape(),
                q,
                p
            ));
        }
        let wd = wv.data();
        let mut base = bv.data().to_vec();
        for (j, bj) in base.iter_mut().enumerate() {
            let wrow = &wd[j * inp..j * inp + q];
            *bj += wrow.iter().zip(sv.data()).map(|(a, b)| a * b).sum::<f64>();
        }
        let mut y = vec![0.0; n * out];
        for row in y.chunks_mut(out) {
            row.copy_from_slice(&base);
        }
        gemm(
            n,
            p,
            out,
            rv.data(),
            p as isize,
            1,
            &wd[q..],
            1,
            inp as isize,
            1.0,
            &mut y,
        );
        let needs = self.any_needs(&[rows, shared, w, b]);
        self.push(
            Tensor::new(vec![n, out], y)?,
            Op::SharedAffine { rows, shared, w, b },
            needs,
        )
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.rank() != 2 || bv.rank() != 2 || av.rows() != bv.rows() {
            return Err(dim_err!("concat_cols {:?} with {:?}", av.shape(), bv.shape()));
        }
        let (n, p, q) = (av.rows(), av.cols(), bv.cols());
        let mut y = Vec::with_capacity(n * (p + q));
        for i in 0..n {
            y.extend_from_slice(av.row(i));
            y.extend_from_slice(bv.row(i));
        }
        let needs = self.any_needs(&[a, b]);
        self.push(Tensor::new(vec![n, p + q], y)?, Op::ConcatCols { a, b }, needs)
    }

    /// Repeats vector `v` as `n` rows.
    pub fn broadcast_rows(&mut self, v: Var, n: usize) -> Result<Var> {
        let vv = self.value(v);
        if vv.rank() != 1 {
            return Err(dim_err!("broadcast_rows expects a vector, got {:?}", vv.shape()));
        }
        let d = vv.len();
        let mut y = Vec::with_capacity(n * d);
        for _ in 0..n {
            y.extend_from_slice(vv.data());
        }
        let needs = self.any_needs(&[v]);
        self.push(Tensor::new(vec![n, d], y)?, Op::BroadcastRows { v }, needs)
    }

    /// Stacks equal-length vectors into a matrix.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(arg_err!("stack_rows of nothing"));
        }
        let d = self.value(parts[0]).len();
        let mut y = Vec::with_capacity(parts.len() * d);
        for &p in parts {
            let pv = self.value(p);
            if pv.rank() != 1 || pv.len() != d {
                return Err(dim_err!("stack_rows part {:?}, expected [{}]", pv.shape(), d));
            }
            y.extend_from_slice(pv.data());
        }
        let needs = self.any_needs(parts);
        self.push(
            Tensor::new(vec![parts.len(), d], y)?,
            Op::StackRows {
                parts: parts.to_vec(),
            },
            needs,
        )
    }

    pub fn row(&mut self, x: Var, index: usize) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 || index >= xv.rows() {
            return Err(dim_err!("row {} of {:?}", index, xv.shape()));
        }
        let y = xv.row(index).to_vec();
        let needs = self.any_needs(&[x]);
        self.push(Tensor::vector(y), Op::Row { x, index }, needs)
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        let y = self.value(x).clone().reshaped(shape)?;
        let needs = self.any_needs(&[x]);
        self.push(y, Op::Reshape { x }, needs)
    }

    pub fn activation(&mut self, kind: Activation, x: Var) -> Result<Var> {
        let y = self.value(x).map(|v| apply_activation(kind, v));
        let needs = self.any_needs(&[x]);
        self.push(y, Op::Act { x, kind }, needs)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.activation(Activation::Relu, x)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.activation(Activation::Tanh, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.activation(Activation::Sigmoid, x)
    }

    /// `ln σ(x)`, stable for large |x|.
    pub fn log_sigmoid(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).map(log_sigmoid);
        let needs = self.any_needs(&[x]);
        self.push(y, Op::LogSigmoid { x }, needs)
    }

    /// Columnwise maximum over the rows of `x[n × d]`.
    pub fn maxpool_rows(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(dim_err!("maxpool_rows expects a matrix, got {:?}", xv.shape()));
        }
        let (n, d) = (xv.rows(), xv.cols());
        if n == 0 {
            return Err(arg_err!("maxpool over an empty set"));
        }
        let mut best = xv.row(0).to_vec();
        let mut argmax = vec![0usize; d];
        for i in 1..n {
            for (j, &v) in xv.row(i).iter().enumerate() {
                // strict: ties keep the first row
                if v > best[j] {
                    best[j] = v;
                    argmax[j] = i;
                }
            }
        }
        let needs = self.any_needs(&[x]);
        self.push(Tensor::vector(best), Op::MaxPoolRows { x, argmax }, needs)
    }

    /// Elementwise maximum over same-shaped tensors; ties go to the first.
    pub fn max_of(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(arg_err!("max_of nothing"));
        }
        let first = self.value(parts[0]);
        let shape = first.shape().to_vec();
        let mut best = first.data().to_vec();
        let mut which = vec![0usize; best.len()];
        for (k, &p) in parts.iter().enumerate().skip(1) {
            let pv = self.value(p);
            if pv.shape() != shape.as_slice() {
                return Err(dim_err!("max_of shape {:?} vs {:?}", pv.shape(), shape));
            }
            for (i, &v) in pv.data().iter().enumerate() {
                if v > best[i] {
                    best[i] = v;
                    which[i] = k;
                }
            }
        }
        let needs = self.any_needs(parts);
        self.push(
            Tensor::new(shape, best)?,
            Op::MaxOf {
                parts: parts.to_vec(),
                which,
            },
            needs,
        )
    }

    /// Training-mode batch normalization over the rows of `x[n × d]`.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
    ) -> Result<(Var, BatchMoments)> {
        let xv = self.value(x);
        if xv.rank() != 2 {
            return Err(dim_err!("batch_norm expects a matrix, got {:?}", xv.shape()));
        }
        let (n, d) = (xv.rows(), xv.cols());
        if n < 2 {
            return Err(arg_err!("batch_norm in training mode needs at least 2 rows, got {n}"));
        }
        check_affine_pair(self.value(gamma), self.value(beta), d)?;
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(xv.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for i in 0..n {
            for ((s, v), m) in var.iter_mut().zip(xv.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= n as f64);
        let inv_std: Vec<f64> = var.iter().map(|s| 1.0 / (s + eps).sqrt()).collect();
        let (op_xhat, y) = normalize_rows(xv, &mean, &inv_std, self.value(gamma), self.value(beta));
        let needs = self.any_needs(&[x, gamma, beta]);
        let out = self.push(
            Tensor::new(vec![n, d], y)?,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat: op_xhat,
                inv_std,
            },
            needs,
        )?;
        Ok((out, BatchMoments { mean, var, count: n }))
    }

    /// Normalization with fixed statistics (inference-mode batch norm).
    pub fn normalize(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mean: &[f64],
        var: &[f64],
        eps: f64,
    ) -> Result<Var> {
        let xv = self.value(x);
        let d = xv.cols();
        if xv.rank() == 0 || mean.len() != d || var.len() != d {
            return Err(dim_err!("normalize {:?} with {} statistics", xv.shape(), mean.len()));
        }
        check_affine_pair(self.value(gamma), self.value(beta), d)?;
        let inv_std: Vec<f64> = var.iter().map(|s| 1.0 / (s + eps).sqrt()).collect();
        let shape = xv.shape().to_vec();
        let (xhat, y) = normalize_rows(xv, mean, &inv_std, self.value(gamma), self.value(beta));
        let needs = self.any_needs(&[x, gamma, beta]);
        self.push(
            Tensor::new(shape, y)?,
            Op::Normalize {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            needs,
        )
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        if lo > hi {
            return Err(arg_err!("clamp bounds {lo} > {hi}"));
        }
        let y = self.value(x).map(|v| v.clamp(lo, hi));
        let needs = self.any_needs(&[x]);
        self.push(y, Op::Clamp { x, lo, hi }, needs)
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(dim_err!("elementwise {:?} vs {:?}", av.shape(), bv.shape()));
        }
        let y = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(av.shape().to_vec(), y)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.binary(a, b, |x, y| x + y)?;
        let needs = self.any_needs(&[a, b]);
        self.push(y, Op::Add { a, b }, needs)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let y = self.binary(a, b, |x, y| x - y)?;
        let needs = self.any_needs(&[a, b]);
        self.push(y, Op::Sub { a, b }, needs)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let y = self.value(x).map(|v| v * c);
        let needs = self.any_needs(&[x]);
        self.push(y, Op::Scale { x, c }, needs)
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        let y = self.value(x).map(f64::abs);
        let needs = self.any_needs(&[x]);
        self.push(y, Op::Abs { x }, needs)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let y = Tensor::scalar(self.value(x).sum());
        let needs = self.any_needs(&[x]);
        self.push(y, Op::Sum { x }, needs)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        if xv.is_empty() {
            return Err(arg_err!("mean of an empty tensor"));
        }
        let y = Tensor::scalar(xv.sum() / xv.len() as f64);
        let needs = self.any_needs(&[x]);
        self.push(y, Op::Mean { x }, needs)
    }

    /// `Σ xᵢ²`.
    pub fn sum_squares(&mut self, x: Var) -> Result<Var> {
        let y = Tensor::scalar(self.value(x).data().iter().map(|v| v * v).sum());
        let needs = self.any_needs(&[x]);
        self.push(y, Op::SumSquares { x }, needs)
    }

    /// Euclidean norm `‖x‖₂`. The gradient at `x = 0` is taken as zero.
    pub fn norm(&mut self, x: Var) -> Result<Var> {
        let s: f64 = self.value(x).data().iter().map(|v| v * v).sum();
        let needs = self.any_needs(&[x]);
        self.push(Tensor::scalar(s.sqrt()), Op::Norm { x }, needs)
    }

    /// Adds scalars; a convenience over repeated [`Tape::add`].
    pub fn add_all(&mut self, terms: &[Var]) -> Result<Var> {
        let (&first, rest) = terms
            .split_first()
            .ok_or_else(|| arg_err!("add_all of nothing"))?;
        let mut acc = first;
        for &t in rest {
            acc = self.add(acc, t)?;
        }
        Ok(acc)
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(arg_err!("backward from non-scalar of shape {:?}", lv.shape()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(lv.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients { grads })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let gd = g.data();
        match &node.op {
            Op::Leaf => {}
            Op::Affine { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (out, inp) = (wv.shape()[0], wv.shape()[1]);
                let n = xv.rows();
                if self.wants(*x) {
                    let mut dx = vec![0.0; n * inp];
                    gemm(n, out, inp, gd, out as isize, 1, wv.data(), inp as isize, 1, 0.0, &mut dx);
                    accumulate(grads, *x, Tensor::new(xv.shape().to_vec(), dx)?);
                }
                if self.wants(*w) {
                    let mut dw = vec![0.0; out * inp];
                    gemm(out, n, inp, gd, 1, out as isize, xv.data(), inp as isize, 1, 0.0, &mut dw);
                    accumulate(grads, *w, Tensor::new(vec![out, inp], dw)?);
                }
                if self.wants(*b) {
                    accumulate(grads, *b, Tensor::vector(column_sums(gd, n, out)));
                }
            }
            Op::SharedAffine { rows, shared, w, b } => {
                let (rv, sv, wv) = (self.value(*rows), self.value(*shared), self.value(*w));
                let (n, p) = (rv.rows(), rv.cols());
                let q = sv.len();
                let (out, inp) = (wv.shape()[0], wv.shape()[1]);
                let colsum = column_sums(gd, n, out);
                let wd = wv.data();
                if self.wants(*rows) {
                    let mut dr = vec![0.0; n * p];
                    gemm(n, out, p, gd, out as isize, 1, &wd[q..], inp as isize, 1, 0.0, &mut dr);
                    accumulate(grads, *rows, Tensor::new(vec![n, p], dr)?);
                }
                if self.wants(*shared) {
                    let mut ds = vec![0.0; q];
                    for (j, c) in colsum.iter().enumerate() {
                        for (d, wq) in ds.iter_mut().zip(&wd[j * inp..j * inp + q]) {
                            *d += c * wq;
                        }
                    }
                    accumulate(grads, *shared, Tensor::vector(ds));
                }
                if self.wants(*w) {
                    let mut dwp = vec![0.0; out * p];
                    gemm(out, n, p, gd, 1, out as isize, rv.data(), p as isize, 1, 0.0, &mut dwp);
                    let mut dw = vec![0.0; out * inp];
                    for j in 0..out {
                        let row = &mut dw[j * inp..(j + 1) * inp];
                        for (d, s) in row[..q].iter_mut().zip(sv.data()) {
                            *d = colsum[j] * s;
                        }
                        row[q..].copy_from_slice(&dwp[j * p..(j + 1) * p]);
                    }
                    accumulate(grads, *w, Tensor::new(vec![out, inp], dw)?);
                }
                if self.wants(*b) {
                    accumulate(grads, *b, Tensor::vector(colsum));
                }
            }
            Op::ConcatCols { a, b } => {
                let (p, q) = (self.value(*a).cols(), self.value(*b).cols());
                let n = g.rows();
                if self.wants(*a) {
                    let da: Vec<f64> = (0..n).flat_map(|i| g.row(i)[..p].to_vec()).collect();
                    accumulate(grads, *a, Tensor::new(vec![n, p], da)?);
                }
                if self.wants(*b) {
                    let db: Vec<f64> = (0..n).flat_map(|i| g.row(i)[p..p + q].to_vec()).collect();
                    accumulate(grads, *b, Tensor::new(vec![n, q], db)?);
                }
            }
            Op::BroadcastRows { v } => {
                let d = self.value(*v).len();
                accumulate(grads, *v, Tensor::vector(column_sums(gd, g.rows(), d)));
            }
            Op::StackRows { parts } => {
                for (i, p) in parts.iter().enumerate() {
                    if self.wants(*p) {
                        accumulate(grads, *p, Tensor::vector(g.row(i).to_vec()));
                    }
                }
            }
            Op::Row { x, index } => {
                let xv = self.value(*x);
                let mut dx = Tensor::zeros(xv.shape());
                let d = xv.cols();
                dx.data_mut()[index * d..(index + 1) * d].copy_from_slice(gd);
                accumulate(grads, *x, dx);
            }
            Op::Reshape { x } => {
                let shape = self.value(*x).shape().to_vec();
                accumulate(grads, *x, g.clone().reshaped(shape)?);
            }
            Op::Act { x, kind } => {
                let y = node.value.data();
                let xv = self.value(*x).data();
                let dx: Vec<f64> = match kind {
                    Activation::Relu => gd
                        .iter()
                        .zip(xv)
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect(),
                    Activation::Tanh => gd.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect(),
                    Activation::Sigmoid => gd.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect(),
                };
                accumulate(grads, *x, Tensor::new(g.shape().to_vec(), dx)?);
            }
            Op::LogSigmoid { x } => {
                let xv = self.value(*x).data();
                let dx = gd.iter().zip(xv).map(|(g, &x)| g * sigmoid(-x)).collect();
                accumulate(grads, *x, Tensor::new(g.shape().to_vec(), dx)?);
            }
            Op::MaxPoolRows { x, argmax } => {
                let xv = self.value(*x);
                let d = xv.cols();
                let mut dx = Tensor::zeros(xv.shape());
                for (j, &i) in argmax.iter().enumerate() {
                    dx.data_mut()[i * d + j] += gd[j];
                }
                accumulate(grads, *x, dx);
            }
            Op::MaxOf { parts, which } => {
                for (k, p) in parts.iter().enumerate() {
                    if !self.wants(*p) {
                        continue;
                    }
                    let dp = gd
                        .iter()
                        .zip(which)
                        .map(|(g, &w)| if w == k { *g } else { 0.0 })
                        .collect();
                    accumulate(grads, *p, Tensor::new(g.shape().to_vec(), dp)?);
                }
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gam = self.value(*gamma).data();
                let n = g.rows();
                let d = g.cols();
                let (dgamma, dbeta) = affine_pair_grads(gd, xhat, n, d);
                if self.wants(*x) {
                    // dx = inv_std/n · (n·dx̂ − Σdx̂ − x̂·Σ(dx̂·x̂)), dx̂ = g·γ
                    let mut sum_dxhat = vec![0.0; d];
                    let mut sum_dxhat_xhat = vec![0.0; d];
                    for i in 0..n {
                        for j in 0..d {
                            let dxh = gd[i * d + j] * gam[j];
                            sum_dxhat[j] += dxh;
                            sum_dxhat_xhat[j] += dxh * xhat[i * d + j];
                        }
                    }
                    let nf = n as f64;
                    let mut dx = vec![0.0; n * d];
                    for i in 0..n {
                        for j in 0..d {
                            let dxh = gd[i * d + j] * gam[j];
                            dx[i * d + j] = inv_std[j] / nf
                                * (nf * dxh - sum_dxhat[j] - xhat[i * d + j] * sum_dxhat_xhat[j]);
                        }
                    }
                    accumulate(grads, *x, Tensor::new(vec![n, d], dx)?);
                }
                if self.wants(*gamma) {
                    accumulate(grads, *gamma, Tensor::vector(dgamma));
                }
                if self.wants(*beta) {
                    accumulate(grads, *beta, Tensor::vector(dbeta));
                }
            }
            Op::Normalize {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gam = self.value(*gamma).data();
                let d = g.cols();
                let n = g.len() / d;
                let (dgamma, dbeta) = affine_pair_grads(gd, xhat, n, d);
                if self.wants(*x) {
                    let dx = gd
                        .iter()
                        .enumerate()
                        .map(|(k, g)| g * gam[k % d] * inv_std[k % d])
                        .collect();
                    accumulate(grads, *x, Tensor::new(g.shape().to_vec(), dx)?);
                }
                if self.wants(*gamma) {
                    accumulate(grads, *gamma, Tensor::vector(dgamma));
                }
                if self.wants(*beta) {
                    accumulate(grads, *beta, Tensor::vector(dbeta));
                }
            }
            Op::Clamp { x, lo, hi } => {
                let xv = self.value(*x).data();
                let dx = gd
                    .iter()
                    .zip(xv)
                    .map(|(g, &x)| if x >= *lo && x <= *hi { *g } else { 0.0 })
                    .collect();
                accumulate(grads, *x, Tensor::new(g.shape().to_vec(), dx)?);
            }
            Op::Add { a, b } => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.clone());
                }
            }
            Op::Sub { a, b } => {
                if self.wants(*a) {
                    accumulate(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    accumulate(grads, *b, g.map(|v| -v));
                }
            }
            Op::Scale { x, c } => {
                accumulate(grads, *x, g.map(|v| v * c));
            }
            Op::Abs { x } => {
                let xv = self.value(*x).data();
                let dx = gd.iter().zip(xv).map(|(g, &x)| g * sign(x)).collect();
                accumulate(grads, *x, Tensor::new(g.shape().to_vec(), dx)?);
            }
            Op::Sum { x } => {
                let shape = self.value(*x).shape().to_vec();
                accumulate(grads, *x, Tensor::filled(&shape, gd[0]));
            }
            Op::Mean { x } => {
                let xv = self.value(*x);
                let v = gd[0] / xv.len() as f64;
                accumulate(grads, *x, Tensor::filled(xv.shape(), v));
            }
            Op::SumSquares { x } => {
                let s = gd[0];
                accumulate(grads, *x, self.value(*x).map(|v| 2.0 * v * s));
            }
            Op::Norm { x } => {
                let norm = node.value.data()[0];
                let s = gd[0];
                let dx = if norm > 0.0 {
                    self.value(*x).map(|v| v / norm * s)
                } else {
                    Tensor::zeros(self.value(*x).shape())
                };
                accumulate(grads, *x, dx);
            }
        }
        Ok(())
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn check_affine_pair(gamma: &Tensor, beta: &Tensor, d: usize) -> Result<()> {
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(dim_err!(
            "norm scale/shift {:?}/{:?} for {} features",
            gamma.shape(),
            beta.shape(),
            d
        ));
    }
    Ok(())
}

fn normalize_rows(
    x: &Tensor,
    mean: &[f64],
    inv_std: &[f64],
    gamma: &Tensor,
    beta: &Tensor,
) -> (Vec<f64>, Vec<f64>) {
    let d = mean.len();
    let (gam, bet) = (gamma.data(), beta.data());
    let mut xhat = Vec::with_capacity(x.len());
    let mut y = Vec::with_capacity(x.len());
    for (k, v) in x.data().iter().enumerate() {
        let j = k % d;
        let h = (v - mean[j]) * inv_std[j];
        xhat.push(h);
        y.push(h * gam[j] + bet[j]);
    }
    (xhat, y)
}

fn affine_pair_grads(gd: &[f64], xhat: &[f64], n: usize, d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut dgamma = vec![0.0; d];
    let mut dbeta = vec![0.0; d];
    for i in 0..n {
        for j in 0..d {
            dgamma[j] += gd[i * d + j] * xhat[i * d + j];
            dbeta[j] += gd[i * d + j];
        }
    }
    (dgamma, dbeta)
}

fn column_sums(data: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut s = vec![0.0; d];
    for i in 0..n {
        for (acc, v) in s.iter_mut().zip(&data[i * d..(i + 1) * d]) {
            *acc += v;
        }
    }
    s
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Affine { .. } => "affine",
        Op::SharedAffine { .. } => "shared_affine",
        Op::ConcatCols { .. } => "concat_cols",
        Op::BroadcastRows { .. } => "broadcast_rows",
        Op::StackRows { .. } => "stack_rows",
        Op::Row { .. } => "row",
        Op::Reshape { .. } => "reshape",
        Op::Act { .. } => "activation",
        Op::LogSigmoid { .. } => "log_sigmoid",
        Op::MaxPoolRows { .. } => "maxpool_rows",
        Op::MaxOf { .. } => "max_of",
        Op::BatchNorm { .. } => "batch_norm",
        Op::Normalize { .. } => "normalize",
        Op::Clamp { .. } => "clamp",
        Op::Add { .. } => "add",
        Op::Sub { .. } => "sub",
        Op::Scale { .. } => "scale",
        Op::Abs { .. } => "abs",
        Op::Sum { .. } => "sum",
        Op::Mean { .. } => "mean",
        Op::SumSquares { .. } => "sum_squares",
        Op::Norm { .. } => "norm",
    }
}
