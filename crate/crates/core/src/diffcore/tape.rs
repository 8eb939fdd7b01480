//! Dynamic reverse-mode tape over dense matrices.
//!
//! Every operation appends a node holding its forward value and the handles
//! of its inputs. Because inputs always precede outputs, walking the node
//! list backwards is a valid reverse topological order. A tape is rebuilt for
//! every forward pass and can be differentiated exactly once.

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Norms at or below this are treated as degenerate by every normalizing op.
pub const NORM_EPS: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
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
    Transpose(Var),
    Add(Var, Var),
    Mul(Var, Var),
    ScaleConst(Var, f64),
    ScaleBy(Var, Var),
    MulRow(Var, Var),
    AddRow(Var, Var),
    MaskConst(Var, Matrix),
    Exp(Var),
    Relu(Var),
    Sum(Var),
    RowNormalize { x: Var, norms: Vec<f64> },
    SoftmaxRows { x: Var, inv_temp: Var },
    LogSoftmaxRows(Var),
    CrossEntropy { x: Var, labels: Vec<usize> },
    GatherRows { x: Var, idx: Vec<usize> },
    GatherCols { x: Var, idx: Vec<usize> },
    ConcatRows(Vec<Var>),
    Embed { x: Var, row0: usize, col0: usize },
    NegSqDist(Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Record of primitive operations for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Gradients of a scalar output with respect to every tape node that
/// depends on a differentiable leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }
}

fn shape_err(op: &'static str, a: &Matrix, b: &Matrix) -> Error {
    Error::Shape {
        op,
        left: a.shape(),
        right: b.shape(),
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A differentiable leaf.
    pub fn var(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), ng))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        let ng = self.needs(a);
        self.push(value, Op::Transpose(a), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("add", x, y));
        }
        let mut value = x.clone();
        value.add_assign(y);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), ng))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(shape_err("mul", x, y));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = Matrix::new(x.rows(), x.cols(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a, b), ng))
    }

    pub fn scale_const(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).scaled(factor);
        let ng = self.needs(a);
        self.push(value, Op::ScaleConst(a, factor), ng)
    }

    /// Multiplies every entry of `a` by the 1×1 node `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        let sv = self.value(s);
        if sv.shape() != (1, 1) {
            return Err(shape_err("scale_by", self.value(a), sv));
        }
        let value = self.value(a).scaled(sv.as_scalar());
        let ng = self.needs(a) || self.needs(s);
        Ok(self.push(value, Op::ScaleBy(a, s), ng))
    }

    /// Multiplies each row of `a` (m×n) elementwise by the row vector `v` (1×n).
    pub fn mul_row(&mut self, a: Var, v: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(v));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(shape_err("mul_row", x, r));
        }
        let value = Matrix::from_fn(x.rows(), x.cols(), |i, j| x.get(i, j) * r.get(0, j));
        let ng = self.needs(a) || self.needs(v);
        Ok(self.push(value, Op::MulRow(a, v), ng))
    }

    /// Adds the row vector `b` (1×n) to every row of `a` (m×n).
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, r) = (self.value(a), self.value(b));
        if r.rows() != 1 || r.cols() != x.cols() {
            return Err(shape_err("add_row", x, r));
        }
        let value = Matrix::from_fn(x.rows(), x.cols(), |i, j| x.get(i, j) + r.get(0, j));
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::AddRow(a, b), ng))
    }

    /// Elementwise product with a constant mask.
    pub fn mask(&mut self, a: Var, mask: Matrix) -> Result<Var> {
        let x = self.value(a);
        if x.shape() != mask.shape() {
            return Err(shape_err("mask", x, &mask));
        }
        let data = x.data().iter().zip(mask.data()).map(|(p, q)| p * q).collect();
        let value = Matrix::new(x.rows(), x.cols(), data)?;
        let ng = self.needs(a);
        Ok(self.push(value, Op::MaskConst(a, mask), ng))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::exp);
        let ng = self.needs(a);
        self.push(value, Op::Exp(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|v| v.max(0.0));
        let ng = self.needs(a);
        self.push(value, Op::Relu(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).data().iter().sum());
        let ng = self.needs(a);
        self.push(value, Op::Sum(a), ng)
    }

    /// Divides each row by its L2 norm. Rows with norm ≤ [`NORM_EPS`] pass
    /// through unchanged and receive zero gradient.
    pub fn row_normalize(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let norms: Vec<f64> = (0..x.rows()).map(|i| x.row_norm(i)).collect();
        let mut value = x.clone();
        for (i, &n) in norms.iter().enumerate() {
            if n > NORM_EPS {
                value.row_mut(i).iter_mut().for_each(|v| *v /= n);
            }
        }
        let ng = self.needs(a);
        self.push(value, Op::RowNormalize { x: a, norms }, ng)
    }

    /// Row-wise softmax of `inv_temp · x` where `inv_temp` is a 1×1 node.
    pub fn softmax_rows(&mut self, x: Var, inv_temp: Var) -> Result<Var> {
        self.softmax_rows_impl(x, inv_temp, None)
    }

    /// Softmax restricted to the entries where `mask` is nonzero. Masked
    /// entries are exactly zero; rows with no unmasked entry are all zero.
    pub fn softmax_rows_masked(&mut self, x: Var, inv_temp: Var, mask: Matrix) -> Result<Var> {
        if self.value(x).shape() != mask.shape() {
            return Err(shape_err("softmax_rows_masked", self.value(x), &mask));
        }
        self.softmax_rows_impl(x, inv_temp, Some(mask))
    }

    fn softmax_rows_impl(&mut self, x: Var, inv_temp: Var, mask: Option<Matrix>) -> Result<Var> {
        let t = self.value(inv_temp);
        if t.shape() != (1, 1) {
            return Err(shape_err("softmax_rows", self.value(x), t));
        }
        let beta = t.as_scalar();
        let xv = self.value(x);
        let mut value = Matrix::zeros(xv.rows(), xv.cols());
        for i in 0..xv.rows() {
            let keep = |j: usize| mask.as_ref().is_none_or(|m| m.get(i, j) != 0.0);
            let row = xv.row(i);
            let max = (0..row.len())
                .filter(|&j| keep(j))
                .map(|j| beta * row[j])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let out = value.row_mut(i);
            let mut total = 0.0;
            for j in 0..row.len() {
                if keep(j) {
                    out[j] = (beta * row[j] - max).exp();
                    total += out[j];
                }
            }
            out.iter_mut().for_each(|v| *v /= total);
        }
        let ng = self.needs(x) || self.needs(inv_temp);
        Ok(self.push(value, Op::SoftmaxRows { x, inv_temp }, ng))
    }

    pub fn log_softmax_rows(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let mut value = xv.clone();
        for i in 0..xv.rows() {
            let row = value.row_mut(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let ng = self.needs(x);
        self.push(value, Op::LogSoftmaxRows(x), ng)
    }

    /// Mean negative log-likelihood of `labels` under row-wise log-probabilities.
    pub fn cross_entropy(&mut self, log_probs: Var, labels: &[usize]) -> Result<Var> {
        let lp = self.value(log_probs);
        if labels.len() != lp.rows() {
            return Err(Error::Shape {
                op: "cross_entropy",
                left: lp.shape(),
                right: (labels.len(), 1),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= lp.cols()) {
            return Err(Error::Index {
                what: "cross_entropy label",
                index: bad,
                len: lp.cols(),
            });
        }
        let q = labels.len().max(1) as f64;
        let loss = -labels
            .iter()
            .enumerate()
            .map(|(i, &l)| lp.get(i, l))
            .sum::<f64>()
            / q;
        let ng = self.needs(log_probs);
        Ok(self.push(
            Matrix::scalar(loss),
            Op::CrossEntropy {
                x: log_probs,
                labels: labels.to_vec(),
            },
            ng,
        ))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= xv.rows()) {
            return Err(Error::Index {
                what: "gather_rows",
                index: bad,
                len: xv.rows(),
            });
        }
        let value = xv.select_rows(idx);
        let ng = self.needs(x);
        Ok(self.push(
            value,
            Op::GatherRows {
                x,
                idx: idx.to_vec(),
            },
            ng,
        ))
    }

    pub fn gather_cols(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = self.value(x);
        if let Some(&bad) = idx.iter().find(|&&j| j >= xv.cols()) {
            return Err(Error::Index {
                what: "gather_cols",
                index: bad,
                len: xv.cols(),
            });
        }
        let value = Matrix::from_fn(xv.rows(), idx.len(), |i, j| xv.get(i, idx[j]));
        let ng = self.needs(x);
        Ok(self.push(
            value,
            Op::GatherCols {
                x,
                idx: idx.to_vec(),
            },
            ng,
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = parts.first().map_or(0, |&p| self.value(p).cols());
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let v = self.value(p);
            if v.cols() != cols {
                return Err(shape_err("concat_rows", self.value(parts[0]), v));
            }
            rows += v.rows();
            data.extend_from_slice(v.data());
        }
        let value = Matrix::new(rows, cols, data)?;
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Places `x` into a zero matrix of shape `rows × cols` at offset `(row0, col0)`.
    pub fn embed(&mut self, x: Var, rows: usize, cols: usize, row0: usize, col0: usize) -> Result<Var> {
        let xv = self.value(x);
        if row0 + xv.rows() > rows || col0 + xv.cols() > cols {
            return Err(Error::Shape {
                op: "embed",
                left: xv.shape(),
                right: (rows, cols),
            });
        }
        let mut value = Matrix::zeros(rows, cols);
        for i in 0..xv.rows() {
            value.row_mut(row0 + i)[col0..col0 + xv.cols()].copy_from_slice(xv.row(i));
        }
        let ng = self.needs(x);
        Ok(self.push(value, Op::Embed { x, row0, col0 }, ng))
    }

    /// Pairwise negative squared Euclidean distances between rows of `x`.
    pub fn neg_sq_dist(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = xv.rows();
        let value = Matrix::from_fn(n, n, |i, j| {
            -xv.row(i)
                .iter()
                .zip(xv.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
        });
        let ng = self.needs(x);
        self.push(value, Op::NegSqDist(x), ng)
    }

    /// Cosine similarity between rows of `a` (q×d) and rows of `b` (n×d).
    pub fn cosine_similarity(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(shape_err("cosine_similarity", av, bv));
        }
        let an = self.row_normalize(a);
        let bn = self.row_normalize(b);
        let bt = self.transpose(bn);
        self.matmul(an, bt)
    }

    /// Propagates gradients from the 1×1 node `output` back to every leaf.
    pub fn backward(&mut self, output: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::TapeConsumed);
        }
        let out_shape = self.value(output).shape();
        if out_shape != (1, 1) {
            return Err(Error::Shape {
                op: "backward",
                left: out_shape,
                right: (1, 1),
            });
        }
        self.consumed = true;

        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Matrix::scalar(1.0));

        for id in (0..=output.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            if !node.needs_grad {
                grads[id] = Some(g);
                continue;
            }
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, id: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[id];
        let y = &node.value;
        let mut acc = |v: Var, delta: Matrix| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.needs(*a) {
                    acc(*a, g.matmul_t(bv));
                }
                if self.needs(*b) {
                    acc(*b, av.t_matmul(g));
                }
            }
            Op::Transpose(a) => acc(*a, g.transpose()),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let ga = Matrix::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) * bv.get(i, j));
                let gb = Matrix::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) * av.get(i, j));
                acc(*a, ga);
                acc(*b, gb);
            }
            Op::ScaleConst(a, f) => acc(*a, g.scaled(*f)),
            Op::ScaleBy(a, s) => {
                let sv = self.value(*s).as_scalar();
                let av = self.value(*a);
                let gs: f64 = g.data().iter().zip(av.data()).map(|(p, q)| p * q).sum();
                acc(*a, g.scaled(sv));
                acc(*s, Matrix::scalar(gs));
            }
            Op::MulRow(a, v) => {
                let (av, rv) = (self.value(*a), self.value(*v));
                let ga = Matrix::from_fn(g.rows(), g.cols(), |i, j| g.get(i, j) * rv.get(0, j));
                let mut gv = Matrix::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for j in 0..g.cols() {
                        gv.data_mut()[j] += g.get(i, j) * av.get(i, j);
                    }
                }
                acc(*a, ga);
                acc(*v, gv);
            }
            Op::AddRow(a, b) => {
                let mut gb = Matrix::zeros(1, g.cols());
                for i in 0..g.rows() {
                    for (o, x) in gb.data_mut().iter_mut().zip(g.row(i)) {
                        *o += x;
                    }
                }
                acc(*a, g.clone());
                acc(*b, gb);
            }
            Op::MaskConst(a, m) => {
                let data = g.data().iter().zip(m.data()).map(|(p, q)| p * q).collect();
                acc(*a, Matrix::new(g.rows(), g.cols(), data).expect("mask shape"));
            }
            Op::Exp(a) => {
                let data = g.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
                acc(*a, Matrix::new(g.rows(), g.cols(), data).expect("exp shape"));
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                let data = g
                    .data()
                    .iter()
                    .zip(av.data())
                    .map(|(p, &x)| if x > 0.0 { *p } else { 0.0 })
                    .collect();
                acc(*a, Matrix::new(g.rows(), g.cols(), data).expect("relu shape"));
            }
            Op::Sum(a) => {
                let av = self.value(*a);
                acc(*a, Matrix::filled(av.rows(), av.cols(), g.as_scalar()));
            }
            Op::RowNormalize { x, norms } => {
                let mut gx = Matrix::zeros(g.rows(), g.cols());
                for (i, &n) in norms.iter().enumerate() {
                    if n <= NORM_EPS {
                        continue;
                    }
                    let (yr, gr) = (y.row(i), g.row(i));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (o, (yv, gv)) in gx.row_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = (gv - yv * dot) / n;
                    }
                }
                acc(*x, gx);
            }
            Op::SoftmaxRows { x, inv_temp } => {
                let beta = self.value(*inv_temp).as_scalar();
                let xv = self.value(*x);
                // Gradient w.r.t. the scaled logits z = beta * x. Masked entries
                // have y = 0 and so receive nothing.
                let mut gz = Matrix::zeros(g.rows(), g.cols());
                for i in 0..g.rows() {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for (o, (yv, gv)) in gz.row_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
                        *o = yv * (gv - dot);
                    }
                }
                let gbeta: f64 = gz.data().iter().zip(xv.data()).map(|(a, b)| a * b).sum();
                acc(*inv_temp, Matrix::scalar(gbeta));
                acc(*x, gz.scaled(beta));
            }
            Op::LogSoftmaxRows(x) => {
                let mut gx = g.clone();
                for i in 0..g.rows() {
                    let total: f64 = g.row(i).iter().sum();
                    for (o, lp) in gx.row_mut(i).iter_mut().zip(y.row(i)) {
                        *o -= lp.exp() * total;
                    }
                }
                acc(*x, gx);
            }
            Op::CrossEntropy { x, labels } => {
                let xv = self.value(*x);
                let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                let scale = -g.as_scalar() / labels.len().max(1) as f64;
                for (i, &l) in labels.iter().enumerate() {
                    gx.set(i, l, scale);
                }
                acc(*x, gx);
            }
            Op::GatherRows { x, idx } => {
                let xv = self.value(*x);
                let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                for (r, &src) in idx.iter().enumerate() {
                    for (o, v) in gx.row_mut(src).iter_mut().zip(g.row(r)) {
                        *o += v;
                    }
                }
                acc(*x, gx);
            }
            Op::GatherCols { x, idx } => {
                let xv = self.value(*x);
                let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                for i in 0..g.rows() {
                    for (c, &src) in idx.iter().enumerate() {
                        let cur = gx.get(i, src);
                        gx.set(i, src, cur + g.get(i, c));
                    }
                }
                acc(*x, gx);
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let r = self.value(p).rows();
                    let idx: Vec<usize> = (offset..offset + r).collect();
                    acc(p, g.select_rows(&idx));
                    offset += r;
                }
            }
            Op::Embed { x, row0, col0 } => {
                let (r, c) = self.value(*x).shape();
                let gx = Matrix::from_fn(r, c, |i, j| g.get(row0 + i, col0 + j));
                acc(*x, gx);
            }
            Op::NegSqDist(x) => {
                let xv = self.value(*x);
                let n = xv.rows();
                let mut gx = Matrix::zeros(n, xv.cols());
                for i in 0..n {
                    for j in 0..n {
                        let w = -2.0 * (g.get(i, j) + g.get(j, i));
                        if w == 0.0 {
                            continue;
                        }
                        let (xi, xj) = (xv.row(i), xv.row(j));
                        let diff: Vec<f64> = xi.iter().zip(xj).map(|(a, b)| a - b).collect();
                        for (o, dv) in gx.row_mut(i).iter_mut().zip(diff) {
                            *o += w * dv;
                        }
                    }
                }
                acc(*x, gx);
            }
        }
    }
}
