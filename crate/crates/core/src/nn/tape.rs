//! Reverse-mode gradient tape over batched matrices.
//!
//! Every operation computes its value eagerly and records enough of the
//! graph to run the chain rule backwards from a scalar loss. Values are
//! treated as `rows x cols` matrices where rows index the batch.

use std::sync::atomic::{AtomicU64, Ordering};

use super::linalg::{gemm_nn, gemm_nt, gemm_tn};
use super::tensor::Tensor;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(0);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    index: usize,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { x: Var, w: Var, b: Var },
    LeakyRelu { x: Var, leak: f64 },
    Softmax { x: Var },
    Concat { a: Var, b: Var },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    StopGradient,
    Mixture { weights: Var, parts: Vec<Var> },
    RowSquaredError { a: Var, b: Var },
    RowMin { parts: Vec<Var>, argmin: Vec<usize> },
    Mean { x: Var },
    Mse { pred: Var, target: Var },
    CrossEntropy { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of one scalar with respect to every node that required them.
#[derive(Debug)]
pub struct Gradients {
    tape: u64,
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros shaped like its value when nothing flowed.
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes.get(v.index).copied().unwrap_or((1, 1));
                Tensor::matrix(r, c, vec![0.0; r * c])
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(Error::Tape(format!("variable {} is not on this tape", v.index)));
        }
        Ok(())
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.index].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.index].value
    }

    /// Input that never receives gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Leaf whose gradient is wanted.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// `x W^T + b` with `x: B x in`, `W: out x in`, `b: out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        self.check(x)?;
        self.check(w)?;
        self.check(b)?;
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (rows, fan_in) = (xv.rows(), xv.cols());
        let fan_out = wv.rows();
        if wv.cols() != fan_in || bv.len() != fan_out {
            return Err(Error::Shape(format!(
                "linear: input width {fan_in}, weight {}x{}, bias {}",
                wv.rows(),
                wv.cols(),
                bv.len()
            )));
        }
        let mut out = Vec::with_capacity(rows * fan_out);
        for _ in 0..rows {
            out.extend_from_slice(bv.data());
        }
        gemm_nt(rows, fan_in, fan_out, xv.data(), wv.data(), 1.0, &mut out);
        let rg = self.rg(x) || self.rg(w) || self.rg(b);
        Ok(self.push(Tensor::matrix(rows, fan_out, out), Op::Linear { x, w, b }, rg))
    }

    pub fn leaky_relu(&mut self, x: Var, leak: f64) -> Result<Var> {
        self.check(x)?;
        let xv = self.value(x);
        let data = xv.data().iter().map(|&v| if v > 0.0 { v } else { leak * v }).collect();
        let t = Tensor::matrix(xv.rows(), xv.cols(), data);
        let rg = self.rg(x);
        Ok(self.push(t, Op::LeakyRelu { x, leak }, rg))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let xv = self.value(x);
        let (rows, cols) = (xv.rows(), xv.cols());
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            data.extend(softmax_row(xv.row_slice(r)));
        }
        let rg = self.rg(x);
        Ok(self.push(Tensor::matrix(rows, cols, data), Op::Softmax { x }, rg))
    }

    /// Column-wise concatenation of two matrices with equal row counts.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(Error::Shape(format!("concat rows {} vs {}", av.rows(), bv.rows())));
        }
        let (rows, ca, cb) = (av.rows(), av.cols(), bv.cols());
        let mut data = Vec::with_capacity(rows * (ca + cb));
        for r in 0..rows {
            data.extend_from_slice(av.row_slice(r));
            data.extend_from_slice(bv.row_slice(r));
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(rows, ca + cb, data), Op::Concat { a, b }, rg))
    }

    fn elementwise(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        self.check(a)?;
        self.check(b)?;
        let (av, bv) = (self.value(a), self.value(b));
        if !av.same_matrix_shape(bv) {
            return Err(Error::Shape(format!("{name}: {:?} vs {:?}", av.shape(), bv.shape())));
        }
        let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Tensor::matrix(av.rows(), av.cols(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.elementwise(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Add { a, b }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.elementwise(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Sub { a, b }, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.elementwise(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(t, Op::Mul { a, b }, rg))
    }

    /// Same value as `x`; no gradient flows back through it.
    pub fn stop_gradient(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x).clone();
        Ok(self.push(t, Op::StopGradient, false))
    }

    /// Row-wise convex combination: `y[b] = sum_k weights[b, k] * parts[k][b]`.
    pub fn mixture(&mut self, weights: Var, parts: &[Var]) -> Result<Var> {
        self.check(weights)?;
        for &p in parts {
            self.check(p)?;
        }
        let wv = self.value(weights);
        if wv.cols() != parts.len() || parts.is_empty() {
            return Err(Error::Shape(format!(
                "mixture: {} weights for {} parts",
                wv.cols(),
                parts.len()
            )));
        }
        let (rows, cols) = (self.value(parts[0]).rows(), self.value(parts[0]).cols());
        if wv.rows() != rows || parts.iter().any(|&p| self.value(p).rows() != rows || self.value(p).cols() != cols) {
            return Err(Error::Shape("mixture: parts and weights disagree".into()));
        }
        let mut out = vec![0.0; rows * cols];
        for (k, &p) in parts.iter().enumerate() {
            let pv = self.value(p).data();
            for r in 0..rows {
                let w = wv.data()[r * parts.len() + k];
                for c in 0..cols {
                    out[r * cols + c] += w * pv[r * cols + c];
                }
            }
        }
        let rg = self.rg(weights) || parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::matrix(rows, cols, out),
            Op::Mixture {
                weights,
                parts: parts.to_vec(),
            },
            rg,
        ))
    }

    /// Per-row squared Euclidean distance, `B x 1`.
    pub fn row_squared_error(&mut self, a: Var, b: Var) -> Result<Var> {
        let diff = self.elementwise(a, b, "row_squared_error", |x, y| x - y)?;
        let (rows, cols) = (diff.rows(), diff.cols());
        let data = (0..rows)
            .map(|r| diff.data()[r * cols..(r + 1) * cols].iter().map(|d| d * d).sum())
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(rows, 1, data), Op::RowSquaredError { a, b }, rg))
    }

    /// Element-wise minimum over equally shaped `B x 1` columns; ties pick the
    /// earliest part.
    pub fn row_min(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Shape("row_min of zero parts".into()))?;
        for &p in parts {
            self.check(p)?;
            if self.value(p).cols() != 1 || self.value(p).rows() != self.value(first).rows() {
                return Err(Error::Shape("row_min parts must be B x 1".into()));
            }
        }
        let rows = self.value(first).rows();
        let mut argmin = vec![0usize; rows];
        let mut out = vec![0.0; rows];
        for r in 0..rows {
            let mut best = self.value(first).data()[r];
            for (k, &p) in parts.iter().enumerate().skip(1) {
                let v = self.value(p).data()[r];
                if v < best {
                    best = v;
                    argmin[r] = k;
                }
            }
            out[r] = best;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(
            Tensor::matrix(rows, 1, out),
            Op::RowMin {
                parts: parts.to_vec(),
                argmin,
            },
            rg,
        ))
    }

    /// Index of the winning part per row from a [`Tape::row_min`] node.
    pub fn argmin_of(&self, v: Var) -> Option<&[usize]> {
        match &self.nodes.get(v.index)?.op {
            Op::RowMin { argmin, .. } => Some(argmin),
            _ => None,
        }
    }

    /// Mean over every entry, as a scalar.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let xv = self.value(x);
        let m = xv.data().iter().sum::<f64>() / xv.len() as f64;
        let rg = self.rg(x);
        Ok(self.push(Tensor::scalar(m), Op::Mean { x }, rg))
    }

    /// Squared error summed over features and averaged over the batch.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let diff = self.elementwise(pred, target, "mse", |x, y| x - y)?;
        let loss = diff.data().iter().map(|d| d * d).sum::<f64>() / diff.rows() as f64;
        let rg = self.rg(pred) || self.rg(target);
        Ok(self.push(Tensor::scalar(loss), Op::Mse { pred, target }, rg))
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        self.check(logits)?;
        let lv = self.value(logits);
        let (rows, cols) = (lv.rows(), lv.cols());
        if labels.len() != rows {
            return Err(Error::Shape(format!("{} labels for {rows} rows", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= cols) {
            return Err(Error::Index(format!("label {bad} for {cols} classes")));
        }
        let mut probs = Vec::with_capacity(rows * cols);
        let mut total = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = lv.row_slice(r);
            total += log_sum_exp(row) - row[label];
            probs.extend(softmax_row(row));
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(total / rows as f64),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check(loss)?;
        if self.value(loss).len() != 1 {
            return Err(Error::Tape(format!(
                "loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.index] = Some(Tensor::matrix(1, 1, vec![1.0]));

        for i in (0..=loss.index).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[i].take() else { continue };
            match &node.op {
                Op::Leaf | Op::StopGradient => {}
                Op::Linear { x, w, b } => {
                    let (xv, wv) = (self.value(*x), self.value(*w));
                    let (rows, fan_in, fan_out) = (xv.rows(), xv.cols(), wv.rows());
                    if self.rg(*x) {
                        let g = grad_slot(&mut grads, *x, rows, fan_in);
                        gemm_nn(rows, fan_out, fan_in, dy.data(), wv.data(), 1.0, g);
                    }
                    if self.rg(*w) {
                        let g = grad_slot(&mut grads, *w, fan_out, fan_in);
                        gemm_tn(fan_out, rows, fan_in, dy.data(), xv.data(), 1.0, g);
                    }
                    if self.rg(*b) {
                        let g = grad_slot(&mut grads, *b, 1, fan_out);
                        for r in 0..rows {
                            for (gj, dj) in g.iter_mut().zip(dy.row_slice(r)) {
                                *gj += dj;
                            }
                        }
                    }
                }
                Op::LeakyRelu { x, leak } => {
                    if self.rg(*x) {
                        let xv = self.value(*x);
                        let g = grad_slot(&mut grads, *x, xv.rows(), xv.cols());
                        for ((gj, &xj), &dj) in g.iter_mut().zip(xv.data()).zip(dy.data()) {
                            *gj += if xj > 0.0 { dj } else { leak * dj };
                        }
                    }
                }
                Op::Softmax { x } => {
                    if self.rg(*x) {
                        let y = &node.value;
                        let (rows, cols) = (y.rows(), y.cols());
                        let g = grad_slot(&mut grads, *x, rows, cols);
                        for r in 0..rows {
                            let yr = y.row_slice(r);
                            let dr = &dy.data()[r * cols..(r + 1) * cols];
                            let dot: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                            for c in 0..cols {
                                g[r * cols + c] += yr[c] * (dr[c] - dot);
                            }
                        }
                    }
                }
                Op::Concat { a, b } => {
                    let rows = dy.rows();
                    let ca = self.value(*a).cols();
                    let cb = self.value(*b).cols();
                    if self.rg(*a) {
                        let g = grad_slot(&mut grads, *a, rows, ca);
                        for r in 0..rows {
                            for c in 0..ca {
                                g[r * ca + c] += dy.data()[r * (ca + cb) + c];
                            }
                        }
                    }
                    if self.rg(*b) {
                        let g = grad_slot(&mut grads, *b, rows, cb);
                        for r in 0..rows {
                            for c in 0..cb {
                                g[r * cb + c] += dy.data()[r * (ca + cb) + ca + c];
                            }
                        }
                    }
                }
                Op::Add { a, b } | Op::Sub { a, b } => {
                    let sign = if matches!(node.op, Op::Sub { .. }) { -1.0 } else { 1.0 };
                    let (rows, cols) = (dy.rows(), dy.cols());
                    if self.rg(*a) {
                        add_into(grad_slot(&mut grads, *a, rows, cols), dy.data(), 1.0);
                    }
                    if self.rg(*b) {
                        add_into(grad_slot(&mut grads, *b, rows, cols), dy.data(), sign);
                    }
                }
                Op::Mul { a, b } => {
                    let (rows, cols) = (dy.rows(), dy.cols());
                    if self.rg(*a) {
                        let bv = self.value(*b).data();
                        let g = grad_slot(&mut grads, *a, rows, cols);
                        for j in 0..g.len() {
                            g[j] += dy.data()[j] * bv[j];
                        }
                    }
                    if self.rg(*b) {
                        let av = self.value(*a).data();
                        let g = grad_slot(&mut grads, *b, rows, cols);
                        for j in 0..g.len() {
                            g[j] += dy.data()[j] * av[j];
                        }
                    }
                }
                Op::Mixture { weights, parts } => {
                    let (rows, cols) = (dy.rows(), dy.cols());
                    let k = parts.len();
                    if self.rg(*weights) {
                        let mut gw = vec![0.0; rows * k];
                        for (pi, &p) in parts.iter().enumerate() {
                            let pv = self.value(p).data();
                            for r in 0..rows {
                                gw[r * k + pi] = (0..cols).map(|c| dy.data()[r * cols + c] * pv[r * cols + c]).sum();
                            }
                        }
                        add_into(grad_slot(&mut grads, *weights, rows, k), &gw, 1.0);
                    }
                    let wv = self.value(*weights).data();
                    for (pi, &p) in parts.iter().enumerate() {
                        if self.rg(p) {
                            let g = grad_slot(&mut grads, p, rows, cols);
                            for r in 0..rows {
                                let w = wv[r * k + pi];
                                for c in 0..cols {
                                    g[r * cols + c] += w * dy.data()[r * cols + c];
                                }
                            }
                        }
                    }
                }
                Op::RowSquaredError { a, b } => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let (rows, cols) = (av.rows(), av.cols());
                    let mut diff: Vec<f64> = av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect();
                    for r in 0..rows {
                        let s = 2.0 * dy.data()[r];
                        for c in 0..cols {
                            diff[r * cols + c] *= s;
                        }
                    }
                    if self.rg(*a) {
                        add_into(grad_slot(&mut grads, *a, rows, cols), &diff, 1.0);
                    }
                    if self.rg(*b) {
                        add_into(grad_slot(&mut grads, *b, rows, cols), &diff, -1.0);
                    }
                }
                Op::RowMin { parts, argmin } => {
                    let rows = argmin.len();
                    for (k, &p) in parts.iter().enumerate() {
                        if !self.rg(p) {
                            continue;
                        }
                        let g = grad_slot(&mut grads, p, rows, 1);
                        for r in 0..rows {
                            if argmin[r] == k {
                                g[r] += dy.data()[r];
                            }
                        }
                    }
                }
                Op::Mean { x } => {
                    if self.rg(*x) {
                        let xv = self.value(*x);
                        let s = dy.item() / xv.len() as f64;
                        let g = grad_slot(&mut grads, *x, xv.rows(), xv.cols());
                        g.iter_mut().for_each(|v| *v += s);
                    }
                }
                Op::Mse { pred, target } => {
                    let (pv, tv) = (self.value(*pred), self.value(*target));
                    let (rows, cols) = (pv.rows(), pv.cols());
                    let s = 2.0 * dy.item() / rows as f64;
                    let diff: Vec<f64> = pv.data().iter().zip(tv.data()).map(|(x, y)| s * (x - y)).collect();
                    if self.rg(*pred) {
                        add_into(grad_slot(&mut grads, *pred, rows, cols), &diff, 1.0);
                    }
                    if self.rg(*target) {
                        add_into(grad_slot(&mut grads, *target, rows, cols), &diff, -1.0);
                    }
                }
                Op::CrossEntropy { logits, labels, probs } => {
                    if self.rg(*logits) {
                        let lv = self.value(*logits);
                        let (rows, cols) = (lv.rows(), lv.cols());
                        let s = dy.item() / rows as f64;
                        let g = grad_slot(&mut grads, *logits, rows, cols);
                        for (r, &label) in labels.iter().enumerate() {
                            for c in 0..cols {
                                let onehot = if c == label { 1.0 } else { 0.0 };
                                g[r * cols + c] += s * (probs[r * cols + c] - onehot);
                            }
                        }
                    }
                }
            }
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(dy);
            }
        }

        let shapes = self.nodes.iter().map(|n| (n.value.rows(), n.value.cols())).collect();
        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| {
                g.filter(|_| matches!(n.op, Op::Leaf))
                    .map(|g| Tensor::new(n.value.shape().to_vec(), g.into_data()).expect("leaf gradient shape"))
            })
            .collect();
        Ok(Gradients {
            tape: self.id,
            grads,
            shapes,
        })
    }
}

fn grad_slot(grads: &mut [Option<Tensor>], v: Var, rows: usize, cols: usize) -> &mut [f64] {
    grads[v.index]
        .get_or_insert_with(|| Tensor::matrix(rows, cols, vec![0.0; rows * cols]))
        .data_mut()
}

fn add_into(dst: &mut [f64], src: &[f64], scale: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_row(row: &[f64]) -> Vec<f64> {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}
