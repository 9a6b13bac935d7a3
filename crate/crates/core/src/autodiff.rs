//! Reverse-mode automatic differentiation over a single-use tape.
//!
//! A [`Tape`] records every primitive applied during one forward pass.
//! Calling [`Tape::backward`] walks the records in reverse, accumulates
//! gradients into every ancestor that requires them and consumes the tape;
//! a second call is an error. Re-record for the next step.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use crate::error::{shape_err, Error, Result};
use crate::tensor::{matmul_a_bt_acc, matmul_at_b_acc, matmul_into, softmax_in_place, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

/// Constant sparse matrix in CSR layout, used for neighbourhood aggregation
/// and pooling (`out = S * x`).
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    weights: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, weight)` triplets; duplicate entries are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, f64)]) -> Result<Self> {
        let mut sorted = triplets.to_vec();
        for &(r, c, _) in &sorted {
            if r >= rows || c >= cols {
                return Err(Error::Index(format!(
                    "sparse entry ({r}, {c}) outside {rows}x{cols}"
                )));
            }
        }
        sorted.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; rows + 1];
        let mut col_idx = Vec::with_capacity(sorted.len());
        let mut weights: Vec<f64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, w) in sorted {
            if last == Some((r, c)) {
                *weights.last_mut().unwrap() += w;
                continue;
            }
            last = Some((r, c));
            row_ptr[r + 1] += 1;
            col_idx.push(c);
            weights.push(w);
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self {
            rows,
            cols,
            row_ptr,
            col_idx,
            weights,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.weights.len()
    }

    /// Iterates `(col, weight)` over row `r`.
    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.weights[span].iter().copied())
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(&[self.rows, self.cols]);
        let cols = self.cols;
        for r in 0..self.rows {
            for (c, w) in self.row_entries(r) {
                t.values_mut()[r * cols + c] += w;
            }
        }
        t
    }

    fn apply(&self, x: &[f64], d: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.rows * d];
        for r in 0..self.rows {
            let o = &mut out[r * d..(r + 1) * d];
            for (c, w) in self.row_entries(r) {
                for (oi, xi) in o.iter_mut().zip(&x[c * d..(c + 1) * d]) {
                    *oi += w * xi;
                }
            }
        }
        out
    }

    fn apply_transpose_acc(&self, g: &[f64], d: usize, out: &mut [f64]) {
        for r in 0..self.rows {
            let gr = &g[r * d..(r + 1) * d];
            for (c, w) in self.row_entries(r) {
                for (oi, gi) in out[c * d..(c + 1) * d].iter_mut().zip(gr) {
                    *oi += w * gi;
                }
            }
        }
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Vec<f64>),
    Scale(Var, f64),
    Relu(Var),
    ConcatCols(Var, Var),
    Sparse(Var, Arc<SparseMatrix>),
    SumAll(Var),
    SoftmaxCrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<f64>,
    },
}

impl Op {
    fn kind(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::AddBias(..) => "add_bias",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MulConst(..) => "mul_const",
            Op::Scale(..) => "scale",
            Op::Relu(..) => "relu",
            Op::ConcatCols(..) => "concat_cols",
            Op::Sparse(..) => "sparse_matmul",
            Op::SumAll(..) => "sum",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Single-use record of one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
    consumed: bool,
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

    /// A leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as constant during backward.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copies the current value of `v` into a fresh constant: gradients
    /// stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn op_kind(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.kind()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.value(a).require_matrix("matmul")?;
        let (k2, m) = self.value(b).require_matrix("matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", self.value(a).shape(), self.value(b).shape()));
        }
        let mut out = vec![0.0; n * m];
        matmul_into(self.value(a).values(), self.value(b).values(), &mut out, n, k, m);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::MatMul(a, b), rg))
    }

    /// `x [n x m] + bias [1 x m]` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (n, m) = self.value(x).require_matrix("add_bias")?;
        if self.value(bias).numel() != m {
            return Err(shape_err("add_bias", self.value(x).shape(), self.value(bias).shape()));
        }
        let b = self.value(bias).values().to_vec();
        let mut out = self.value(x).values().to_vec();
        for row in out.chunks_mut(m.max(1)) {
            for (o, bi) in row.iter_mut().zip(&b) {
                *o += bi;
            }
        }
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(Tensor::new(vec![n, m], out)?, Op::AddBias(x, bias), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err(op, self.value(a).shape(), self.value(b).shape()));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let out: Vec<f64> = va
            .values()
            .iter()
            .zip(vb.values())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = va.shape().to_vec();
        let rg = self.rg(a) || self.rg(b);
        self.push(Tensor::new(shape, out).expect("same shape"), op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    /// Elementwise product with a constant mask (dropout).
    pub fn mul_const(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(x).numel() {
            return Err(shape_err("mul_const", self.value(x).shape(), &[mask.len()]));
        }
        let out: Vec<f64> = self
            .value(x)
            .values()
            .iter()
            .zip(&mask)
            .map(|(a, b)| a * b)
            .collect();
        let shape = self.value(x).shape().to_vec();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(shape, out)?, Op::MulConst(x, mask), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        let out: Vec<f64> = self.value(x).values().iter().map(|v| v * s).collect();
        let shape = self.value(x).shape().to_vec();
        let rg = self.rg(x);
        self.push(Tensor::new(shape, out).expect("same shape"), Op::Scale(x, s), rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.value(x).values().iter().map(|&v| v.max(0.0)).collect();
        let shape = self.value(x).shape().to_vec();
        let rg = self.rg(x);
        self.push(Tensor::new(shape, out).expect("same shape"), Op::Relu(x), rg)
    }

    /// `[a || b]` along columns; row counts must agree.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, ma) = self.value(a).require_matrix("concat_cols")?;
        let (n2, mb) = self.value(b).require_matrix("concat_cols")?;
        if n != n2 {
            return Err(shape_err("concat_cols", self.value(a).shape(), self.value(b).shape()));
        }
        let va = self.value(a).values();
        let vb = self.value(b).values();
        let mut out = Vec::with_capacity(n * (ma + mb));
        for i in 0..n {
            out.extend_from_slice(&va[i * ma..(i + 1) * ma]);
            out.extend_from_slice(&vb[i * mb..(i + 1) * mb]);
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(vec![n, ma + mb], out)?, Op::ConcatCols(a, b), rg))
    }

    /// `S * x` for a constant sparse `S`.
    pub fn sparse_matmul(&mut self, s: Arc<SparseMatrix>, x: Var) -> Result<Var> {
        let (n, d) = self.value(x).require_matrix("sparse_matmul")?;
        if s.cols() != n {
            return Err(shape_err("sparse_matmul", &[s.rows(), s.cols()], self.value(x).shape()));
        }
        let out = s.apply(self.value(x).values(), d);
        let rows = s.rows();
        let rg = self.rg(x);
        Ok(self.push(Tensor::new(vec![rows, d], out)?, Op::Sparse(x, s), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: f64 = self.value(x).values().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(total), Op::SumAll(x), rg)
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of
    /// `logits`. Returns the scalar loss; probabilities are available via
    /// [`Tape::probs`].
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (n, c) = self.value(logits).require_matrix("softmax_cross_entropy")?;
        if labels.len() != n {
            return Err(shape_err("softmax_cross_entropy", &[n, c], &[labels.len()]));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::Index(format!("label {bad} out of range for {c} classes")));
        }
        let mut probs = self.value(logits).values().to_vec();
        let mut loss = 0.0;
        for (row, (&y, lrow)) in probs
            .chunks_mut(c)
            .zip(labels.iter().zip(self.value(logits).values().chunks(c)))
        {
            let max = lrow.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + lrow.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - lrow[y];
            softmax_in_place(row);
        }
        loss /= n.max(1) as f64;
        let rg = self.rg(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        ))
    }

    /// Softmax probabilities saved by a cross-entropy node.
    pub fn probs(&self, loss: Var) -> Option<Tensor> {
        match &self.nodes[loss.0].op {
            Op::SoftmaxCrossEntropy { logits, probs, .. } => {
                Tensor::new(self.value(*logits).shape().to_vec(), probs.clone()).ok()
            }
            _ => None,
        }
    }

    /// Hash of the active/inactive pattern of every ReLU on the tape.
    /// Two evaluations with equal signatures lie in the same linear piece.
    pub fn relu_signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for node in &self.nodes {
            if let Op::Relu(x) = node.op {
                for &v in self.nodes[x.0].value.values() {
                    (v > 0.0).hash(&mut h);
                }
            }
        }
        h.finish()
    }

    /// Back-propagates from the scalar `loss`, consuming the tape.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.consumed {
            return Err(Error::Contract(
                "backward called twice on the same tape; re-record the forward pass".into(),
            ));
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = Some(g);
                continue;
            }
            let nodes = &self.nodes;
            let rg = |v: Var| nodes[v.0].requires_grad;
            let val = |v: Var| &nodes[v.0].value;
            let mut acc = |v: Var, f: &dyn Fn(&mut [f64])| {
                let slot = grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.numel()]);
                f(slot);
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (n, k) = (val(*a).rows(), val(*a).cols());
                    let m = val(*b).cols();
                    if rg(*a) {
                        acc(*a, &|s| matmul_a_bt_acc(&g, val(*b).values(), s, n, k, m));
                    }
                    if rg(*b) {
                        acc(*b, &|s| matmul_at_b_acc(val(*a).values(), &g, s, n, k, m));
                    }
                }
                Op::AddBias(x, b) => {
                    if rg(*x) {
                        acc(*x, &|s| add_into(s, &g));
                    }
                    if rg(*b) {
                        let m = val(*b).numel();
                        acc(*b, &|s| {
                            for row in g.chunks(m) {
                                add_into(s, row);
                            }
                        });
                    }
                }
                Op::Add(a, b) => {
                    if rg(*a) {
                        acc(*a, &|s| add_into(s, &g));
                    }
                    if rg(*b) {
                        acc(*b, &|s| add_into(s, &g));
                    }
                }
                Op::Sub(a, b) => {
                    if rg(*a) {
                        acc(*a, &|s| add_into(s, &g));
                    }
                    if rg(*b) {
                        acc(*b, &|s| {
                            for (si, gi) in s.iter_mut().zip(&g) {
                                *si -= gi;
                            }
                        });
                    }
                }
                Op::Mul(a, b) => {
                    if rg(*a) {
                        acc(*a, &|s| mul_add_into(s, &g, val(*b).values()));
                    }
                    if rg(*b) {
                        acc(*b, &|s| mul_add_into(s, &g, val(*a).values()));
                    }
                }
                Op::MulConst(x, mask) => {
                    acc(*x, &|s| mul_add_into(s, &g, mask));
                }
                Op::Scale(x, k) => {
                    let k = *k;
                    acc(*x, &|s| {
                        for (si, gi) in s.iter_mut().zip(&g) {
                            *si += k * gi;
                        }
                    });
                }
                Op::Relu(x) => {
                    acc(*x, &|s| {
                        for ((si, gi), xi) in s.iter_mut().zip(&g).zip(val(*x).values()) {
                            if *xi > 0.0 {
                                *si += gi;
                            }
                        }
                    });
                }
                Op::ConcatCols(a, b) => {
                    let (n, ma) = (val(*a).rows(), val(*a).cols());
                    let mb = val(*b).cols();
                    let w = ma + mb;
                    if rg(*a) {
                        acc(*a, &|s| {
                            for i in 0..n {
                                add_into(&mut s[i * ma..(i + 1) * ma], &g[i * w..i * w + ma]);
                            }
                        });
                    }
                    if rg(*b) {
                        acc(*b, &|s| {
                            for i in 0..n {
                                add_into(&mut s[i * mb..(i + 1) * mb], &g[i * w + ma..(i + 1) * w]);
                            }
                        });
                    }
                }
                Op::Sparse(x, sm) => {
                    let d = val(*x).cols();
                    acc(*x, &|s| sm.apply_transpose_acc(&g, d, s));
                }
                Op::SumAll(x) => {
                    let g0 = g[0];
                    acc(*x, &|s| {
                        for si in s.iter_mut() {
                            *si += g0;
                        }
                    });
                }
                Op::SoftmaxCrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let n = labels.len();
                    let c = val(*logits).cols();
                    let scale = g[0] / n.max(1) as f64;
                    acc(*logits, &|s| {
                        for (i, &y) in labels.iter().enumerate() {
                            for j in 0..c {
                                let target = if j == y { 1.0 } else { 0.0 };
                                s[i * c + j] += scale * (probs[i * c + j] - target);
                            }
                        }
                    });
                }
            }
            grads[idx] = Some(g);
        }

        self.grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, node)| match (g, &node.op, node.requires_grad) {
                (Some(g), Op::Leaf, true) => Tensor::new(node.value.shape().to_vec(), g).ok(),
                (None, Op::Leaf, true) => Some(Tensor::zeros(node.value.shape())),
                (Some(g), _, true) => Tensor::new(node.value.shape().to_vec(), g).ok(),
                _ => None,
            })
            .collect();
        Ok(())
    }

    /// Gradient of the last backward pass with respect to `v`. Leaves that
    /// require gradients but are off the loss path report zeros.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

fn mul_add_into(dst: &mut [f64], a: &[f64], b: &[f64]) {
    for ((d, x), y) in dst.iter_mut().zip(a).zip(b) {
        *d += x * y;
    }
}

/// Denominator floor of the gradcheck relative error.
pub const GRADCHECK_FLOOR: f64 = 1e-4;

/// Compares tape gradients against central differences.
///
/// `f` records a scalar function of the given parameter leaves. Returns the
/// largest `|analytic - numeric| / max(|analytic| + |numeric|, GRADCHECK_FLOOR)`
/// over all coordinates. The floor keeps round-off in the difference
/// quotient of near-zero gradients from dominating. Coordinates whose `±h` perturbation flips any ReLU (a kink
/// inside the stencil) are skipped.
pub fn gradcheck<F>(f: F, params: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let record = |ps: &[Tensor]| -> Result<(Tape, Var, Vec<Var>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape, out, vars))
    };

    let (mut tape, out, vars) = record(params)?;
    let base_sig = tape.relu_signature();
    tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|&v| tape.grad(v).cloned().expect("param leaf has grad"))
        .collect();

    let mut worst: f64 = 0.0;
    let mut work = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        for j in 0..p.numel() {
            let orig = p.values()[j];
            work[pi].values_mut()[j] = orig + h;
            let (tp, op, _) = record(&work)?;
            work[pi].values_mut()[j] = orig - h;
            let (tm, om, _) = record(&work)?;
            work[pi].values_mut()[j] = orig;
            if tp.relu_signature() != base_sig || tm.relu_signature() != base_sig {
                continue;
            }
            let numeric = (tp.value(op).values()[0] - tm.value(om).values()[0]) / (2.0 * h);
            let a = analytic[pi].values()[j];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(GRADCHECK_FLOOR);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn relu_forward_and_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::row(&[-1.0, 0.0, 2.0]));
        let y = tape.relu(x);
        assert_eq!(tape.value(y).values(), &[0.0, 0.0, 2.0]);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().values(), &[0.0, 0.0, 1.0]);

        let mut tape = Tape::new();
        let x = tape.param(Tensor::row(&[-3.0, -0.5]));
        let y = tape.relu(x);
        assert!(tape.value(y).values().iter().all(|&v| v == 0.0));
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert!(tape.grad(x).unwrap().values().iter().all(|&v| v == 0.0));

        let mut tape = Tape::new();
        let x = tape.param(Tensor::row(&[3.0]));
        let y = tape.relu(x);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().values(), &[1.0]);
    }

    #[test]
    fn cross_entropy_examples() {
        let mut tape = Tape::new();
        let l = tape.constant(t(&[vec![0.3, 0.3]]));
        let loss = tape.softmax_cross_entropy(l, &[1]).unwrap();
        assert!((tape.value(loss).values()[0] - 2f64.ln()).abs() < 1e-12);
        let p = tape.probs(loss).unwrap();
        assert!((p.values()[0] - 0.5).abs() < 1e-12);

        let mut tape = Tape::new();
        let l = tape.constant(t(&[vec![1000.0, 0.0]]));
        let loss = tape.softmax_cross_entropy(l, &[0]).unwrap();
        let v = tape.value(loss).values()[0];
        assert!(v.is_finite() && v.abs() < 1e-12);

        let mut tape = Tape::new();
        let l = tape.constant(t(&[vec![1.0, 2.0]]));
        let loss = tape.softmax_cross_entropy(l, &[1]).unwrap();
        let expected = (1.0 + (-1f64).exp()).ln();
        assert!((tape.value(loss).values()[0] - expected).abs() < 1e-12);
        assert!((expected - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let mut tape = Tape::new();
        let l = tape.constant(t(&[vec![1.0, 2.0]]));
        assert!(matches!(
            tape.softmax_cross_entropy(l, &[2]),
            Err(Error::Index(_))
        ));
    }

    #[test]
    fn linear_sum_gradient_is_input_broadcast() {
        // loss = sum(W x): dloss/dW[i][j] = x[j] for every row i
        let mut tape = Tape::new();
        let w = tape.param(t(&[vec![0.1, 0.2, 0.3], vec![-1.0, 2.0, 0.5]]));
        let x = tape.constant(t(&[vec![1.5], vec![-2.0], vec![4.0]]));
        let wx = tape.matmul(w, x).unwrap();
        let loss = tape.sum(wx);
        tape.backward(loss).unwrap();
        let g = tape.grad(w).unwrap();
        assert_eq!(g.values(), &[1.5, -2.0, 4.0, 1.5, -2.0, 4.0]);
    }

    #[test]
    fn unused_param_gets_zero_grad() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::row(&[1.0, 2.0]));
        let unused = tape.param(Tensor::row(&[5.0]));
        let s = tape.sum(a);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(unused).unwrap().values(), &[0.0]);
    }

    #[test]
    fn backward_contracts() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::row(&[1.0, 2.0]));
        assert!(matches!(tape.backward(a), Err(Error::Contract(_))));
        let s = tape.sum(a);
        tape.backward(s).unwrap();
        assert!(matches!(tape.backward(s), Err(Error::Contract(_))));
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::row(&[1.0, 2.0]));
        let c = tape.detach(x);
        let d = tape.sub(x, c).unwrap();
        let cat = tape.concat_cols(d, c).unwrap();
        let sq = tape.mul(cat, cat).unwrap();
        let s = tape.sum(sq);
        tape.backward(s).unwrap();
        // d = x - c = 0 at the current point, so the only path is 2*d = 0
        assert_eq!(tape.grad(x).unwrap().values(), &[0.0, 0.0]);
    }

    #[test]
    fn gradcheck_square() {
        let err = gradcheck(
            |tape, p| {
                let sq = tape.mul(p[0], p[0])?;
                Ok(tape.sum(sq))
            },
            &[Tensor::scalar(3.0)],
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn gradcheck_skips_relu_kink() {
        // x = 0 sits exactly on the kink; the coordinate is excluded
        let err = gradcheck(
            |tape, p| {
                let r = tape.relu(p[0]);
                Ok(tape.sum(r))
            },
            &[Tensor::row(&[0.0, 1.0])],
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn sparse_matches_dense() {
        let s = SparseMatrix::from_triplets(2, 3, &[(0, 0, 1.0), (0, 2, 0.5), (1, 1, -2.0), (0, 2, 0.5)])
            .unwrap();
        assert_eq!(s.nnz(), 3);
        let dense = s.to_dense();
        assert_eq!(dense.values(), &[1.0, 0.0, 1.0, 0.0, -2.0, 0.0]);
        let x = t(&[vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]]);
        let mut tape = Tape::new();
        let xv = tape.param(x.clone());
        let y = tape.sparse_matmul(Arc::new(s), xv).unwrap();
        let expect = crate::tensor::matmul(&dense, &x).unwrap();
        assert_eq!(tape.value(y), &expect);
    }
}
