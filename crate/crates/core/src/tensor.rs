//! Dense row-major `f64` tensors.
//!
//! Values only: gradients live on the [`Tape`](crate::autodiff::Tape) that
//! recorded the computation.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(shape_err("Tensor::new", &shape, &[data.len()]));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Builds an `n x m` matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(n * m);
        for r in rows {
            if r.len() != m {
                return Err(shape_err("Tensor::from_rows", &[n, m], &[r.len()]));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            shape: vec![n, m],
            data,
        })
    }

    /// A `1 x m` row vector.
    pub fn row(values: &[f64]) -> Self {
        Self {
            shape: vec![1, values.len()],
            data: values.to_vec(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_values(self) -> Vec<f64> {
        self.data
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Trailing dimensions flattened; `1` for a vector.
    pub fn cols(&self) -> usize {
        if self.shape.len() < 2 {
            1
        } else {
            self.shape[1..].iter().product()
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols() + j]
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn require_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::Contract(format!(
                "{op} expects a matrix, got shape {:?}",
                self.shape
            )));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    /// Rows selected by `index` (repeats allowed).
    pub fn gather_rows(&self, index: &[usize]) -> Result<Self> {
        let c = self.cols();
        let n = self.rows();
        let mut data = Vec::with_capacity(index.len() * c);
        for &i in index {
            if i >= n {
                return Err(Error::Index(format!("row {i} out of range for {n} rows")));
            }
            data.extend_from_slice(self.row_slice(i));
        }
        Ok(Self {
            shape: vec![index.len(), c],
            data,
        })
    }

    /// A matrix with `n` copies of `row`.
    pub fn broadcast_row(row: &[f64], n: usize) -> Self {
        let mut data = Vec::with_capacity(n * row.len());
        for _ in 0..n {
            data.extend_from_slice(row);
        }
        Self {
            shape: vec![n, row.len()],
            data,
        }
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn vstack(parts: &[Tensor]) -> Result<Self> {
        let c = parts.first().map_or(0, Tensor::cols);
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            if p.cols() != c {
                return Err(shape_err("vstack", &[n, c], p.shape()));
            }
            n += p.rows();
            data.extend_from_slice(&p.data);
        }
        Ok(Self {
            shape: vec![n, c],
            data,
        })
    }

    /// Index of the largest element of each row; first index wins ties.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows())
            .map(|i| argmax(self.row_slice(i)))
            .collect()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

/// `out[n x m] = a[n x k] * b[k x m]`, accumulating in i-k-j order.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let out_row = &mut out[i * m..(i + 1) * m];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let b_row = &b[p * m..(p + 1) * m];
            for (o, &b_pj) in out_row.iter_mut().zip(b_row) {
                *o += a_ip * b_pj;
            }
        }
    }
}

/// `out[k x m] += a[n x k]^T * g[n x m]`
pub(crate) fn matmul_at_b_acc(a: &[f64], g: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let a_row = &a[i * k..(i + 1) * k];
        let g_row = &g[i * m..(i + 1) * m];
        for (p, &a_ip) in a_row.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let out_row = &mut out[p * m..(p + 1) * m];
            for (o, &g_ij) in out_row.iter_mut().zip(g_row) {
                *o += a_ip * g_ij;
            }
        }
    }
}

/// `out[n x k] += g[n x m] * b[k x m]^T`
pub(crate) fn matmul_a_bt_acc(g: &[f64], b: &[f64], out: &mut [f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let g_row = &g[i * m..(i + 1) * m];
        let out_row = &mut out[i * k..(i + 1) * k];
        for (p, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[p * m..(p + 1) * m];
            let mut acc = 0.0;
            for (x, y) in g_row.iter().zip(b_row) {
                acc += x * y;
            }
            *o += acc;
        }
    }
}

/// Plain (untracked) matrix product.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (n, k) = a.require_matrix("matmul")?;
    let (k2, m) = b.require_matrix("matmul")?;
    if k != k2 {
        return Err(shape_err("matmul", a.shape(), b.shape()));
    }
    let mut out = vec![0.0; n * m];
    matmul_into(a.values(), b.values(), &mut out, n, k, m);
    Tensor::new(vec![n, m], out)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let c = logits.cols();
    let mut out = logits.clone();
    for row in out.data.chunks_mut(c.max(1)) {
        softmax_in_place(row);
    }
    out
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity_and_hand_case() {
        let a = Tensor::from_rows(&[
            vec![1.0, -2.0, 0.5],
            vec![3.0, 4.0, 5.0],
            vec![-1.0, 0.0, 2.0],
        ])
        .unwrap();
        assert_eq!(matmul(&a, &Tensor::eye(3)).unwrap(), a);

        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.values(), &[3.0, 7.0]);

        let z = Tensor::zeros(&[2, 2]);
        assert!(matmul(&z, &a).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_mismatch_reports_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        match matmul(&a, &b) {
            Err(Error::Shape { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("expected shape error, got {other:?}"),
        }
    }

    #[test]
    fn new_rejects_bad_numel() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn softmax_is_stable_for_large_logits() {
        let t = Tensor::from_rows(&[vec![1000.0, 0.0], vec![-1000.0, 1000.0]]).unwrap();
        let p = softmax_rows(&t);
        assert!(p.all_finite());
        assert!((p.get(0, 0) - 1.0).abs() < 1e-12);
        assert!((p.get(1, 1) - 1.0).abs() < 1e-12);
    }
}
