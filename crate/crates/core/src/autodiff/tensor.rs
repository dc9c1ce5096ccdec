//! Dense row-major `f64` arrays and the kernels shared by the tape and the
//! tape-free inference paths.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} needs {n} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1, 1],
            data: vec![value],
        }
    }

    /// A `[1, n]` row vector.
    pub fn row(values: &[f64]) -> Self {
        Self {
            shape: vec![1, values.len()],
            data: values.to_vec(),
        }
    }

    /// A `[n, 1]` column vector.
    pub fn column(values: &[f64]) -> Self {
        Self {
            shape: vec![values.len(), 1],
            data: values.to_vec(),
        }
    }

    /// Stacks equal-length rows into a `[rows, cols]` matrix.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dim(
                    "from_rows",
                    format!("row {i} has {} values, expected {cols}", r.len()),
                ));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            shape: vec![rows.len(), cols],
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
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

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Leading dimension of a 2-D tensor.
    pub fn rows(&self) -> usize {
        self.shape.first().copied().unwrap_or(1)
    }

    /// Trailing dimension of a 2-D tensor.
    pub fn cols(&self) -> usize {
        if self.shape.len() < 2 {
            self.shape.first().copied().unwrap_or(1)
        } else {
            self.shape[1]
        }
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::dim("item", format!("shape {:?}", self.shape)));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub(crate) fn ensure_finite(self, op: &'static str) -> Result<Self> {
        if self.is_finite() {
            Ok(self)
        } else {
            Err(Error::numeric(op, "non-finite value in output"))
        }
    }

    fn require_2d(&self, op: &'static str) -> Result<(usize, usize)> {
        if self.shape.len() != 2 {
            return Err(Error::dim(op, format!("expected 2-D, got {:?}", self.shape)));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    fn require_same(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(
                op,
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(())
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (n, k) = self.require_2d("matmul")?;
        let (k2, m) = other.require_2d("matmul")?;
        if k != k2 {
            return Err(Error::dim(
                "matmul",
                format!("[{n}, {k}] x [{k2}, {m}]"),
            ));
        }
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let a_row = &self.data[i * k..(i + 1) * k];
            let o_row = &mut out[i * m..(i + 1) * m];
            for (p, &a) in a_row.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[p * m..(p + 1) * m];
                for (o, &b) in o_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Tensor::new(vec![n, m], out)?.ensure_finite("matmul")
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (n, m) = self.require_2d("transpose")?;
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..m {
                out[j * n + i] = self.data[i * m + j];
            }
        }
        Tensor::new(vec![m, n], out)
    }

    /// `[n, m] + [1, m]`, the bias broadcast over rows.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let (n, m) = self.require_2d("add_bias")?;
        if bias.numel() != m {
            return Err(Error::dim(
                "add_bias",
                format!("bias {:?} for [{n}, {m}]", bias.shape),
            ));
        }
        let mut out = self.data.clone();
        for row in out.chunks_mut(m) {
            for (o, &b) in row.iter_mut().zip(&bias.data) {
                *o += b;
            }
        }
        Tensor::new(vec![n, m], out)?.ensure_finite("add_bias")
    }

    pub fn relu(&self) -> Tensor {
        self.map(|v| v.max(0.0))
    }

    pub fn softmax_rows(&self) -> Result<Tensor> {
        let (_, m) = self.require_2d("softmax")?;
        let mut out = self.data.clone();
        for row in out.chunks_mut(m) {
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
        Tensor::new(self.shape.clone(), out)?.ensure_finite("softmax")
    }

    pub fn log_softmax_rows(&self) -> Result<Tensor> {
        let (_, m) = self.require_2d("log_softmax")?;
        let mut out = self.data.clone();
        for row in out.chunks_mut(m) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        Tensor::new(self.shape.clone(), out)?.ensure_finite("log_softmax")
    }

    pub fn ln(&self) -> Result<Tensor> {
        self.map(f64::ln).ensure_finite("log")
    }

    pub fn softplus(&self) -> Result<Tensor> {
        self.map(softplus).ensure_finite("softplus")
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.require_same(other, "mul")?;
        self.zip(other, |a, b| a * b).ensure_finite("mul")
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.require_same(other, "add")?;
        self.zip(other, |a, b| a + b).ensure_finite("add")
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.require_same(other, "sub")?;
        self.zip(other, |a, b| a - b).ensure_finite("sub")
    }

    pub fn scale(&self, s: f64) -> Result<Tensor> {
        self.map(|v| v * s).ensure_finite("scale")
    }

    /// Multiplies row `i` of `[n, m]` by `col[i]` (`col` is `[n, 1]`).
    pub fn mul_col(&self, col: &Tensor) -> Result<Tensor> {
        let (n, m) = self.require_2d("mul_col")?;
        if col.numel() != n {
            return Err(Error::dim(
                "mul_col",
                format!("column {:?} for [{n}, {m}]", col.shape),
            ));
        }
        let mut out = self.data.clone();
        for (row, &c) in out.chunks_mut(m).zip(&col.data) {
            for v in row.iter_mut() {
                *v *= c;
            }
        }
        Tensor::new(vec![n, m], out)?.ensure_finite("mul_col")
    }

    /// Horizontal concatenation of 2-D tensors with equal row counts.
    pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
        let mut n = None;
        let mut total = 0;
        for p in parts {
            let (r, c) = p.require_2d("concat")?;
            if *n.get_or_insert(r) != r {
                return Err(Error::dim("concat", "row counts differ"));
            }
            total += c;
        }
        let n = n.unwrap_or(0);
        let mut out = Vec::with_capacity(n * total);
        for i in 0..n {
            for p in parts {
                out.extend_from_slice(p.row_slice(i));
            }
        }
        Tensor::new(vec![n, total], out)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.data.len() as f64
    }

    /// `[n, m] -> [n, 1]`
    pub fn sum_rows(&self) -> Result<Tensor> {
        let (n, m) = self.require_2d("sum_rows")?;
        let data = self.data.chunks(m).map(|r| r.iter().sum()).collect();
        Tensor::new(vec![n, 1], data)
    }

    /// `[n, m] -> [1, m]`
    pub fn sum_cols(&self) -> Result<Tensor> {
        let (_, m) = self.require_2d("sum_cols")?;
        let mut out = vec![0.0; m];
        for row in self.data.chunks(m) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        Tensor::new(vec![1, m], out)
    }

    /// Index of the largest entry in each row; ties resolve to the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        let m = self.cols();
        self.data
            .chunks(m)
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    /// Selects rows by index into a new `[idx.len(), m]` tensor.
    pub fn select_rows(&self, idx: &[usize]) -> Tensor {
        let m = self.cols();
        let mut out = Vec::with_capacity(idx.len() * m);
        for &i in idx {
            out.extend_from_slice(self.row_slice(i));
        }
        Tensor {
            shape: vec![idx.len(), m],
            data: out,
        }
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul_returns_operand() {
        let a = Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(Tensor::identity(2).matmul(&a).unwrap(), a);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let p = Tensor::row(&[0.0, 0.0]).softmax_rows().unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);
    }

    #[test]
    fn relu_clips_negatives() {
        assert_eq!(Tensor::row(&[-1.0, 2.0]).relu().data(), &[0.0, 2.0]);
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        assert!(matches!(a.matmul(&b), Err(Error::Dimension { .. })));
        assert!(matches!(
            Tensor::new(vec![2, 2], vec![1.0]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn overflow_is_numeric_error() {
        let a = Tensor::row(&[1e300]);
        let b = Tensor::row(&[1e300]);
        assert!(matches!(a.mul(&b), Err(Error::Numeric { .. })));
    }

    #[test]
    fn argmax_ties_pick_lowest_index() {
        let t = Tensor::from_rows(&[[0.25, 0.25, 0.25, 0.25], [0.1, 0.6, 0.3, 0.0]]).unwrap();
        assert_eq!(t.argmax_rows(), vec![0, 1]);
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
    }
}
