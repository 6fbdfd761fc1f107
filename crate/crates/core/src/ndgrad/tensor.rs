use std::fmt;

use super::TensorError;

/// Dense row-major array of `f64`.
///
/// Every constructor rejects NaN and infinities, so a `Tensor` that exists
/// holds only finite values. Rank 0 (scalar), 1 and 2 are used throughout;
/// the matrix helpers require rank 2.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::DataLength {
                shape,
                expected,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { context: "construction" });
        }
        Ok(Self { shape, data })
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, TensorError> {
        Self::new(vec![rows, cols], data)
    }

    /// Builds a matrix from nested rows; all rows must have the same length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, TensorError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(TensorError::Dimension {
                    op: "from_rows",
                    lhs: vec![cols],
                    rhs: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Self::matrix(rows.len(), cols, data)
    }

    pub fn scalar(value: f64) -> Result<Self, TensorError> {
        Self::new(Vec::new(), vec![value])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    /// Internal constructor for values produced by arithmetic on finite
    /// inputs; callers check finiteness where overflow is possible.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn rows(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[0],
            1 => 1,
            _ => 1,
        }
    }

    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            _ => 1,
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols() + c]
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    /// Overwrites one entry. Used by finite-difference probes and tests.
    pub fn set_flat(&mut self, idx: usize, value: f64) -> Result<(), TensorError> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { context: "set_flat" });
        }
        let len = self.data.len();
        *self
            .data
            .get_mut(idx)
            .ok_or(TensorError::Index { index: idx, len })? = value;
        Ok(())
    }

    fn require_matrix(&self, op: &'static str) -> Result<(usize, usize), TensorError> {
        if self.shape.len() != 2 {
            return Err(TensorError::Rank {
                op,
                expected: 2,
                shape: self.shape.clone(),
            });
        }
        Ok((self.shape[0], self.shape[1]))
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        let (m, k) = self.require_matrix("matmul")?;
        let (k2, n) = other.require_matrix("matmul")?;
        if k != k2 {
            return Err(TensorError::Dimension {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let arow = &self.data[i * k..(i + 1) * k];
            let orow = &mut out[i * n..(i + 1) * n];
            for (p, &a) in arow.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[p * n..(p + 1) * n];
                for (o, &b) in orow.iter_mut().zip(brow) {
                    *o += a * b;
                }
            }
        }
        Ok(Tensor::from_parts(vec![m, n], out))
    }

    pub fn transpose(&self) -> Result<Tensor, TensorError> {
        let (m, n) = self.require_matrix("transpose")?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor::from_parts(vec![n, m], out))
    }

    fn zip_same(
        &self,
        other: &Tensor,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor, TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::Dimension {
                op,
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.zip_same(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        self.zip_same(other, "sub", |a, b| a - b)
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix.
    pub fn add_row(&self, bias: &Tensor) -> Result<Tensor, TensorError> {
        let (m, n) = self.require_matrix("add_row")?;
        if bias.len() != n || bias.rows() != 1 {
            return Err(TensorError::Dimension {
                op: "add_row",
                lhs: self.shape.clone(),
                rhs: bias.shape.clone(),
            });
        }
        let mut data = self.data.clone();
        for i in 0..m {
            for (d, &b) in data[i * n..(i + 1) * n].iter_mut().zip(&bias.data) {
                *d += b;
            }
        }
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    pub fn scale(&self, s: f64) -> Tensor {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn relu(&self) -> Tensor {
        self.map(|v| v.max(0.0))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Result<Tensor, TensorError> {
        let (m, n) = self.require_matrix("select_rows")?;
        let mut data = Vec::with_capacity(idx.len() * n);
        for &i in idx {
            if i >= m {
                return Err(TensorError::Index { index: i, len: m });
            }
            data.extend_from_slice(&self.data[i * n..(i + 1) * n]);
        }
        Ok(Tensor::from_parts(vec![idx.len(), n], data))
    }

    pub fn concat_rows(&self, other: &Tensor) -> Result<Tensor, TensorError> {
        let (m1, n1) = self.require_matrix("concat_rows")?;
        let (m2, n2) = other.require_matrix("concat_rows")?;
        if n1 != n2 {
            return Err(TensorError::Dimension {
                op: "concat_rows",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Tensor::from_parts(vec![m1 + m2, n1], data))
    }

    /// Divides each row by its Euclidean norm. Rows with norm below
    /// [`NORM_EPS`](super::NORM_EPS) are an error, never clamped.
    pub fn row_l2_normalize(&self) -> Result<Tensor, TensorError> {
        let (m, n) = self.require_matrix("row_l2_normalize")?;
        let mut data = self.data.clone();
        for i in 0..m {
            let row = &mut data[i * n..(i + 1) * n];
            let norm = l2_norm(row);
            if norm < super::NORM_EPS {
                return Err(TensorError::Degenerate { row: i, norm });
            }
            row.iter_mut().for_each(|v| *v /= norm);
        }
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    pub fn log_softmax_rows(&self) -> Result<Tensor, TensorError> {
        let (m, n) = self.require_matrix("log_softmax_row")?;
        let mut data = self.data.clone();
        for i in 0..m {
            let row = &mut data[i * n..(i + 1) * n];
            let lse = log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    /// Index of the largest entry in each row; ties go to the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows())
            .map(|i| {
                let row = self.row(i);
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

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// `ln Σ exp(xᵢ)` with max subtraction.
/// Euclidean norm, computed on the max-abs-scaled vector so that entries
/// near the `f64` range neither overflow nor underflow when squared.
pub fn l2_norm(v: &[f64]) -> f64 {
    let m = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if m == 0.0 || !m.is_finite() {
        return m;
    }
    m * v.iter().map(|x| (x / m) * (x / m)).sum::<f64>().sqrt()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}{:?}", self.shape, self.data)
    }
}
