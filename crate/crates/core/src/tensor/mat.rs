use std::fmt;

use crate::error::{Error, Result};

/// Row-major dense matrix of `f64`. Column vectors are `n x 1` matrices.
#[derive(Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Mat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Mat[{}x{}]{:?}", self.rows, self.cols, self.data)
    }
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape {
                op: "Mat::new",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("Mat::new".into()));
        }
        Ok(Mat { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Mat {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Column vector from its entries.
    pub fn col(values: Vec<f64>) -> Self {
        Mat {
            rows: values.len(),
            cols: 1,
            data: values,
        }
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::Shape {
                    op: "Mat::from_rows",
                    left: (r, c),
                    right: (1, row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Mat::new(r, c, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// Row `r` as a column vector.
    pub fn row_col(&self, r: usize) -> Mat {
        Mat::col(self.row(r).to_vec())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    fn expect_col(&self, op: &'static str, n: usize) -> Result<()> {
        if self.cols != 1 || self.rows != n {
            return Err(Error::Shape {
                op,
                left: (n, 1),
                right: self.shape(),
            });
        }
        Ok(())
    }

    fn expect_same(&self, op: &'static str, other: &Mat) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape {
                op,
                left: self.shape(),
                right: other.shape(),
            });
        }
        Ok(())
    }

    /// `self · v` for a column vector `v`.
    pub fn matvec(&self, v: &Mat) -> Result<Mat> {
        v.expect_col("matvec", self.cols)?;
        let out = self
            .data
            .chunks_exact(self.cols.max(1))
            .take(self.rows)
            .map(|row| dot(row, &v.data))
            .collect::<Vec<_>>();
        let out = if self.cols == 0 {
            vec![0.0; self.rows]
        } else {
            out
        };
        Ok(Mat::col(out))
    }

    /// `selfᵀ · v` for a column vector `v`.
    pub fn matvec_t(&self, v: &Mat) -> Result<Mat> {
        v.expect_col("matvec_t", self.rows)?;
        let mut out = vec![0.0; self.cols];
        for (r, &scale) in v.data.iter().enumerate() {
            if scale == 0.0 {
                continue;
            }
            for (o, &w) in out.iter_mut().zip(self.row(r)) {
                *o += w * scale;
            }
        }
        Ok(Mat::col(out))
    }

    /// `self += a · bᵀ` for column vectors `a` (rows) and `b` (cols).
    pub fn add_outer(&mut self, a: &Mat, b: &Mat) -> Result<()> {
        a.expect_col("add_outer", self.rows)?;
        b.expect_col("add_outer", self.cols)?;
        for (r, &ar) in a.data.iter().enumerate() {
            if ar == 0.0 {
                continue;
            }
            let cols = self.cols;
            for (x, &bc) in self.data[r * cols..(r + 1) * cols].iter_mut().zip(&b.data) {
                *x += ar * bc;
            }
        }
        Ok(())
    }

    /// Adds `v` (length `cols`) into row `r`.
    pub fn add_to_row(&mut self, r: usize, v: &[f64]) {
        for (x, y) in self.row_mut(r).iter_mut().zip(v) {
            *x += y;
        }
    }

    pub fn add(&self, other: &Mat) -> Result<Mat> {
        self.expect_same("add", other)?;
        Ok(self.zip_map(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &Mat) -> Result<Mat> {
        self.expect_same("sub", other)?;
        Ok(self.zip_map(other, |a, b| a - b))
    }

    pub fn add_assign(&mut self, other: &Mat) -> Result<()> {
        self.expect_same("add_assign", other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn add_scaled(&mut self, other: &Mat, scale: f64) -> Result<()> {
        self.expect_same("add_scaled", other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn scaled(&self, s: f64) -> Mat {
        self.map(|x| x * s)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    fn zip_map(&self, other: &Mat, f: impl Fn(f64, f64) -> f64) -> Mat {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn dot(&self, other: &Mat) -> Result<f64> {
        self.expect_same("dot", other)?;
        Ok(dot(&self.data, &other.data))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    /// Splits a column vector into its first `n` entries and the rest.
    pub fn split_col(&self, n: usize) -> Result<(Mat, Mat)> {
        if self.cols != 1 || n > self.rows {
            return Err(Error::Shape {
                op: "split_col",
                left: self.shape(),
                right: (n, 1),
            });
        }
        Ok((
            Mat::col(self.data[..n].to_vec()),
            Mat::col(self.data[n..].to_vec()),
        ))
    }

    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &x) in self.data.iter().enumerate() {
            if x > self.data[best] {
                best = i;
            }
        }
        best
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax of a column vector (max subtracted first).
pub fn softmax(v: &Mat) -> Mat {
    let max = v.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.data.iter().map(|&x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Mat {
        rows: v.rows,
        cols: v.cols,
        data: exps.into_iter().map(|e| e / total).collect(),
    }
}

/// `log softmax(v)`, evaluated as `v - max - ln Σ exp(v - max)`.
pub fn log_softmax(v: &Mat) -> Mat {
    let max = v.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = v.data.iter().map(|&x| (x - max).exp()).sum::<f64>().ln() + max;
    v.map(|x| x - lse)
}

pub fn hadamard(a: &Mat, b: &Mat) -> Result<Mat> {
    a.expect_same("hadamard", b)?;
    Ok(a.zip_map(b, |x, y| x * y))
}

/// Stacks two column vectors.
pub fn concat(a: &Mat, b: &Mat) -> Result<Mat> {
    if a.cols != 1 || b.cols != 1 {
        return Err(Error::Shape {
            op: "concat",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut data = Vec::with_capacity(a.rows + b.rows);
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Ok(Mat::col(data))
}
