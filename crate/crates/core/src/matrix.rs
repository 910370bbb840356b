//! Dense row-major f64 matrices.
//!
//! A thin newtype over `ndarray::Array2<f64>`; products go through ndarray's
//! single-threaded dgemm, which is deterministic for fixed shapes, so repeated
//! runs are bit-identical.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    data: Array2<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                entries.len()
            )));
        }
        let data = Array2::from_shape_vec((rows, cols), entries)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(Matrix { data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            data: Array2::zeros((rows, cols)),
        }
    }

    pub fn identity(n: usize) -> Self {
        Matrix {
            data: Array2::eye(n),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Ok(Matrix::zeros(0, 0));
        }
        let cols = rows[0].len();
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        Matrix::new(rows.len(), cols, flat)
    }

    pub fn row_vector(entries: Vec<f64>) -> Self {
        let n = entries.len();
        Matrix::new(1, n, entries).expect("row vector")
    }

    pub fn column_vector(entries: Vec<f64>) -> Self {
        let n = entries.len();
        Matrix::new(n, 1, entries).expect("column vector")
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.data.ncols()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[(i, j)] = v;
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.data.row(i).to_vec()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.data.as_slice().expect("standard layout")
    }

    pub fn as_slice_mut(&mut self) -> &mut [f64] {
        self.data.as_slice_mut().expect("standard layout")
    }

    pub fn is_square(&self) -> bool {
        self.rows() == self.cols()
    }

    pub fn all_finite(&self) -> bool {
        self.as_slice().iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &Matrix) -> bool {
        self.rows() == other.rows() && self.cols() == other.cols()
    }

    fn shape_err(&self, other: &Matrix, op: &str) -> Error {
        Error::Shape(format!(
            "{op}: {}x{} vs {}x{}",
            self.rows(),
            self.cols(),
            other.rows(),
            other.cols()
        ))
    }

    /// A · B
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols() != other.rows() {
            return Err(self.shape_err(other, "matmul"));
        }
        Ok(Matrix {
            data: self.data.dot(&other.data),
        })
    }

    /// A · Bᵀ
    pub fn matmul_nt(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols() != other.cols() {
            return Err(self.shape_err(other, "matmul_nt"));
        }
        Ok(Matrix {
            data: self.data.dot(&other.data.t()),
        })
    }

    /// Aᵀ · B
    pub fn matmul_tn(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows() != other.rows() {
            return Err(self.shape_err(other, "matmul_tn"));
        }
        Ok(Matrix {
            data: self.data.t().dot(&other.data),
        })
    }

    pub fn transpose(&self) -> Matrix {
        Matrix {
            data: self.data.t().to_owned(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        if !self.same_shape(other) {
            return Err(self.shape_err(other, "add"));
        }
        Ok(Matrix {
            data: &self.data + &other.data,
        })
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        if !self.same_shape(other) {
            return Err(self.shape_err(other, "sub"));
        }
        Ok(Matrix {
            data: &self.data - &other.data,
        })
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        if !self.same_shape(other) {
            return Err(self.shape_err(other, "add_assign"));
        }
        self.data += &other.data;
        Ok(())
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix {
            data: &self.data * c,
        }
    }

    pub fn hadamard(&self, other: &Matrix) -> Result<Matrix> {
        if !self.same_shape(other) {
            return Err(self.shape_err(other, "hadamard"));
        }
        Ok(Matrix {
            data: &self.data * &other.data,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            data: self.data.mapv(f),
        }
    }

    /// Frobenius inner product Σᵢⱼ AᵢⱼBᵢⱼ.
    pub fn frob_dot(&self, other: &Matrix) -> Result<f64> {
        if !self.same_shape(other) {
            return Err(self.shape_err(other, "frob_dot"));
        }
        Ok(self
            .as_slice()
            .iter()
            .zip(other.as_slice())
            .map(|(a, b)| a * b)
            .sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.as_slice().iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn sum(&self) -> f64 {
        self.data.sum()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows()).map(|i| self.data.row(i).sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        (0..self.cols()).map(|j| self.data.column(j).sum()).collect()
    }

    /// Max-abs difference; shapes must match.
    pub fn max_abs_diff(&self, other: &Matrix) -> Result<f64> {
        Ok(self.sub(other)?.max_abs())
    }
}
