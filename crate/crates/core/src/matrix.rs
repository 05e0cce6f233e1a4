//! Dense row-major `f64` matrices.
//!
//! Products go through `matrixmultiply::dgemm`, split into fixed blocks of
//! output rows that are dispatched through [`Exec`].

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;

/// Output rows per gemm block.
const GEMM_BLOCK_ROWS: usize = 64;

#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix {}x{} ", self.rows, self.cols)?;
        f.debug_list()
            .entries(self.data.chunks(self.cols.max(1)).take(8))
            .finish()
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum Op {
    N,
    T,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                "Matrix::new",
                format!("{} elements", rows * cols),
                data.len(),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        self.expect_same_shape("zip_map", other)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        self.expect_same_shape("add_assign", other)?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Column sums as a vector of length `cols`.
    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in self.data.chunks(self.cols.max(1)) {
            for (o, v) in out.iter_mut().zip(r) {
                *o += v;
            }
        }
        out
    }

    pub fn add_row_vector(&mut self, v: &[f64]) -> Result<()> {
        if v.len() != self.cols {
            return Err(Error::shape("add_row_vector", self.cols, v.len()));
        }
        for r in self.data.chunks_mut(self.cols.max(1)) {
            for (a, b) in r.iter_mut().zip(v) {
                *a += b;
            }
        }
        Ok(())
    }

    /// Columns `start..end` as a new matrix.
    pub fn cols_range(&self, start: usize, end: usize) -> Matrix {
        assert!(start <= end && end <= self.cols);
        let w = end - start;
        let mut data = Vec::with_capacity(self.rows * w);
        for i in 0..self.rows {
            data.extend_from_slice(&self.row(i)[start..end]);
        }
        Matrix {
            rows: self.rows,
            cols: w,
            data,
        }
    }

    /// Horizontal concatenation.
    pub fn hcat(parts: &[&Matrix]) -> Result<Matrix> {
        let rows = parts.first().map_or(0, |m| m.rows);
        if let Some(bad) = parts.iter().find(|m| m.rows != rows) {
            return Err(Error::shape("hcat", format!("{rows} rows"), bad.rows));
        }
        let cols = parts.iter().map(|m| m.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for m in parts {
                data.extend_from_slice(m.row(i));
            }
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Vertical concatenation.
    pub fn vcat(parts: &[&Matrix]) -> Result<Matrix> {
        let cols = parts.first().map_or(0, |m| m.cols);
        if let Some(bad) = parts.iter().find(|m| m.cols != cols) {
            return Err(Error::shape("vcat", format!("{cols} cols"), bad.cols));
        }
        let mut data = Vec::new();
        for m in parts {
            data.extend_from_slice(&m.data);
        }
        Ok(Matrix {
            rows: data.len() / cols.max(1),
            cols,
            data,
        })
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// `self · otherᵀ`; with `self` n×k and `other` m×k gives n×m.
    pub fn matmul_nt(&self, other: &Matrix) -> Result<Matrix> {
        self.matmul_nt_with(other, Exec::default())
    }

    pub fn matmul_nt_with(&self, other: &Matrix, exec: Exec) -> Result<Matrix> {
        if self.cols != other.cols {
            return Err(Error::shape("matmul_nt", format!("inner {}", self.cols), other.cols));
        }
        Ok(gemm(exec, self, Op::N, other, Op::T, self.rows, self.cols, other.rows))
    }

    /// `selfᵀ · other`; with `self` n×m and `other` n×k gives m×k.
    pub fn matmul_tn(&self, other: &Matrix) -> Result<Matrix> {
        self.matmul_tn_with(other, Exec::default())
    }

    pub fn matmul_tn_with(&self, other: &Matrix, exec: Exec) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::shape("matmul_tn", format!("inner {}", self.rows), other.rows));
        }
        Ok(gemm(exec, self, Op::T, other, Op::N, self.cols, self.rows, other.cols))
    }

    /// `self · other`; with `self` n×k and `other` k×m gives n×m.
    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        self.matmul_with(other, Exec::default())
    }

    pub fn matmul_with(&self, other: &Matrix, exec: Exec) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::shape("matmul", format!("inner {}", self.cols), other.rows));
        }
        Ok(gemm(exec, self, Op::N, other, Op::N, self.rows, self.cols, other.cols))
    }

    fn expect_same_shape(&self, op: &'static str, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::shape(
                op,
                format!("{:?}", self.shape()),
                format!("{:?}", other.shape()),
            ));
        }
        Ok(())
    }
}

/// `C (m×n) = op(A) (m×k) · op(B) (k×n)`.
#[allow(clippy::too_many_arguments)]
fn gemm(exec: Exec, a: &Matrix, op_a: Op, b: &Matrix, op_b: Op, m: usize, k: usize, n: usize) -> Matrix {
    let mut c = Matrix::zeros(m, n);
    if m == 0 || n == 0 || k == 0 {
        return c;
    }
    // Strides of op(A) and op(B) in element units.
    let (rsa, csa) = match op_a {
        Op::N => (a.cols as isize, 1),
        Op::T => (1, a.cols as isize),
    };
    let (rsb, csb) = match op_b {
        Op::N => (b.cols as isize, 1),
        Op::T => (1, b.cols as isize),
    };
    let a_data = &a.data;
    let b_data = &b.data;
    exec.for_each_chunk_mut(&mut c.data, GEMM_BLOCK_ROWS * n, |blk, c_blk| {
        let row0 = blk * GEMM_BLOCK_ROWS;
        let rows = c_blk.len() / n;
        let a_off = row0 as isize * rsa;
        // SAFETY: op(A) rows row0..row0+rows, all of op(B) and this C block are in
        // bounds for the strides computed above; blocks of C are disjoint.
        unsafe {
            matrixmultiply::dgemm(
                rows,
                k,
                n,
                1.0,
                a_data.as_ptr().offset(a_off),
                rsa,
                csa,
                b_data.as_ptr(),
                rsb,
                csb,
                0.0,
                c_blk.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    });
    c
}
