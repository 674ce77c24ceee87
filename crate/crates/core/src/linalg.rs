//! Dense row-major matrices. Token sequences are stored one token per row.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, T::zero())
    }

    pub fn filled(rows: usize, cols: usize, value: T) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Shape("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Matrix {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn row_vector(values: Vec<T>) -> Self {
        Matrix {
            rows: 1,
            cols: values.len(),
            data: values,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, T::one());
        }
        m
    }

    /// Samples every entry uniformly from `[-scale, scale]`.
    pub fn uniform<R: Rng>(rows: usize, cols: usize, scale: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| T::lit(rng.gen_range(-scale..=scale)))
            .collect();
        Matrix { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
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

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn scale(&self, k: T) -> Self {
        self.map(|x| x * k)
    }

    pub fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// `self += k * other`
    pub fn axpy(&mut self, k: T, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
    }

    pub fn fill(&mut self, v: T) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// `x W^T + b` for `x: m×k`, `W: n×k`, `b: 1×n`.
    pub fn affine(&self, w: &Matrix<T>, b: Option<&Matrix<T>>) -> Matrix<T> {
        debug_assert_eq!(self.cols, w.cols);
        let (m, n) = (self.rows, w.rows);
        let mut out = Matrix::zeros(m, n);
        for i in 0..m {
            let x = self.row(i);
            let o = out.row_mut(i);
            for (j, oj) in o.iter_mut().enumerate() {
                *oj = dot(x, w.row(j));
            }
            if let Some(b) = b {
                for (oj, &bj) in o.iter_mut().zip(b.as_slice()) {
                    *oj += bj;
                }
            }
        }
        out
    }

    /// Element-wise product of every row with `v` (`1×cols`).
    pub fn mul_row(&self, v: &[T]) -> Matrix<T> {
        debug_assert_eq!(self.cols, v.len());
        let mut out = self.clone();
        for r in 0..out.rows {
            for (a, &b) in out.row_mut(r).iter_mut().zip(v) {
                *a *= b;
            }
        }
        out
    }

    /// Mean of the listed rows as a plain vector.
    pub fn mean_rows(&self, idx: &[usize]) -> Vec<T> {
        let mut acc = vec![T::zero(); self.cols];
        for &r in idx {
            for (a, &b) in acc.iter_mut().zip(self.row(r)) {
                *a += b;
            }
        }
        let k = T::lit(idx.len() as f64);
        acc.iter_mut().for_each(|a| *a /= k);
        acc
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix<T> {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &r in idx {
            data.extend_from_slice(self.row(r));
        }
        Matrix {
            rows: idx.len(),
            cols: self.cols,
            data,
        }
    }

    pub fn to_f64(&self) -> Matrix<f64> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x.as_f64()).collect(),
        }
    }

    pub fn from_f64(m: &Matrix<f64>) -> Matrix<T> {
        Matrix {
            rows: m.rows,
            cols: m.cols,
            data: m.data.iter().map(|&x| T::lit(x)).collect(),
        }
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Serialized form of a matrix, always in `f64` so checkpoints are portable
/// across scalar types.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixRecord {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl<T: Scalar> From<&Matrix<T>> for MatrixRecord {
    fn from(m: &Matrix<T>) -> Self {
        MatrixRecord {
            rows: m.rows,
            cols: m.cols,
            data: m.data.iter().map(|x| x.as_f64()).collect(),
        }
    }
}

impl MatrixRecord {
    pub fn to_matrix<T: Scalar>(&self) -> Result<Matrix<T>> {
        Matrix::from_vec(
            self.rows,
            self.cols,
            self.data.iter().map(|&x| T::lit(x)).collect(),
        )
    }
}
