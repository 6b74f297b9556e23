//! Dense row-major matrices holding frame or token embeddings.

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MatrixError {
    #[error("matrix must have at least one row and one column (got {rows}x{dim})")]
    EmptyShape { rows: usize, dim: usize },
    #[error("data length {len} does not match shape {rows}x{dim}")]
    LengthMismatch { len: usize, rows: usize, dim: usize },
    #[error("non-finite entry at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("row {row} has {found} columns, expected {expected}")]
    RaggedRow { row: usize, expected: usize, found: usize },
    #[error("inner dimensions do not match: {left}x{inner_left} * {inner_right}x{right}")]
    MatmulShape {
        left: usize,
        inner_left: usize,
        inner_right: usize,
        right: usize,
    },
    #[error("column counts differ when concatenating rows: {expected} vs {found}")]
    ConcatDim { expected: usize, found: usize },
    #[error("cannot build a matrix from zero rows")]
    NoRows,
}

/// Row-major `rows x dim` matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    dim: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    /// Builds a matrix from a flat row-major buffer, validating shape and finiteness.
    pub fn from_vec(rows: usize, dim: usize, data: Vec<T>) -> Result<Self, MatrixError> {
        if rows == 0 || dim == 0 {
            return Err(MatrixError::EmptyShape { rows, dim });
        }
        if data.len() != rows * dim {
            return Err(MatrixError::LengthMismatch {
                len: data.len(),
                rows,
                dim,
            });
        }
        for (idx, value) in data.iter().enumerate() {
            if !value.is_finite() {
                return Err(MatrixError::NonFinite {
                    row: idx / dim,
                    col: idx % dim,
                });
            }
        }
        Ok(Self { rows, dim, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self, MatrixError> {
        let first = rows.first().ok_or(MatrixError::NoRows)?;
        let dim = first.len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(MatrixError::RaggedRow {
                    row: i,
                    expected: dim,
                    found: row.len(),
                });
            }
        }
        let data: Vec<T> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::from_vec(rows.len(), dim, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks(self.dim)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    /// Stacks matrices with equal column counts on top of each other.
    pub fn concat_rows(parts: &[&Matrix<T>]) -> Result<Self, MatrixError> {
        let first = parts.first().ok_or(MatrixError::NoRows)?;
        let dim = first.dim;
        let mut data = Vec::new();
        let mut rows = 0;
        for part in parts {
            if part.dim != dim {
                return Err(MatrixError::ConcatDim {
                    expected: dim,
                    found: part.dim,
                });
            }
            data.extend_from_slice(&part.data);
            rows += part.rows;
        }
        Self::from_vec(rows, dim, data)
    }

    pub fn matmul(&self, rhs: &Matrix<T>) -> Result<Matrix<T>, MatrixError> {
        if self.dim != rhs.rows {
            return Err(MatrixError::MatmulShape {
                left: self.rows,
                inner_left: self.dim,
                inner_right: rhs.rows,
                right: rhs.dim,
            });
        }
        let mut data = vec![T::zero(); self.rows * rhs.dim];
        for i in 0..self.rows {
            let lhs_row = self.row(i);
            for (k, &lhs_val) in lhs_row.iter().enumerate() {
                let rhs_row = rhs.row(k);
                let out = &mut data[i * rhs.dim..(i + 1) * rhs.dim];
                for (o, &r) in out.iter_mut().zip(rhs_row.iter()) {
                    *o += lhs_val * r;
                }
            }
        }
        Matrix::from_vec(self.rows, rhs.dim, data)
    }

    /// Multiplies every entry by `factor`, revalidating finiteness.
    pub fn scaled(&self, factor: T) -> Result<Matrix<T>, MatrixError> {
        let data = self.data.iter().map(|&v| v * factor).collect();
        Matrix::from_vec(self.rows, self.dim, data)
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        let data = self.data.iter().map(|&v| U::from_f(v.to_f())).collect();
        Matrix {
            rows: self.rows,
            dim: self.dim,
            data,
        }
    }
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b.iter()).map(|(&x, &y)| x * y).sum()
}

pub fn norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}
