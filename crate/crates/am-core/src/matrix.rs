//! Column-major dense matrices and LU factorization with partial pivoting.
//!
//! Embeddings are stored one example per column, so a `d x n` matrix holds
//! `n` vectors of dimension `d` contiguously.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Index, IndexMut};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::filled(rows, cols, 0.0)
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Wraps column-major `data`.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values for a {}x{} matrix",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from row slices; convenient for small literals in tests.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut m = Self::zeros(r, c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c, "ragged rows");
            for (j, &v) in row.iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        m
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(cols: &[&[f64]]) -> Self {
        let c = cols.len();
        let r = cols.first().map_or(0, |col| col.len());
        let mut data = Vec::with_capacity(r * c);
        for col in cols {
            assert_eq!(col.len(), r, "ragged columns");
            data.extend_from_slice(col);
        }
        Matrix {
            rows: r,
            cols: c,
            data,
        }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        let r = self.rows;
        &mut self.data[j * r..(j + 1) * r]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols).map(|j| self[(i, j)]).collect()
    }

    /// Copies columns `start..end` into a new matrix.
    pub fn col_range(&self, start: usize, end: usize) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: end - start,
            data: self.data[start * self.rows..end * self.rows].to_vec(),
        }
    }

    /// Horizontal concatenation `(a b c ...)`.
    pub fn hcat(parts: &[&Matrix]) -> Result<Matrix> {
        let rows = parts.first().map_or(0, |m| m.rows);
        if let Some(bad) = parts.iter().find(|m| m.rows != rows) {
            return Err(Error::Shape(format!(
                "cannot concatenate {} rows with {} rows",
                bad.rows, rows
            )));
        }
        let cols = parts.iter().map(|m| m.cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for m in parts {
            data.extend_from_slice(&m.data);
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Selects the listed columns, in order.
    pub fn select_cols(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * idx.len());
        for &j in idx {
            data.extend_from_slice(self.col(j));
        }
        Matrix {
            rows: self.rows,
            cols: idx.len(),
            data,
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for j in 0..self.cols {
            for i in 0..self.rows {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::Shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            let oc = other.col(j);
            let dst = &mut out.data[j * self.rows..(j + 1) * self.rows];
            for (k, &b) in oc.iter().enumerate() {
                if b == 0.0 {
                    continue;
                }
                for (d, &a) in dst.iter_mut().zip(self.col(k)) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i + j * self.rows]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i + j * self.rows]
    }
}

/// Squared Euclidean distance between two equal-length vectors.
#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// LU factors `P A = L U` of a square matrix.
///
/// `L` is unit lower triangular and shares storage with `U`. The factors
/// solve both `A x = b` and `A^T x = b`, which is what the forward
/// propagation and its adjoint need.
#[derive(Debug, Clone)]
pub struct Lu {
    n: usize,
    lu: Vec<f64>,
    // perm[i] = row of A that ended up in row i of P A
    perm: Vec<usize>,
}

impl Lu {
    pub fn factorize(a: &Matrix) -> Result<Lu> {
        if a.rows != a.cols {
            return Err(Error::Shape(format!(
                "LU of non-square {}x{} matrix",
                a.rows, a.cols
            )));
        }
        let n = a.rows;
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let tiny = (n.max(1) as f64) * f64::EPSILON * a.max_abs();

        for k in 0..n {
            let mut p = k;
            let mut best = lu[k + k * n].abs();
            for i in k + 1..n {
                let v = lu[i + k * n].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > tiny) {
                return Err(Error::Singular(k));
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k + j * n, p + j * n);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k + k * n];
            for i in k + 1..n {
                lu[i + k * n] /= pivot;
            }
            for j in k + 1..n {
                let ukj = lu[k + j * n];
                if ukj == 0.0 {
                    continue;
                }
                let (left, right) = lu.split_at_mut(j * n);
                let lcol = &left[k * n..(k + 1) * n];
                let col = &mut right[..n];
                for i in k + 1..n {
                    col[i] -= lcol[i] * ukj;
                }
            }
        }
        Ok(Lu { n, lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        // forward substitution with unit L
        for j in 0..n {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            let col = &self.lu[j * n..(j + 1) * n];
            for i in j + 1..n {
                x[i] -= col[i] * xj;
            }
        }
        // back substitution with U
        for j in (0..n).rev() {
            let col = &self.lu[j * n..(j + 1) * n];
            x[j] /= col[j];
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            for i in 0..j {
                x[i] -= col[i] * xj;
            }
        }
        x
    }

    /// Solves `A^T x = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        assert_eq!(b.len(), n);
        // A^T = U^T L^T P, so solve U^T y = b, then L^T w = y, then x = P^T w.
        let mut y = b.to_vec();
        for j in 0..n {
            let col = &self.lu[j * n..(j + 1) * n];
            let mut s = y[j];
            for i in 0..j {
                s -= col[i] * y[i];
            }
            y[j] = s / col[j];
        }
        for j in (0..n).rev() {
            let col = &self.lu[j * n..(j + 1) * n];
            let mut s = y[j];
            for i in j + 1..n {
                s -= col[i] * y[i];
            }
            y[j] = s;
        }
        let mut x = vec![0.0; n];
        for (i, &p) in self.perm.iter().enumerate() {
            x[p] = y[i];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn residual(a: &Matrix, x: &[f64], b: &[f64], transpose: bool) -> f64 {
        let n = a.rows();
        (0..n)
            .map(|i| {
                let s: f64 = (0..n)
                    .map(|j| if transpose { a[(j, i)] } else { a[(i, j)] } * x[j])
                    .sum();
                (s - b[i]).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn lu_solves_both_orientations() {
        let a = Matrix::from_rows(&[
            &[0.0, 2.0, 1.0, -1.0],
            &[3.0, -1.0, 0.5, 2.0],
            &[1.0, 1.0, 4.0, 0.0],
            &[-2.0, 0.5, 1.0, 3.0],
        ]);
        let b = [1.0, -2.0, 0.5, 3.0];
        let lu = Lu::factorize(&a).unwrap();
        assert!(residual(&a, &lu.solve(&b), &b, false) < 1e-12);
        assert!(residual(&a, &lu.solve_transpose(&b), &b, true) < 1e-12);
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = Matrix::from_rows(&[&[1.0, 2.0], &[2.0, 4.0]]);
        assert!(matches!(Lu::factorize(&a), Err(Error::Singular(_))));
    }

    #[test]
    fn matmul_and_transpose() {
        let a = Matrix::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]]);
        let ata = a.transpose().matmul(&a).unwrap();
        assert_eq!(ata[(0, 0)], 17.0);
        assert_eq!(ata[(2, 1)], 2.0 * 3.0 + 5.0 * 6.0);
        assert!(a.matmul(&a).is_err());
    }

    #[test]
    fn hcat_orders_blocks() {
        let a = Matrix::from_columns(&[&[1.0, 2.0]]);
        let b = Matrix::from_columns(&[&[3.0, 4.0], &[5.0, 6.0]]);
        let c = Matrix::hcat(&[&a, &b]).unwrap();
        assert_eq!(c.cols(), 3);
        assert_eq!(c.col(2), &[5.0, 6.0]);
        assert!(Matrix::hcat(&[&a, &Matrix::zeros(3, 1)]).is_err());
    }
}
