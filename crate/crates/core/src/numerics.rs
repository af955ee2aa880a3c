//! Small dense linear-algebra kernels shared by DEMATEL and AHP.
//!
//! Matrices here are tiny (tens of rows at most), so the routines favour
//! plain row-major storage and textbook algorithms over blocking or SIMD.

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Pivots smaller than this are treated as zero by [`invert`].
pub const SINGULAR_PIVOT: f64 = 1e-12;
/// Default convergence tolerance for [`principal_eigen`].
pub const DEFAULT_EIGEN_TOL: f64 = 1e-10;
/// Default iteration cap for [`principal_eigen`].
pub const DEFAULT_EIGEN_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("matrix is {rows}x{cols}, expected a square matrix")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is singular (pivot magnitude {pivot:e} in column {column})")]
    Singular { column: usize, pivot: f64 },
    #[error("power iteration did not converge within {max_iter} iterations (last change {last_change:e})")]
    NoConvergence { max_iter: usize, last_change: f64 },
    #[error("entry ({row}, {col}) = {value} is not positive")]
    NonPositiveEntry { row: usize, col: usize, value: f64 },
    #[error("expected {expected} entries for a {rows}x{cols} matrix, got {actual}")]
    Shape {
        rows: usize,
        cols: usize,
        expected: usize,
        actual: usize,
    },
    #[error("entry {index} is not finite")]
    NonFinite { index: usize },
}

/// Dense row-major matrix of finite reals.
///
/// Serializes as a list of rows.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, NumericsError> {
        if data.len() != rows * cols {
            return Err(NumericsError::Shape {
                rows,
                cols,
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(NumericsError::NonFinite { index });
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

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    /// Builds a matrix from nested rows; every row must have the same length.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, NumericsError> {
        let n_rows = rows.len();
        let n_cols = rows.first().map_or(0, |r| r.as_ref().len());
        if rows.iter().any(|r| r.as_ref().len() != n_cols) {
            return Err(NumericsError::Shape {
                rows: n_rows,
                cols: n_cols,
                expected: n_rows * n_cols,
                actual: rows.iter().map(|r| r.as_ref().len()).sum(),
            });
        }
        let data = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Self::new(n_rows, n_cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let mut sums = vec![0.0; self.cols];
        for i in 0..self.rows {
            for (s, v) in sums.iter_mut().zip(self.row(i)) {
                *s += v;
            }
        }
        sums
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn scale(&self, factor: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().copied().map(f).collect(),
        }
    }

    /// Matrix product `self · rhs`.
    ///
    /// Panics if the inner dimensions disagree.
    pub fn mul(&self, rhs: &Matrix) -> Matrix {
        assert_eq!(self.cols, rhs.rows, "inner dimensions must agree");
        let mut out = Matrix::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..rhs.cols {
                    out[(i, j)] += a * rhs[(k, j)];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(self.cols, v.len(), "vector length must match column count");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Entrywise `self - rhs`. Panics on shape mismatch.
    pub fn sub(&self, rhs: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (rhs.rows, rhs.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&rhs.data).map(|(a, b)| a - b).collect(),
        }
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Induced infinity norm (largest absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Rows and columns rearranged so that new index `i` holds old index `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Matrix {
        assert!(self.is_square() && perm.len() == self.rows);
        let mut out = Matrix::zeros(self.rows, self.cols);
        for (i, &pi) in perm.iter().enumerate() {
            for (j, &pj) in perm.iter().enumerate() {
                out[(i, j)] = self[(pi, pj)];
            }
        }
        out
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.to_rows()).finish()
    }
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = NumericsError;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        Matrix::from_rows(&rows)
    }
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        m.to_rows()
    }
}

/// Dominant eigenpair of a positive matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenResult {
    pub lambda_max: f64,
    /// Principal eigenvector scaled to sum to one.
    pub vector: Vec<f64>,
    pub iterations: usize,
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn invert(m: &Matrix) -> Result<Matrix, NumericsError> {
    if !m.is_square() {
        return Err(NumericsError::NotSquare {
            rows: m.rows,
            cols: m.cols,
        });
    }
    let n = m.rows;
    let mut a = m.clone();
    let mut inv = Matrix::identity(n);

    for col in 0..n {
        let (pivot_row, pivot) = (col..n)
            .map(|r| (r, a[(r, col)]))
            .max_by(|x, y| x.1.abs().total_cmp(&y.1.abs()))
            .expect("non-empty pivot range");
        if pivot.abs() < SINGULAR_PIVOT {
            return Err(NumericsError::Singular { column: col, pivot });
        }
        if pivot_row != col {
            swap_rows(&mut a, pivot_row, col);
            swap_rows(&mut inv, pivot_row, col);
        }
        let p = a[(col, col)];
        for j in 0..n {
            a[(col, j)] /= p;
            inv[(col, j)] /= p;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let factor = a[(r, col)];
            if factor == 0.0 {
                continue;
            }
            for j in 0..n {
                a[(r, j)] -= factor * a[(col, j)];
                inv[(r, j)] -= factor * inv[(col, j)];
            }
        }
    }
    Ok(inv)
}

fn swap_rows(m: &mut Matrix, a: usize, b: usize) {
    for j in 0..m.cols {
        m.data.swap(a * m.cols + j, b * m.cols + j);
    }
}

/// Power iteration for the Perron eigenpair of a non-negative matrix.
///
/// Starts from the uniform vector and renormalizes by the vector sum each step;
/// stops once the max-norm change of the normalized vector drops to `tol`.
/// Positive matrices (the AHP case) always converge; reducible or periodic
/// non-negative matrices may end in `NoConvergence`.
pub fn principal_eigen(m: &Matrix, tol: f64, max_iter: usize) -> Result<EigenResult, NumericsError> {
    if !m.is_square() {
        return Err(NumericsError::NotSquare {
            rows: m.rows,
            cols: m.cols,
        });
    }
    for i in 0..m.rows {
        for j in 0..m.cols {
            let value = m[(i, j)];
            if value < 0.0 {
                return Err(NumericsError::NonPositiveEntry { row: i, col: j, value });
            }
        }
    }
    let n = m.rows;
    if n == 0 {
        return Ok(EigenResult {
            lambda_max: 0.0,
            vector: Vec::new(),
            iterations: 0,
        });
    }

    let mut v = vec![1.0 / n as f64; n];
    let mut last_change = f64::INFINITY;
    for iteration in 1..=max_iter {
        let mut next = m.mul_vec(&v);
        let sum: f64 = next.iter().sum();
        if sum <= 0.0 {
            // nilpotent direction: the iterate collapsed to zero
            return Err(NumericsError::NoConvergence { max_iter, last_change });
        }
        next.iter_mut().for_each(|x| *x /= sum);
        last_change = next.iter().zip(&v).fold(0.0_f64, |acc, (a, b)| acc.max((a - b).abs()));
        v = next;
        if last_change <= tol {
            // With v summing to one, sum(M v) is the Rayleigh-style estimate.
            let lambda_max = m.mul_vec(&v).iter().sum();
            return Ok(EigenResult {
                lambda_max,
                vector: v,
                iterations: iteration,
            });
        }
    }
    Err(NumericsError::NoConvergence { max_iter, last_change })
}

/// Collatz-Wielandt bracket on the spectral radius of a non-negative matrix.
///
/// Runs power iteration on `I + A` (the shift removes periodicity) and returns
/// once the bracket `[lower, upper]` of `rho(A)` is decided relative to
/// `threshold` or narrower than `tol`.
pub fn spectral_radius_bracket(
    a: &Matrix,
    threshold: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(f64, f64), NumericsError> {
    if !a.is_square() {
        return Err(NumericsError::NotSquare {
            rows: a.rows,
            cols: a.cols,
        });
    }
    let n = a.rows;
    if n == 0 {
        return Ok((0.0, 0.0));
    }
    let abs = a.map(f64::abs);
    let mut v = vec![1.0 / n as f64; n];
    let mut bracket = (0.0, f64::INFINITY);
    for _ in 0..max_iter {
        let av = abs.mul_vec(&v);
        let (mut lower, mut upper) = (f64::INFINITY, 0.0_f64);
        for (x, y) in av.iter().zip(&v) {
            let ratio = x / y;
            lower = lower.min(ratio);
            upper = upper.max(ratio);
        }
        bracket = (lower, upper);
        if upper < threshold || lower >= threshold || upper - lower <= tol {
            return Ok(bracket);
        }
        let mut next: Vec<f64> = av.iter().zip(&v).map(|(x, y)| x + y).collect();
        let sum: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= sum);
        v = next;
    }
    Ok(bracket)
}
