use std::fmt;
use std::ops::{Add, Index, IndexMut, Mul, Sub};

use faer::linalg::matmul::matmul;
use faer::{Accum, Mat, MatRef, Par};

use super::LinalgError;

/// Dense real matrix backed by a column-major `faer` buffer.
///
/// Indexing is `(row, col)`. Batches of samples are stored one sample per row
/// throughout the crate.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    inner: Mat<f64>,
}

impl Matrix {
    /// Zero matrix. Panics if either dimension is zero.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dimensions must be positive");
        Self {
            inner: Mat::zeros(rows, cols),
        }
    }

    pub fn identity(n: usize) -> Self {
        assert!(n >= 1, "matrix dimensions must be positive");
        Self {
            inner: Mat::identity(n, n),
        }
    }

    /// Square diagonal matrix with the given diagonal.
    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        Self::from_fn(n, n, |i, j| if i == j { values[i] } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(rows >= 1 && cols >= 1, "matrix dimensions must be positive");
        Self {
            inner: Mat::from_fn(rows, cols, f),
        }
    }

    /// Builds a matrix from row-major data, validating shape and finiteness.
    pub fn from_row_major(rows: usize, cols: usize, data: &[f64]) -> Result<Self, LinalgError> {
        if rows == 0 || cols == 0 {
            return Err(LinalgError::EmptyMatrix);
        }
        if data.len() != rows * cols {
            return Err(LinalgError::DataLength {
                rows,
                cols,
                len: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(LinalgError::NonFinite {
                row: pos / cols,
                col: pos % cols,
            });
        }
        Ok(Self::from_fn(rows, cols, |i, j| data[i * cols + j]))
    }

    /// Builds a matrix from a slice of equally long rows.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self, LinalgError> {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != m) {
            return Err(LinalgError::RaggedRows);
        }
        let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Self::from_row_major(n, m, &flat)
    }

    pub(crate) fn from_faer(inner: Mat<f64>) -> Self {
        debug_assert!(inner.nrows() >= 1 && inner.ncols() >= 1);
        Self { inner }
    }

    pub(crate) fn as_faer(&self) -> MatRef<'_, f64> {
        self.inner.as_ref()
    }

    pub fn rows(&self) -> usize {
        self.inner.nrows()
    }

    pub fn cols(&self) -> usize {
        self.inner.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows(), self.cols())
    }

    /// `min(rows, cols)`, the number of singular values.
    pub fn nu(&self) -> usize {
        self.rows().min(self.cols())
    }

    pub fn is_finite(&self) -> bool {
        self.col_slices().all(|c| c.iter().all(|x| x.is_finite()))
    }

    pub fn transpose(&self) -> Matrix {
        Self {
            inner: self.inner.transpose().to_owned(),
        }
    }

    /// Entries in row-major order.
    pub fn to_row_major(&self) -> Vec<f64> {
        let (n, m) = self.shape();
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            for j in 0..m {
                out.push(self.inner[(i, j)]);
            }
        }
        out
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols()).map(|j| self.inner[(i, j)]).collect()
    }

    pub fn col(&self, j: usize) -> &[f64] {
        self.inner.col_as_slice(j)
    }

    fn col_slices(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.cols()).map(move |j| self.inner.col_as_slice(j))
    }

    /// Copies the given rows (in order) into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        assert!(!indices.is_empty(), "cannot select zero rows");
        Self::from_fn(indices.len(), self.cols(), |i, j| {
            self.inner[(indices[i], j)]
        })
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Matrix {
        Self::from_fn(self.rows(), self.cols(), |i, j| f(self.inner[(i, j)]))
    }

    /// Elementwise combination of two equally shaped matrices.
    pub fn zip_map(&self, other: &Matrix, mut f: impl FnMut(f64, f64) -> f64) -> Matrix {
        assert_eq!(self.shape(), other.shape(), "shape mismatch in zip_map");
        Self::from_fn(self.rows(), self.cols(), |i, j| {
            f(self.inner[(i, j)], other.inner[(i, j)])
        })
    }

    pub fn scale(&self, c: f64) -> Matrix {
        self.map(|x| c * x)
    }

    /// `self += c * other`
    pub fn add_scaled_in_place(&mut self, c: f64, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "shape mismatch in add_scaled");
        for j in 0..self.cols() {
            let src = other.inner.col_as_slice(j);
            let dst = self.inner.col_as_slice_mut(j);
            for (d, s) in dst.iter_mut().zip(src) {
                *d += c * s;
            }
        }
    }

    pub fn sum(&self) -> f64 {
        self.col_slices().flat_map(|c| c.iter()).sum()
    }

    /// Sum of squared entries, `‖S‖_F²`.
    pub fn sum_of_squares(&self) -> f64 {
        self.col_slices()
            .flat_map(|c| c.iter())
            .map(|x| x * x)
            .sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.col_slices()
            .flat_map(|c| c.iter())
            .fold(0.0, |acc, x| acc.max(x.abs()))
    }

    /// Column sums as a `1 × cols` row vector.
    pub fn column_sums(&self) -> Matrix {
        Self::from_fn(1, self.cols(), |_, j| {
            self.inner.col_as_slice(j).iter().sum()
        })
    }

    /// Adds a `1 × cols` row vector to every row.
    pub fn add_row_broadcast(&self, row: &Matrix) -> Matrix {
        assert_eq!(row.rows(), 1, "broadcast operand must be a row vector");
        assert_eq!(row.cols(), self.cols(), "broadcast width mismatch");
        Self::from_fn(self.rows(), self.cols(), |i, j| {
            self.inner[(i, j)] + row.inner[(0, j)]
        })
    }

    /// `self · other`
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols(),
            other.rows(),
            "inner dimensions differ in matmul"
        );
        let mut out = Mat::zeros(self.rows(), other.cols());
        matmul(
            out.as_mut(),
            Accum::Replace,
            self.inner.as_ref(),
            other.inner.as_ref(),
            1.0,
            Par::Seq,
        );
        Self { inner: out }
    }

    /// `self · otherᵀ` without materializing the transpose.
    pub fn matmul_transposed(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols(),
            other.cols(),
            "inner dimensions differ in matmul_transposed"
        );
        let mut out = Mat::zeros(self.rows(), other.rows());
        matmul(
            out.as_mut(),
            Accum::Replace,
            self.inner.as_ref(),
            other.inner.transpose(),
            1.0,
            Par::Seq,
        );
        Self { inner: out }
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn transposed_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.rows(),
            other.rows(),
            "inner dimensions differ in transposed_matmul"
        );
        let mut out = Mat::zeros(self.cols(), other.cols());
        matmul(
            out.as_mut(),
            Accum::Replace,
            self.inner.transpose(),
            other.inner.as_ref(),
            1.0,
            Par::Seq,
        );
        Self { inner: out }
    }

    /// Outer product `a bᵀ` scaled by `c`.
    pub fn outer(c: f64, a: &[f64], b: &[f64]) -> Matrix {
        Self::from_fn(a.len(), b.len(), |i, j| c * a[i] * b[j])
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(
            self.shape(),
            other.shape(),
            "shape mismatch in max_abs_diff"
        );
        let mut best = 0.0f64;
        for j in 0..self.cols() {
            for (a, b) in self
                .inner
                .col_as_slice(j)
                .iter()
                .zip(other.inner.col_as_slice(j))
            {
                best = best.max((a - b).abs());
            }
        }
        best
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, idx: (usize, usize)) -> &f64 {
        &self.inner[idx]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, idx: (usize, usize)) -> &mut f64 {
        &mut self.inner[idx]
    }
}

impl Add for &Matrix {
    type Output = Matrix;

    fn add(self, rhs: &Matrix) -> Matrix {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &Matrix {
    type Output = Matrix;

    fn sub(self, rhs: &Matrix) -> Matrix {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul for &Matrix {
    type Output = Matrix;

    fn mul(self, rhs: &Matrix) -> Matrix {
        self.matmul(rhs)
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows(), self.cols())?;
        let show_rows = self.rows().min(8);
        let show_cols = self.cols().min(8);
        for i in 0..show_rows {
            write!(f, "  ")?;
            for j in 0..show_cols {
                write!(f, "{:>12.6e} ", self.inner[(i, j)])?;
            }
            if show_cols < self.cols() {
                write!(f, "...")?;
            }
            writeln!(f)?;
        }
        if show_rows < self.rows() {
            writeln!(f, "  ...")?;
        }
        write!(f, "]")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn row_major_round_trip() {
        let data = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let m = Matrix::from_row_major(2, 3, &data).unwrap();
        assert_eq!(m[(0, 2)], 3.0);
        assert_eq!(m[(1, 0)], 4.0);
        assert_eq!(m.to_row_major(), data);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(matches!(
            Matrix::from_row_major(0, 3, &[]),
            Err(LinalgError::EmptyMatrix)
        ));
        assert!(matches!(
            Matrix::from_row_major(2, 2, &[1.0, 2.0, 3.0]),
            Err(LinalgError::DataLength { .. })
        ));
        assert!(matches!(
            Matrix::from_row_major(1, 2, &[1.0, f64::NAN]),
            Err(LinalgError::NonFinite { row: 0, col: 1 })
        ));
        assert!(matches!(
            Matrix::from_rows(&[&[1.0, 2.0], &[3.0]]),
            Err(LinalgError::RaggedRows)
        ));
    }

    #[test]
    fn products_agree() {
        let a = Matrix::from_fn(3, 4, |i, j| (i * 4 + j) as f64 - 5.0);
        let b = Matrix::from_fn(5, 4, |i, j| (i as f64) * 0.5 - j as f64);
        let direct = a.matmul(&b.transpose());
        assert_eq!(a.matmul_transposed(&b).max_abs_diff(&direct), 0.0);
        let c = Matrix::from_fn(3, 2, |i, j| (i + j) as f64);
        let direct = a.transpose().matmul(&c);
        assert!(a.transposed_matmul(&c).max_abs_diff(&direct) < 1e-12);
    }

    #[test]
    fn broadcast_and_sums() {
        let a = Matrix::from_fn(2, 3, |i, j| (i + j) as f64);
        let b = a.add_row_broadcast(&Matrix::from_row_major(1, 3, &[1.0, 0.0, -1.0]).unwrap());
        assert_eq!(b.to_row_major(), vec![1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        assert_eq!(a.column_sums().to_row_major(), vec![1.0, 3.0, 5.0]);
        assert_eq!(a.sum_of_squares(), 0.0 + 1.0 + 4.0 + 1.0 + 4.0 + 9.0);
    }
}
