use faer::Mat;

use super::{LinalgError, Matrix};

/// Full singular value decomposition `S = U · Diag(σ) · Vᵀ`.
///
/// `u` is `n × n`, `v` is `m × m`, `sigma` has `ν = min(n, m)` entries sorted
/// nonincreasing. For every column `uᵢ` the entry of largest magnitude is
/// nonnegative (ties go to the lowest row index); `vᵢ` is flipped together with
/// `uᵢ` for `i < ν`, trailing basis columns are normalized on their own.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

/// Thin decomposition: `u` is `n × ν`, `v` is `m × ν`. Same ordering and sign
/// convention as [`SvdFactors`].
#[derive(Debug, Clone, PartialEq)]
pub struct ThinSvd {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

impl ThinSvd {
    pub fn sigma_max(&self) -> f64 {
        self.sigma.first().copied().unwrap_or(0.0)
    }

    /// `σᵢ uᵢ vᵢᵀ`
    pub fn rank_one(&self, i: usize) -> Matrix {
        Matrix::outer(self.sigma[i], self.u.col(i), self.v.col(i))
    }
}

impl SvdFactors {
    /// `U · Diag(σ) · Vᵀ`
    pub fn recompose(&self) -> Matrix {
        let (n, m) = (self.u.rows(), self.v.rows());
        let k = self.sigma.len();
        let us = Matrix::from_fn(n, k, |i, j| self.u[(i, j)] * self.sigma[j]);
        let vk = Matrix::from_fn(m, k, |i, j| self.v[(i, j)]);
        us.matmul_transposed(&vk)
    }
}

pub fn svd(s: &Matrix) -> Result<SvdFactors, LinalgError> {
    let raw = s.as_faer().svd().map_err(|_| LinalgError::SvdFailed {
        rows: s.rows(),
        cols: s.cols(),
    })?;
    let mut u = raw.U().to_owned();
    let mut v = raw.V().to_owned();
    let sigma: Vec<f64> = raw.S().column_vector().iter().copied().collect();
    apply_sign_convention(&mut u, &mut v, sigma.len());
    Ok(SvdFactors {
        u: Matrix::from_faer(u),
        sigma,
        v: Matrix::from_faer(v),
    })
}

/// Thin SVD. Wide inputs are decomposed through their transpose, which is
/// the faster orientation for the underlying bidiagonalization.
pub fn thin_svd(s: &Matrix) -> Result<ThinSvd, LinalgError> {
    let failed = |_| LinalgError::SvdFailed {
        rows: s.rows(),
        cols: s.cols(),
    };
    let wide = s.rows() < s.cols();
    let (mut u, mut v, sigma) = if wide {
        let t = s.as_faer().transpose().to_owned();
        let raw = t.thin_svd().map_err(failed)?;
        let sigma: Vec<f64> = raw.S().column_vector().iter().copied().collect();
        (raw.V().to_owned(), raw.U().to_owned(), sigma)
    } else {
        let raw = s.as_faer().thin_svd().map_err(failed)?;
        let sigma: Vec<f64> = raw.S().column_vector().iter().copied().collect();
        (raw.U().to_owned(), raw.V().to_owned(), sigma)
    };
    apply_sign_convention(&mut u, &mut v, sigma.len());
    Ok(ThinSvd {
        u: Matrix::from_faer(u),
        sigma,
        v: Matrix::from_faer(v),
    })
}

/// Index of the entry with the largest magnitude, lowest index on ties.
fn pivot_index(col: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in col.iter().enumerate() {
        if x.abs() > col[best].abs() {
            best = i;
        }
    }
    best
}

fn flip_col(m: &mut Mat<f64>, j: usize) {
    for x in m.col_as_slice_mut(j) {
        *x = -*x;
    }
}

fn apply_sign_convention(u: &mut Mat<f64>, v: &mut Mat<f64>, nu: usize) {
    for j in 0..nu {
        let col = u.col_as_slice(j);
        if col[pivot_index(col)] < 0.0 {
            flip_col(u, j);
            flip_col(v, j);
        }
    }
    for m in [u, v] {
        for j in nu..m.ncols() {
            let col = m.col_as_slice(j);
            if col[pivot_index(col)] < 0.0 {
                flip_col(m, j);
            }
        }
    }
}
