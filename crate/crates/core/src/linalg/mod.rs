//! Dense linear-algebra kernel: singular value decomposition, matrix norms,
//! the Moore–Penrose pseudoinverse, condition number and numerical rank.
//!
//! The heavy lifting (bidiagonalization and the implicit QR / divide and
//! conquer SVD) is delegated to `faer`. This module pins down the parts that
//! matter for reproducibility: singular values sorted nonincreasing, a
//! deterministic sign convention on the singular vectors, and a single rank
//! tolerance used everywhere a singular value has to be called "nonzero".

mod matrix;
mod svd;

pub use matrix::Matrix;
pub use svd::{svd, thin_svd, SvdFactors, ThinSvd};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("svd failed to converge for a {rows}x{cols} matrix")]
    SvdFailed { rows: usize, cols: usize },
    #[error("kappa undefined for zero matrix")]
    ZeroMatrix,
    #[error("matrix must have at least one row and one column")]
    EmptyMatrix,
    #[error("expected {rows}x{cols} = {} entries, got {len}", rows * cols)]
    DataLength {
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("rows have different lengths")]
    RaggedRows,
    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
}

/// Machine epsilon used by the rank criterion, `2^-52`.
pub const RANK_EPS: f64 = f64::EPSILON;

/// Singular values strictly above this threshold count as nonzero:
/// `max(n, m) · eps · σ_max`.
pub fn rank_tolerance(rows: usize, cols: usize, sigma_max: f64) -> f64 {
    rows.max(cols) as f64 * RANK_EPS * sigma_max
}

/// Singular values in nonincreasing order, without vectors.
pub fn singular_values(s: &Matrix) -> Result<Vec<f64>, LinalgError> {
    s.as_faer()
        .singular_values()
        .map_err(|_| LinalgError::SvdFailed {
            rows: s.rows(),
            cols: s.cols(),
        })
}

/// `‖S‖₂ = σ_max(S)`, read off the top eigenvalue of the smaller Gram matrix.
/// Squaring costs nothing in relative accuracy at the top of the spectrum and
/// runs a few times faster than a full singular value sweep.
pub fn spectral_norm(s: &Matrix) -> Result<f64, LinalgError> {
    let a = s.as_faer();
    let gram = if a.nrows() <= a.ncols() {
        a * a.transpose()
    } else {
        a.transpose() * a
    };
    let eig = gram
        .self_adjoint_eigenvalues(faer::Side::Lower)
        .map_err(|_| LinalgError::SvdFailed {
            rows: s.rows(),
            cols: s.cols(),
        })?;
    Ok(eig.last().copied().unwrap_or(0.0).max(0.0).sqrt())
}

/// `‖S‖_F²`, the sum of squared entries.
pub fn frobenius_norm_sq(s: &Matrix) -> f64 {
    s.sum_of_squares()
}

/// Moore–Penrose pseudoinverse `V · Diag(σ†) · Uᵀ`, inverting only singular
/// values above the rank tolerance.
pub fn pseudoinverse(s: &Matrix) -> Result<Matrix, LinalgError> {
    let f = thin_svd(s)?;
    let tol = rank_tolerance(s.rows(), s.cols(), f.sigma_max());
    let (n, m) = s.shape();
    let inv: Vec<f64> = f
        .sigma
        .iter()
        .map(|&x| if x > tol { 1.0 / x } else { 0.0 })
        .collect();
    Ok(Matrix::from_fn(m, n, |i, j| {
        inv.iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .map(|(k, w)| f.v[(i, k)] * w * f.u[(j, k)])
            .sum()
    }))
}

/// Condition number `σ_max / σ_min>0`, where `σ_min>0` is the smallest
/// singular value above the rank tolerance.
pub fn kappa(s: &Matrix) -> Result<f64, LinalgError> {
    kappa_from_sigma(s.rows(), s.cols(), &singular_values(s)?)
}

/// Condition number from an already computed (sorted) spectrum.
pub fn kappa_from_sigma(rows: usize, cols: usize, sigma: &[f64]) -> Result<f64, LinalgError> {
    let summary = SpectrumSummary::from_sigma(rows, cols, sigma);
    match summary.sigma_min_pos {
        Some(min) => Ok(summary.sigma_max / min),
        None => Err(LinalgError::ZeroMatrix),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumSummary {
    pub sigma_max: f64,
    /// Smallest singular value above the rank tolerance; `None` for the zero matrix.
    pub sigma_min_pos: Option<f64>,
    pub numerical_rank: usize,
    pub nu: usize,
}

impl SpectrumSummary {
    pub fn from_sigma(rows: usize, cols: usize, sigma: &[f64]) -> Self {
        let sigma_max = sigma.first().copied().unwrap_or(0.0);
        let tol = rank_tolerance(rows, cols, sigma_max);
        let numerical_rank = sigma.iter().filter(|&&x| x > tol).count();
        let sigma_min_pos = numerical_rank.checked_sub(1).map(|k| sigma[k]);
        Self {
            sigma_max,
            sigma_min_pos,
            numerical_rank,
            nu: rows.min(cols),
        }
    }
}

pub fn spectrum_summary(s: &Matrix) -> Result<SpectrumSummary, LinalgError> {
    Ok(SpectrumSummary::from_sigma(
        s.rows(),
        s.cols(),
        &singular_values(s)?,
    ))
}
