//! The condition-number regularizer
//!
//! ```text
//! r(S) = ½‖S‖₂² − (1/2ν)‖S‖_F²,    ν = min(n, m)
//! ```
//!
//! `r` is nonnegative and vanishes exactly on nonzero multiples of matrices
//! with orthonormal rows or columns (full rank, condition number 1). It is the
//! difference of two convex functions and is differentiable wherever the
//! largest singular value is simple:
//!
//! ```text
//! ∇r(S) = σ₁ u₁ v₁ᵀ − S/ν
//! ```
//!
//! When `σ₁` is repeated the subdifferential is the convex hull of
//! `σᵢ uᵢ vᵢᵀ − S/ν` over the tied indices. [`grad_r`] reports both cases and
//! always offers a canonical element (the mean of the extreme points) that
//! optimizers can use directly.
//!
//! The module also carries checkers for the exponential condition-number
//! bound, the exact condition-number decrease of a single gradient step, and
//! the Tikhonov (Frobenius) penalty used as a baseline.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::linalg::{self, LinalgError, Matrix, SpectrumSummary};

/// Two singular values are tied with `σ₁` iff `σ₁ − σᵢ ≤ TIE_RTOL · max(1, σ₁)`.
pub const TIE_RTOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("descent step requires unique largest singular value")]
    TiedLargestSingularValue,
    #[error("descent step requires numerical rank >= 2, got {rank}")]
    RankTooLow { rank: usize },
    #[error("step size {lambda} outside (0, {max}]")]
    StepOutOfRange { lambda: f64, max: f64 },
}

fn is_tied(sigma_max: f64, sigma_i: f64) -> bool {
    sigma_max - sigma_i <= TIE_RTOL * sigma_max.max(1.0)
}

/// `r(S)`. Nonnegative up to roundoff; zero for the zero matrix.
pub fn reg_value(s: &Matrix) -> Result<f64, LinalgError> {
    let sigma_max = linalg::spectral_norm(s)?;
    Ok(reg_value_from_parts(
        sigma_max,
        linalg::frobenius_norm_sq(s),
        s.nu(),
    ))
}

fn reg_value_from_parts(sigma_max: f64, frob_sq: f64, nu: usize) -> f64 {
    0.5 * sigma_max * sigma_max - frob_sq / (2.0 * nu as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientKind {
    Unique,
    Tied,
}

/// Gradient or subdifferential of `r` at a point.
#[derive(Debug, Clone, PartialEq)]
pub enum RegGradient {
    /// `σ₁` is simple; `r` is differentiable.
    Unique(Matrix),
    /// `σ₁` is repeated. `extreme_points` are `σᵢ uᵢ vᵢᵀ − S/ν` for every tied
    /// index, `canonical` is their arithmetic mean.
    Tied {
        extreme_points: Vec<Matrix>,
        canonical: Matrix,
    },
}

impl RegGradient {
    pub fn kind(&self) -> GradientKind {
        match self {
            RegGradient::Unique(_) => GradientKind::Unique,
            RegGradient::Tied { .. } => GradientKind::Tied,
        }
    }

    /// The gradient, if `r` is differentiable at the point.
    pub fn gradient(&self) -> Option<&Matrix> {
        match self {
            RegGradient::Unique(g) => Some(g),
            RegGradient::Tied { .. } => None,
        }
    }

    pub fn extreme_points(&self) -> Option<&[Matrix]> {
        match self {
            RegGradient::Unique(_) => None,
            RegGradient::Tied { extreme_points, .. } => Some(extreme_points),
        }
    }

    /// A deterministic element of the subdifferential: the gradient when
    /// unique, otherwise the mean of the extreme points.
    pub fn canonical(&self) -> &Matrix {
        match self {
            RegGradient::Unique(g) => g,
            RegGradient::Tied { canonical, .. } => canonical,
        }
    }

    pub fn into_canonical(self) -> Matrix {
        match self {
            RegGradient::Unique(g) => g,
            RegGradient::Tied { canonical, .. } => canonical,
        }
    }
}

/// Gradient (or subdifferential) of `r` at `s`.
pub fn grad_r(s: &Matrix) -> Result<RegGradient, LinalgError> {
    Ok(grad_from_svd(s, &linalg::thin_svd(s)?))
}

/// `r(S)` and its canonical (sub)gradient from a single decomposition.
pub fn reg_value_and_grad(s: &Matrix) -> Result<(f64, Matrix), LinalgError> {
    let f = linalg::thin_svd(s)?;
    let value = reg_value_from_parts(f.sigma_max(), linalg::frobenius_norm_sq(s), s.nu());
    Ok((value, grad_from_svd(s, &f).into_canonical()))
}

fn grad_from_svd(s: &Matrix, f: &linalg::ThinSvd) -> RegGradient {
    let nu = f.sigma.len();
    let sigma_max = f.sigma_max();
    let tied: Vec<usize> = (0..nu)
        .filter(|&i| is_tied(sigma_max, f.sigma[i]))
        .collect();
    let inv_nu = 1.0 / nu as f64;

    let point = |i: usize| {
        let mut g = f.rank_one(i);
        g.add_scaled_in_place(-inv_nu, s);
        g
    };

    if tied.len() == 1 {
        return RegGradient::Unique(point(0));
    }
    let extreme_points: Vec<Matrix> = tied.iter().map(|&i| point(i)).collect();
    let mut canonical = Matrix::zeros(s.rows(), s.cols());
    for p in &extreme_points {
        canonical.add_scaled_in_place(1.0, p);
    }
    let canonical = canonical.scale(1.0 / extreme_points.len() as f64);
    RegGradient::Tied {
        extreme_points,
        canonical,
    }
}

/// Both sides of `κ(S) ≤ exp(ν σ_min>0⁻² r(S))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KappaBound {
    pub lhs: f64,
    /// `+∞` when the exponent overflows.
    pub rhs: f64,
}

impl KappaBound {
    pub fn holds(&self) -> bool {
        self.rhs.is_infinite() || self.lhs <= self.rhs * (1.0 + 1e-10)
    }
}

pub fn check_kappa_bound(s: &Matrix) -> Result<KappaBound, LinalgError> {
    let sigma = linalg::singular_values(s)?;
    let summary = SpectrumSummary::from_sigma(s.rows(), s.cols(), &sigma);
    let sigma_min = summary.sigma_min_pos.ok_or(LinalgError::ZeroMatrix)?;
    let lhs = summary.sigma_max / sigma_min;
    let r = reg_value_from_parts(summary.sigma_max, linalg::frobenius_norm_sq(s), summary.nu);
    // r may round to a tiny negative value; the bound is then exp(0-) ≈ 1
    let rhs = (summary.nu as f64 * r / (sigma_min * sigma_min)).exp();
    Ok(KappaBound { lhs, rhs })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DescentCase {
    /// `σ₁` stays the largest singular value; `κ' = (1 − λ/(1+λ/ν)) κ`.
    LeaderKept,
    /// `σ₂` takes over as the largest singular value; `κ' = κ/α`.
    LeaderOvertaken,
}

impl fmt::Display for DescentCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DescentCase::LeaderKept => "case1",
            DescentCase::LeaderOvertaken => "case2",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DescentReport {
    pub lambda: f64,
    pub kappa_before: f64,
    pub kappa_after: f64,
    pub predicted_kappa_after: f64,
    pub case: DescentCase,
    /// `σ₁ / σ₂`
    pub alpha: f64,
    /// Largest admissible step for this matrix.
    pub max_step: f64,
}

impl DescentReport {
    pub fn relative_prediction_error(&self) -> f64 {
        (self.kappa_after - self.predicted_kappa_after).abs() / self.kappa_before
    }
}

/// Largest `λ ≤ 1` with `1 − λ/(1 + λ/ν) ≥ 1/κ`, i.e.
/// `λ ≤ ν(κ − 1) / (1 + κ(ν − 1))`.
pub fn max_descent_step(kappa: f64, nu: usize) -> f64 {
    let nu = nu as f64;
    (nu * (kappa - 1.0) / (1.0 + kappa * (nu - 1.0))).min(1.0)
}

/// Shrink factor applied to `κ` when the leading singular value stays on top.
pub fn leader_shrink_factor(lambda: f64, nu: usize) -> f64 {
    1.0 - lambda / (1.0 + lambda / nu as f64)
}

/// One plain gradient step `S' = S − λ ∇r(S)` together with the exact
/// predicted condition number of `S'`.
pub fn descent_step(s: &Matrix, lambda: f64) -> Result<(Matrix, DescentReport), RegError> {
    let f = linalg::thin_svd(s)?;
    let summary = SpectrumSummary::from_sigma(s.rows(), s.cols(), &f.sigma);
    if summary.numerical_rank < 2 {
        return Err(RegError::RankTooLow {
            rank: summary.numerical_rank,
        });
    }
    if is_tied(f.sigma[0], f.sigma[1]) {
        return Err(RegError::TiedLargestSingularValue);
    }
    let sigma_min = summary.sigma_min_pos.expect("rank >= 2");
    let kappa_before = summary.sigma_max / sigma_min;
    let nu = summary.nu;
    let max_step = max_descent_step(kappa_before, nu);
    if !(lambda > 0.0 && lambda <= max_step) {
        return Err(RegError::StepOutOfRange {
            lambda,
            max: max_step,
        });
    }

    let mut grad = f.rank_one(0);
    grad.add_scaled_in_place(-1.0 / nu as f64, s);
    let mut next = s.clone();
    next.add_scaled_in_place(-lambda, &grad);

    let alpha = f.sigma[0] / f.sigma[1];
    let shrink = leader_shrink_factor(lambda, nu);
    let (case, predicted) = if 1.0 / alpha < shrink {
        (DescentCase::LeaderKept, shrink * kappa_before)
    } else {
        (DescentCase::LeaderOvertaken, kappa_before / alpha)
    };
    let kappa_after = linalg::kappa(&next)?;
    Ok((
        next,
        DescentReport {
            lambda,
            kappa_before,
            kappa_after,
            predicted_kappa_after: predicted,
            case,
            alpha,
            max_step,
        },
    ))
}

/// `‖S‖_F²`
pub fn tikhonov_value(s: &Matrix) -> f64 {
    linalg::frobenius_norm_sq(s)
}

/// `2S`
pub fn tikhonov_grad(s: &Matrix) -> Matrix {
    s.scale(2.0)
}

/// Which weight penalty a loss uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RegKind {
    /// The condition-number regularizer `r`.
    Proposed,
    /// `‖W‖_F²`
    Tikhonov,
    None,
}

impl RegKind {
    pub fn value(self, w: &Matrix) -> Result<f64, LinalgError> {
        match self {
            RegKind::Proposed => reg_value(w),
            RegKind::Tikhonov => Ok(tikhonov_value(w)),
            RegKind::None => Ok(0.0),
        }
    }

    /// Gradient of the penalty, canonical subgradient at ties.
    pub fn gradient(self, w: &Matrix) -> Result<Matrix, LinalgError> {
        match self {
            RegKind::Proposed => Ok(grad_r(w)?.into_canonical()),
            RegKind::Tikhonov => Ok(tikhonov_grad(w)),
            RegKind::None => Ok(Matrix::zeros(w.rows(), w.cols())),
        }
    }

    /// Value and gradient together; the proposed penalty shares one SVD.
    pub fn value_and_gradient(self, w: &Matrix) -> Result<(f64, Matrix), LinalgError> {
        match self {
            RegKind::Proposed => reg_value_and_grad(w),
            other => Ok((other.value(w)?, other.gradient(w)?)),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RegKind::Proposed => "proposed",
            RegKind::Tikhonov => "tikhonov",
            RegKind::None => "none",
        }
    }
}

impl fmt::Display for RegKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RegKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "proposed" => Ok(RegKind::Proposed),
            "tikhonov" => Ok(RegKind::Tikhonov),
            "none" => Ok(RegKind::None),
            other => Err(format!(
                "unknown regularizer '{other}' (expected proposed|tikhonov|none)"
            )),
        }
    }
}
