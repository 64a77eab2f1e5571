use std::fmt;

use rand::Rng;

use crate::data::{derive_seed, gaussian_matrix, seeded_rng, SeededRng};
use crate::linalg::{self, kappa, singular_values, svd, Matrix};
use crate::regularizer::{
    check_kappa_bound, descent_step, grad_r, max_descent_step, reg_value, tikhonov_grad,
    tikhonov_value, DescentCase, GradientKind,
};

use super::{num, CsvRecord, ExperimentError, SCHEMA_VERSION};

/// Outcome of one invariant suite.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckItem {
    pub name: &'static str,
    pub trials: usize,
    /// Largest deviation seen, in the units described by `detail`.
    pub max_error: f64,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckItem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {:<24} trials={:<5} max_error={:.3e}  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.trials,
            self.max_error,
            self.detail
        )
    }
}

impl CsvRecord for CheckItem {
    const HEADER: &'static [&'static str] = &[
        "schema_version",
        "experiment",
        "check",
        "trials",
        "max_error",
        "passed",
    ];

    fn fields(&self) -> Vec<String> {
        vec![
            SCHEMA_VERSION.to_string(),
            "check".into(),
            self.name.into(),
            self.trials.to_string(),
            num(self.max_error),
            self.passed.to_string(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub items: Vec<CheckItem>,
}

impl CheckReport {
    pub fn all_passed(&self) -> bool {
        self.items.iter().all(|i| i.passed)
    }
}

type Suite = fn(&mut SeededRng, usize) -> Result<CheckItem, ExperimentError>;

/// Runs every linear-algebra and regularizer invariant suite with `trials`
/// random instances each (the gradient suite spreads its trials over three
/// shapes).
pub fn run_checks(seed: u64, trials: usize) -> Result<CheckReport, ExperimentError> {
    super::require(trials >= 1, "trials must be at least 1")?;
    let suites: [Suite; 10] = [
        check_svd,
        check_discontinuity,
        check_zero_set,
        check_nonnegativity,
        check_homogeneity,
        check_gradient,
        check_tikhonov_gradient,
        check_kappa_bounds,
        check_decrement,
        check_unique,
    ];
    let mut items = Vec::with_capacity(suites.len());
    for (k, suite) in suites.iter().enumerate() {
        let mut rng = seeded_rng(derive_seed(seed, k as u64));
        items.push(suite(&mut rng, trials)?);
    }
    Ok(CheckReport { items })
}

const SHAPES: [(usize, usize); 6] = [(5, 5), (20, 50), (50, 20), (3, 7), (10, 10), (1, 4)];

fn random_shape(rng: &mut SeededRng) -> (usize, usize) {
    SHAPES[rng.random_range(0..SHAPES.len())]
}

fn orthogonality_defect(q: &Matrix) -> f64 {
    (&q.transposed_matmul(q) - &Matrix::identity(q.cols()))
        .sum_of_squares()
        .sqrt()
}

fn check_svd(rng: &mut SeededRng, trials: usize) -> Result<CheckItem, ExperimentError> {
    let mut worst: f64 = 0.0;
    let mut passed = true;
    for _ in 0..trials {
        let (n, m) = random_shape(rng);
        let s = gaussian_matrix(n, m, 1.0, rng);
        let f = svd(&s)?;
        let ortho = orthogonality_defect(&f.u).max(orthogonality_defect(&f.v)) / n.max(m) as f64;
        let resid =
            (&f.recompose() - &s).sum_of_squares().sqrt() / (1.0 + s.sum_of_squares().sqrt());
        let sorted = f.sigma.windows(2).all(|w| w[0] >= w[1]) && f.sigma.iter().all(|&x| x >= 0.0);
        worst = worst.max(ortho).max(resid);
        passed &= ortho <= 1e-10 && resid <= 1e-10 && sorted;
    }
    Ok(CheckItem {
        name: "svd",
        trials,
        max_error: worst,
        passed,
        detail: "orthogonality and reconstruction defect".into(),
    })
}

fn check_discontinuity(_: &mut SeededRng, _: usize) -> Result<CheckItem, ExperimentError> {
    let mut worst: f64 = 0.0;
    for eps in [1e-1, 1e-3, 1e-6] {
        let k = kappa(&Matrix::diag(&[1.0, eps]))?;
        worst = worst.max((k - 1.0 / eps).abs() * eps);
    }
    let limit = kappa(&Matrix::diag(&[1.0, 0.0]))?;
    let passed = worst <= 1e-9 && limit == 1.0;
    Ok(CheckItem {
        name: "discontinuity",
        trials: 4,
        max_error: worst,
        passed,
        detail: format!("kappa(diag(1,eps)) = 1/eps, kappa(diag(1,0)) = {limit}"),
    })
}

fn random_orthogonal(n: usize, rng: &mut SeededRng) -> Result<Matrix, ExperimentError> {
    Ok(linalg::thin_svd(&gaussian_matrix(n, n, 1.0, rng))?.u)
}

fn check_zero_set(rng: &mut SeededRng, trials: usize) -> Result<CheckItem, ExperimentError> {
    let mut worst: f64 = 0.0;
    let mut passed = true;
    for t in 0..trials {
        let n = if t == 0 { 4 } else { rng.random_range(2..8) };
        let c = if t == 0 {
            1.0
        } else {
            rng.random_range(0.1..10.0)
        };
        let s = random_orthogonal(n, rng)?.scale(c);
        let r = reg_value(&s)?;
        let k = kappa(&s)?;
        worst = worst.max(r.abs() / (c * c)).max((k - 1.0).abs());
        passed &= r.abs() <= 1e-10 * c * c && (k - 1.0).abs() <= 1e-10;

        // distinct singular values: strictly positive penalty
        let d: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * 0.5).collect();
        let q = random_orthogonal(n, rng)?;
        passed &= reg_value(&q.matmul(&Matrix::diag(&d)))? > 0.0;
    }
    Ok(CheckItem {
        name: "zero_set",
        trials,
        max_error: worst,
        passed,
        detail: "r and kappa-1 on scaled orthogonal matrices".into(),
    })
}

fn check_nonnegativity(rng: &mut SeededRng, trials: usize) -> Result<CheckItem, ExperimentError> {
    let mut worst: f64 = 0.0;
    let mut passed = true;
    for _ in 0..trials {
        let (n, m) = random_shape(rng);
        let s = gaussian_matrix(n, m, rng.random_range(0.01..100.0), rng);
        let r = reg_value(&s)?;
        let floor = -1e-12 * (1.0 + s.sum_of_squares());
        worst = worst.max((-r).max(0.0));
        passed &= r >= floor;
    }
    Ok(CheckItem {
        name: "nonnegativity",
        trials,
        max_error: worst,
        passed,
        detail: "largest negative r".into(),
    })
}

fn check_homogeneity(rng: &mut SeededRng, trials: usize) -> Result<CheckItem, ExperimentError> {
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        // r vanishes identically on vectors, so relative error needs ν ≥ 2
        let (n, m) = loop {
            let shape = random_shape(rng);
            if shape.0.min(shape.1) >= 2 {
                break shape;
            }
        };
        let s = gaussian_matrix(n, m, 1.0, rng);
        let r = reg_value(&s)?;
        for c in [0.5, 2.0, 10.0] {
            let rc = reg_value(&s.scale(c))?;
            worst = worst.max((rc - c * c * r).abs() / (c * c * r).abs().max(f64::MIN_POSITIVE));
        }
    }
    Ok(CheckItem {
        name: "homogeneity",
        trials,
        max_error: worst,
        passed: worst <= 1e-10,
        detail: "relative error of r(cS) = c^2 r(S)".into(),
    })
}

/// Central differences of `f` at every entry of `s`, step `1e-6·(1 + ‖S‖_F)`.
fn finite_difference(
    s: &Matrix,
    f: impl Fn(&Matrix) -> Result<f64, ExperimentError>,
) -> Result<Matrix, ExperimentError> {
    let h = 1e-6 * (1.0 + s.sum_of_squares().sqrt());
    let mut out = Matrix::zeros(s.rows(), s.cols());
    let mut probe = s.clone();
    for i in 0..s.rows() {
        for j in 0..s.cols() {
            let x = s[(i, j)];
            probe[(i, j)] = x + h;
            let up = f(&probe)?;
            probe[(i, j)] = x - h;
            let down = f(&probe)?;
            probe[(i, j)] = x;
            out[(i, j)] = (up - down) / (2.0 * h);
        }
    }
    Ok(out)
}

/// Largest `|a − b| / (atol + rtol·|b|)`; at most 1 means within tolerance.
fn scaled_deviation(a: &Matrix, b: &Matrix, atol: f64, rtol: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            worst = worst.max((a[(i, j)] - b[(i, j)]).abs() / (atol + rtol * b[(i, j)].abs()));
        }
    }
    worst
}

fn well_separated(rng: &mut SeededRng, n: usize, m: usize) -> Result<Matrix, ExperimentError> {
    loop {
        let s = gaussian_matrix(n, m, 1.0, rng);
        let sigma = singular_values(&s)?;
        if sigma.len() < 2 || sigma[0] / sigma[1] > 1.01 {
            return Ok(s);
        }
    }
}

fn check_gradient(rng: &mut SeededRng, trials: usize) -> Result<CheckItem, ExperimentError> {
    let shapes = [(5, 5), (20, 50), (50, 20)];
    let mut worst: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut passed = true;
    for t in 0..trials {
        let (n, m) = shapes[t % shapes.len()];
        let s = well_separated(rng, n, m)?;
        let g = grad_r(&s)?;
        passed &= g.kind() == GradientKind::Unique;
        let fd = finite_difference(&s, |p| Ok(reg_value(p)?))?;
        worst = worst.max(scaled_deviation(g.canonical(), &fd, 1e-5, 1e-4));
        max_abs = max_abs.max(g.canonical().max_abs_diff(&fd));
    }
    passed &= worst <= 1.0;
    Ok(CheckItem {
        name: "gradient",
        trials,
        max_error: max_abs,
        passed,
        detail: format!("max |grad - fd|, tolerance usage {worst:.3}"),
    })
}

fn check_tikhonov_gradient(
    rng: &mut SeededRng,
    trials: usize,
) -> Result<CheckItem, ExperimentError> {
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let s = gaussian_matrix(5, 5, 1.0, rng);
        let fd = finite_difference(&s, |p| Ok(tikhonov_value(p)))?;
        worst = worst.max(tikhonov_grad(&s).max_abs_diff(&fd));
    }
    Ok(CheckItem {
        name: "tikhonov_gradient",
        trials,
        max_error: worst,
        passed: worst <= 1e-6,
        detail: "max |2S - fd|".into(),
    })
}

fn check_kappa_bounds(rng: &mut SeededRng, trials: usize) -> Result<CheckItem, ExperimentError> {
    let pair = check_kappa_bound(&Matrix::diag(&[2.0, 1.0]))?;
    let mut passed = pair.lhs == 2.0 && (pair.rhs - 1.5f64.exp()).abs() <= 1e-12 * pair.rhs;
    let mut worst: f64 = 0.0;
    for t in 0..trials {
        let (n, m) = random_shape(rng);
        let mut s = gaussian_matrix(n, m, 1.0, rng);
        if t % 4 == 3 && n.min(m) > 2 {
            // rank-deficient instances exercise the sigma_min > 0 convention
            let f = linalg::thin_svd(&s)?;
            s = Matrix::from_fn(n, m, |i, j| {
                (0..2).map(|k| f.sigma[k] * f.u[(i, k)] * f.v[(j, k)]).sum()
            });
        }
        let b = check_kappa_bound(&s)?;
        passed &= b.holds();
        if b.rhs.is_finite() {
            worst = worst.max(b.lhs / b.rhs);
        }
    }
    Ok(CheckItem {
        name: "kappa_bound",
        trials: trials + 1,
        max_error: worst,
        passed,
        detail: "largest lhs/rhs (must stay <= 1)".into(),
    })
}

fn check_decrement(rng: &mut SeededRng, trials: usize) -> Result<CheckItem, ExperimentError> {
    let (_, example) = descent_step(&Matrix::diag(&[2.0, 1.0]), 0.1)
        .map_err(|e| ExperimentError::Config(e.to_string()))?;
    let mut passed =
        (example.kappa_after - 1.9 / 1.05).abs() <= 1e-6 && example.case == DescentCase::LeaderKept;
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < trials {
        let s = gaussian_matrix(10, 10, 1.0, rng);
        let k = kappa(&s)?;
        let lambda = 0.5 * max_descent_step(k, 10);
        let report = match descent_step(&s, lambda) {
            Ok((_, r)) => r,
            // tied or rank-deficient draws are skipped, not counted
            Err(_) => continue,
        };
        worst = worst.max(report.relative_prediction_error());
        passed &=
            report.relative_prediction_error() <= 1e-8 && report.kappa_after < report.kappa_before;
        done += 1;
    }
    Ok(CheckItem {
        name: "exact_decrement",
        trials: trials + 1,
        max_error: worst,
        passed,
        detail: "relative error of predicted kappa".into(),
    })
}

fn check_unique(rng: &mut SeededRng, trials: usize) -> Result<CheckItem, ExperimentError> {
    let mut unique = 0;
    for _ in 0..trials {
        if grad_r(&gaussian_matrix(10, 10, 1.0, rng))?.kind() == GradientKind::Unique {
            unique += 1;
        }
    }
    let identity = grad_r(&Matrix::identity(2))?;
    let tied_ok = identity.kind() == GradientKind::Tied && identity.canonical().max_abs() == 0.0;
    Ok(CheckItem {
        name: "unique_gradient",
        trials,
        max_error: (trials - unique) as f64,
        passed: unique == trials && tied_ok,
        detail: format!("{unique}/{trials} random 10x10 matrices differentiable"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_run_passes() {
        let report = run_checks(7, 6).unwrap();
        for item in &report.items {
            assert!(item.passed, "{item}");
        }
        assert_eq!(report.items.len(), 10);
    }

    #[test]
    fn deterministic() {
        assert_eq!(run_checks(3, 4).unwrap(), run_checks(3, 4).unwrap());
    }
}
