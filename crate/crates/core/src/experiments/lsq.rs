use std::time::Instant;

use crate::data::{derive_seed, gaussian_matrix, make_lsq_problem, seeded_rng, LsqProblem};
use crate::linalg::{kappa, Matrix};
use crate::regularizer::RegKind;

use super::{num, par_map, require, CsvRecord, ExperimentError, RunStatus, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq)]
pub struct LsqConfig {
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub steps: usize,
    pub lambdas: Vec<f64>,
    pub repeats: usize,
    pub base_seed: u64,
    pub reg_kind: RegKind,
    pub learning_rate: f64,
    pub jobs: usize,
}

impl Default for LsqConfig {
    fn default() -> Self {
        Self {
            n: 20,
            m: 50,
            d: 100,
            steps: 100_000,
            lambdas: (0..=10).map(|k| 10.0 * k as f64).collect(),
            repeats: 10,
            base_seed: 0,
            reg_kind: RegKind::Proposed,
            learning_rate: 1e-4,
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsqRecord {
    pub reg: RegKind,
    pub lambda: f64,
    pub seed: u64,
    pub learning_rate: f64,
    pub kappa_w: f64,
    /// `‖W_λX − Y‖_F / ‖W_0X − Y‖_F` against the λ = 0 run on the same problem.
    pub error_ratio: f64,
    /// `‖W_λX − Y‖_F`
    pub residual: f64,
    pub steps: usize,
    pub status: RunStatus,
    pub wall_time_seconds: f64,
}

impl CsvRecord for LsqRecord {
    const HEADER: &'static [&'static str] = &[
        "schema_version",
        "experiment",
        "reg",
        "lambda",
        "seed",
        "lr",
        "kappa_w",
        "metric",
        "value",
        "residual",
        "steps",
        "status",
        "wall_time_seconds",
    ];

    fn fields(&self) -> Vec<String> {
        vec![
            SCHEMA_VERSION.to_string(),
            "lsq".into(),
            self.reg.to_string(),
            num(self.lambda),
            self.seed.to_string(),
            num(self.learning_rate),
            num(self.kappa_w),
            "error_ratio".into(),
            num(self.error_ratio),
            num(self.residual),
            self.steps.to_string(),
            self.status.to_string(),
            format!("{:.3}", self.wall_time_seconds),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LsqOutcome {
    pub w: Matrix,
    pub steps: usize,
    pub status: RunStatus,
}

/// Plain gradient descent on `‖WX − Y‖_F² + λ·penalty(W)` from `w0`.
///
/// `XXᵀ` and `YXᵀ` are formed once, so a step costs an `n × m × m` product
/// plus whatever the penalty gradient needs.
pub fn solve_lsq(
    problem: &LsqProblem,
    w0: &Matrix,
    lambda: f64,
    reg: RegKind,
    lr: f64,
    steps: usize,
) -> LsqOutcome {
    let xxt = problem.x.matmul_transposed(&problem.x);
    let yxt = problem.y.matmul_transposed(&problem.x);
    let regularize = lambda != 0.0 && reg != RegKind::None;
    let mut w = w0.clone();
    for step in 1..=steps {
        let mut grad = (&w.matmul(&xxt) - &yxt).scale(2.0);
        if regularize {
            match reg.gradient(&w) {
                Ok(g) => grad.add_scaled_in_place(lambda, &g),
                Err(_) => {
                    return LsqOutcome {
                        w,
                        steps: step,
                        status: RunStatus::Diverged { step },
                    }
                }
            }
        }
        w.add_scaled_in_place(-lr, &grad);
        if !w.is_finite() {
            return LsqOutcome {
                w,
                steps: step,
                status: RunStatus::Diverged { step },
            };
        }
    }
    LsqOutcome {
        w,
        steps,
        status: RunStatus::Ok,
    }
}

fn residual(problem: &LsqProblem, w: &Matrix) -> f64 {
    (&w.matmul(&problem.x) - &problem.y).sum_of_squares().sqrt()
}

struct Task {
    repeat: usize,
    lambda: f64,
}

struct Finished {
    outcome: LsqOutcome,
    residual: f64,
    kappa: f64,
    seconds: f64,
}

/// λ sweep over `repeats` random problems. Repeat `r` uses seed
/// `base_seed + r` for both the problem and `W₀ ~ N(0, 1/m)`, shared by every
/// λ so that error ratios compare like with like. The λ = 0 baseline is
/// always solved, even when it is not in `lambdas`.
pub fn run_lsq(cfg: &LsqConfig) -> Result<Vec<LsqRecord>, ExperimentError> {
    require(
        cfg.n >= 1 && cfg.m >= 1 && cfg.d >= 1,
        "n, m, d must be positive",
    )?;
    require(cfg.steps >= 1, "steps must be at least 1")?;
    require(!cfg.lambdas.is_empty(), "lambda list is empty")?;
    require(
        cfg.lambdas.iter().all(|l| l.is_finite() && *l >= 0.0),
        "lambdas must be finite and nonnegative",
    )?;
    require(cfg.repeats >= 1, "repeats must be at least 1")?;
    require(
        cfg.learning_rate > 0.0 && cfg.learning_rate.is_finite(),
        "learning rate must be positive",
    )?;

    let mut grid: Vec<f64> = vec![0.0];
    for &l in &cfg.lambdas {
        if !grid.contains(&l) {
            grid.push(l);
        }
    }
    let tasks: Vec<Task> = (0..cfg.repeats)
        .flat_map(|repeat| grid.iter().map(move |&lambda| Task { repeat, lambda }))
        .collect();

    let results = par_map(cfg.jobs, &tasks, |t| {
        let start = Instant::now();
        let seed = cfg.base_seed + t.repeat as u64;
        let problem = make_lsq_problem(cfg.n, cfg.m, cfg.d, derive_seed(seed, 0));
        let w0 = gaussian_matrix(
            cfg.n,
            cfg.m,
            (1.0 / cfg.m as f64).sqrt(),
            &mut seeded_rng(derive_seed(seed, 1)),
        );
        let outcome = solve_lsq(
            &problem,
            &w0,
            t.lambda,
            cfg.reg_kind,
            cfg.learning_rate,
            cfg.steps,
        );
        let (res, k) = match outcome.status {
            RunStatus::Ok => (
                residual(&problem, &outcome.w),
                kappa(&outcome.w).unwrap_or(f64::NAN),
            ),
            RunStatus::Diverged { .. } => (f64::NAN, f64::NAN),
        };
        Finished {
            outcome,
            residual: res,
            kappa: k,
            seconds: start.elapsed().as_secs_f64(),
        }
    })?;

    let mut records = Vec::with_capacity(cfg.repeats * cfg.lambdas.len());
    for repeat in 0..cfg.repeats {
        let at = |lambda: f64| {
            let i = tasks
                .iter()
                .position(|t| t.repeat == repeat && t.lambda == lambda)
                .expect("task exists");
            &results[i]
        };
        let baseline = at(0.0).residual;
        for &lambda in &cfg.lambdas {
            let f = at(lambda);
            records.push(LsqRecord {
                reg: cfg.reg_kind,
                lambda,
                seed: cfg.base_seed + repeat as u64,
                learning_rate: cfg.learning_rate,
                kappa_w: f.kappa,
                error_ratio: f.residual / baseline,
                residual: f.residual,
                steps: f.outcome.steps,
                status: f.outcome.status.clone(),
                wall_time_seconds: f.seconds,
            });
        }
    }
    Ok(records)
}
