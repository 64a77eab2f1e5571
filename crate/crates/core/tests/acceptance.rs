//! End-to-end acceptance checks. Runs every criterion (or the numbers given
//! on the command line), prints one line per criterion and exits nonzero if
//! any of them fails.
//!
//! ```text
//! cargo test -p condreg --test acceptance            # all
//! cargo test -p condreg --test acceptance -- 1 4 9   # a subset
//! ```

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use condreg::data::{gaussian_matrix, load_mnist, seeded_rng, Dataset, SeededRng, Split};
use condreg::experiments::{
    run_classify, run_denoise, run_lsq, ClassifyConfig, DenoiseConfig, LsqConfig, LsqRecord,
};
use condreg::linalg::{kappa, singular_values, Matrix};
use condreg::regularizer::{
    check_kappa_bound, descent_step, grad_r, max_descent_step, reg_value, GradientKind, RegKind,
};
use rand::Rng;

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Verdict {
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn jobs() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1)
}

fn mnist_dir() -> Option<PathBuf> {
    let dir = std::env::var_os("CONDNUM_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    dir.join("train-images-idx3-ubyte").exists().then_some(dir)
}

fn mnist() -> Option<(Dataset, Dataset)> {
    let dir = mnist_dir()?;
    Some((
        load_mnist(&dir, Split::Train).ok()?,
        load_mnist(&dir, Split::Test).ok()?,
    ))
}

fn sigma_ratio(s: &Matrix) -> f64 {
    let sigma = singular_values(s).unwrap();
    sigma[0] / sigma[1]
}

/// Central differences of the penalty at every entry, step `1e-6·(1 + ‖S‖_F)`.
fn penalty_fd(s: &Matrix) -> Matrix {
    let h = 1e-6 * (1.0 + s.sum_of_squares().sqrt());
    let mut probe = s.clone();
    Matrix::from_fn(s.rows(), s.cols(), |i, j| {
        let x = s[(i, j)];
        probe[(i, j)] = x + h;
        let up = reg_value(&probe).unwrap();
        probe[(i, j)] = x - h;
        let down = reg_value(&probe).unwrap();
        probe[(i, j)] = x;
        (up - down) / (2.0 * h)
    })
}

fn gradient_correctness() -> Verdict {
    let start = Instant::now();
    let mut rng = seeded_rng(101);
    let mut worst_usage: f64 = 0.0;
    let mut worst_abs: f64 = 0.0;
    let mut count = 0;
    for (n, m) in [(5, 5), (20, 50), (50, 20)] {
        let mut done = 0;
        while done < 100 {
            let s = gaussian_matrix(n, m, 1.0, &mut rng);
            if sigma_ratio(&s) <= 1.01 {
                continue;
            }
            let g = grad_r(&s).unwrap();
            let fd = penalty_fd(&s);
            for i in 0..n {
                for j in 0..m {
                    let d = (g.canonical()[(i, j)] - fd[(i, j)]).abs();
                    worst_abs = worst_abs.max(d);
                    worst_usage = worst_usage.max(d / (1e-5 + 1e-4 * fd[(i, j)].abs()));
                }
            }
            done += 1;
            count += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        worst_usage <= 1.0 && secs < 30.0,
        format!("{count} matrices, max |grad - fd| = {worst_abs:.2e} (tolerance usage {worst_usage:.3}), {secs:.1}s"),
    )
}

const MIXED_SHAPES: [(usize, usize); 8] = [
    (2, 2),
    (5, 5),
    (3, 8),
    (8, 3),
    (10, 10),
    (20, 50),
    (50, 20),
    (1, 6),
];

fn random_matrix(rng: &mut SeededRng) -> Matrix {
    let (n, m) = MIXED_SHAPES[rng.random_range(0..MIXED_SHAPES.len())];
    let scale = 10f64.powf(rng.random_range(-2.0..2.0));
    gaussian_matrix(n, m, scale, rng)
}

fn kappa_bound() -> Verdict {
    let start = Instant::now();
    let mut rng = seeded_rng(202);
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let s = random_matrix(&mut rng);
        let b = check_kappa_bound(&s).unwrap();
        let nu = s.rows().min(s.cols()) as f64;
        let sigma = singular_values(&s).unwrap();
        let smin = *sigma.iter().rfind(|&&x| x > 0.0).unwrap();
        let rhs = (nu * reg_value(&s).unwrap() / (smin * smin)).exp();
        let lhs = sigma[0] / smin;
        if !(rhs.is_infinite() || lhs <= rhs * (1.0 + 1e-10)) || !b.holds() {
            violations += 1;
        }
        if rhs.is_finite() {
            worst = worst.max(lhs / rhs);
        }
    }
    let pair = check_kappa_bound(&Matrix::diag(&[2.0, 1.0])).unwrap();
    let pair_ok =
        (pair.lhs - 2.0).abs() <= 1e-12 && (pair.rhs - 1.5f64.exp()).abs() <= 1e-12 * 1.5f64.exp();
    let secs = start.elapsed().as_secs_f64();
    verdict(
        violations == 0 && pair_ok && secs < 10.0,
        format!("1000 matrices, {violations} violations, max lhs/rhs {worst:.6}; diag(2,1) -> ({}, {:.6}); {secs:.1}s", pair.lhs, pair.rhs),
    )
}

/// Condition number after one step, predicted from the singular values alone.
fn predicted_after_step(sigma: &[f64], lambda: f64) -> f64 {
    let nu = sigma.len() as f64;
    let smin = *sigma.iter().rfind(|&&x| x > 0.0).unwrap();
    let leader = sigma[0] * (1.0 - lambda + lambda / nu);
    let runner_up = sigma[1] * (1.0 + lambda / nu);
    leader.max(runner_up) / (smin * (1.0 + lambda / nu))
}

fn exact_decrement() -> Verdict {
    let mut rng = seeded_rng(303);
    let mut worst: f64 = 0.0;
    let mut not_decreasing = 0;
    let mut done = 0;
    while done < 200 {
        let (n, m) = [(10, 10), (5, 5), (6, 9), (9, 6)][done % 4];
        let s = gaussian_matrix(n, m, 1.0, &mut rng);
        let sigma = singular_values(&s).unwrap();
        if sigma[0] - sigma[1] <= 1e-9 * sigma[0].max(1.0) {
            continue;
        }
        let k = kappa(&s).unwrap();
        let lambda = 0.5 * max_descent_step(k, n.min(m));
        let (next, _) = descent_step(&s, lambda).unwrap();
        let observed = kappa(&next).unwrap();
        let predicted = predicted_after_step(&sigma, lambda);
        worst = worst.max((observed - predicted).abs() / predicted);
        if observed >= k {
            not_decreasing += 1;
        }
        done += 1;
    }
    let (_, example) = descent_step(&Matrix::diag(&[2.0, 1.0]), 0.1).unwrap();
    let example_ok = (example.kappa_after - 1.809524).abs() <= 1e-6;
    verdict(
        worst <= 1e-8 && not_decreasing == 0 && example_ok,
        format!(
            "200 steps at L/2, max relative error {worst:.2e}, {not_decreasing} non-decreasing; diag(2,1) at 0.1 -> {:.7}",
            example.kappa_after
        ),
    )
}

fn discontinuity() -> Verdict {
    let mut worst: f64 = 0.0;
    for eps in [1e-1, 1e-3, 1e-6] {
        let k = kappa(&Matrix::diag(&[1.0, eps])).unwrap();
        worst = worst.max((k - 1.0 / eps).abs() * eps);
    }
    let limit = kappa(&Matrix::diag(&[1.0, 0.0])).unwrap();
    verdict(
        worst <= 1e-9 && limit == 1.0,
        format!("max relative error {worst:.2e}, kappa(diag(1,0)) = {limit}"),
    )
}

fn mean(records: &[&LsqRecord], f: impl Fn(&LsqRecord) -> f64) -> f64 {
    records.iter().map(|r| f(r)).sum::<f64>() / records.len() as f64
}

fn lsq_sweep() -> Verdict {
    let start = Instant::now();
    let cfg = LsqConfig {
        lambdas: vec![0.0, 100.0],
        jobs: jobs(),
        ..LsqConfig::default()
    };
    let records = run_lsq(&cfg).unwrap();
    let at = |l: f64| records.iter().filter(|r| r.lambda == l).collect::<Vec<_>>();
    let (base, reg) = (at(0.0), at(100.0));
    let base_ratio_exact = base.iter().all(|r| r.error_ratio == 1.0);
    let base_kappa_ok = base.iter().all(|r| r.kappa_w > 2.0);
    let kappa100 = mean(&reg, |r| r.kappa_w);
    let ratio100 = mean(&reg, |r| r.error_ratio);
    let all_ok = records.iter().all(|r| r.status.to_string() == "ok");
    verdict(
        base_ratio_exact && base_kappa_ok && kappa100 <= 1.1 && ratio100 <= 1.06 && all_ok,
        format!(
            "lambda=0: ratio 1 in all runs = {base_ratio_exact}, mean kappa {:.3}; lambda=100: mean kappa {kappa100:.4} (need <= 1.1), mean ratio {ratio100:.4} (need <= 1.06); {:.0}s",
            mean(&base, |r| r.kappa_w),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn tikhonov_contrast() -> Verdict {
    let start = Instant::now();
    let lambdas: Vec<f64> = (0..=10).map(|k| 10.0 * k as f64).collect();
    let cfg = LsqConfig {
        lambdas: lambdas.clone(),
        reg_kind: RegKind::Tikhonov,
        jobs: jobs(),
        ..LsqConfig::default()
    };
    let records = run_lsq(&cfg).unwrap();
    let at = |l: f64| records.iter().filter(|r| r.lambda == l).collect::<Vec<_>>();
    let baseline = mean(&at(0.0), |r| r.kappa_w);
    let mut lowest_admissible = f64::INFINITY;
    let mut offending = Vec::new();
    for &l in &lambdas {
        let rs = at(l);
        let (k, ratio) = (mean(&rs, |r| r.kappa_w), mean(&rs, |r| r.error_ratio));
        if ratio <= 1.06 {
            lowest_admissible = lowest_admissible.min(k / baseline);
            if k < 0.5 * baseline {
                offending.push(l);
            }
        }
    }
    verdict(
        offending.is_empty(),
        format!(
            "baseline mean kappa {baseline:.3}; smallest kappa fraction among lambdas with ratio <= 1.06: {lowest_admissible:.3} (must stay >= 0.5); {:.0}s",
            start.elapsed().as_secs_f64()
        ),
    )
}

fn classification() -> Verdict {
    let Some((train, test)) = mnist() else {
        return Verdict::Skip("MNIST files not found (set CONDNUM_DATA_DIR)".into());
    };
    let start = Instant::now();
    let cfg = ClassifyConfig {
        lambdas: vec![0.0, 0.1],
        snrs: vec![f64::INFINITY, 0.5],
        jobs: jobs(),
        ..ClassifyConfig::desk()
    };
    let records = run_classify(&cfg, &train, &test).unwrap();
    let find = |lambda: f64, snr: f64| {
        records
            .iter()
            .find(|r| r.lambda == lambda && r.snr == snr)
            .unwrap()
    };
    let (base_clean, reg_clean) = (find(0.0, f64::INFINITY), find(0.1, f64::INFINITY));
    let (base_noisy, reg_noisy) = (find(0.0, 0.5), find(0.1, 0.5));
    let kappa_ratio = reg_clean.kappa_w1 / base_clean.kappa_w1;
    let secs = start.elapsed().as_secs_f64();
    verdict(
        kappa_ratio <= 0.2 && reg_clean.accuracy >= base_clean.accuracy - 0.03 && reg_noisy.accuracy >= base_noisy.accuracy && secs < 900.0,
        format!(
            "kappa(W1) {:.3} vs {:.3} (ratio {kappa_ratio:.3}); clean acc {:.4} vs {:.4}; snr 0.5 acc {:.4} vs {:.4}; {secs:.0}s",
            reg_clean.kappa_w1, base_clean.kappa_w1, reg_clean.accuracy, base_clean.accuracy, reg_noisy.accuracy, base_noisy.accuracy
        ),
    )
}

fn denoising() -> Verdict {
    let Some((train, test)) = mnist() else {
        return Verdict::Skip("MNIST files not found (set CONDNUM_DATA_DIR)".into());
    };
    let start = Instant::now();
    let reg_cfg = DenoiseConfig {
        jobs: jobs(),
        ..DenoiseConfig::desk()
    };
    let base_cfg = DenoiseConfig {
        lambda1: 0.0,
        lambda2: 0.0,
        reg_kind: RegKind::None,
        ..reg_cfg.clone()
    };
    let reg = run_denoise(&reg_cfg, &train, &test)
        .unwrap()
        .remove(0)
        .record;
    let base = run_denoise(&base_cfg, &train, &test)
        .unwrap()
        .remove(0)
        .record;
    let secs = start.elapsed().as_secs_f64();
    verdict(
        reg.max_kappa() <= 0.2 * base.max_kappa() && reg.mse < base.mse && secs < 900.0,
        format!(
            "max kappa {:.3} vs {:.3} (ratio {:.3}); mse {:.5} vs {:.5}; {secs:.0}s",
            reg.max_kappa(),
            base.max_kappa(),
            reg.max_kappa() / base.max_kappa(),
            reg.mse,
            base.mse
        ),
    )
}

fn almost_sure_uniqueness() -> Verdict {
    let mut rng = seeded_rng(909);
    let unique = (0..1000)
        .filter(|_| {
            grad_r(&gaussian_matrix(10, 10, 1.0, &mut rng))
                .unwrap()
                .kind()
                == GradientKind::Unique
        })
        .count();
    verdict(unique == 1000, format!("{unique}/1000 unique"))
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let wall = r
        .headers()
        .unwrap()
        .iter()
        .position(|h| h == "wall_time_seconds");
    let mut rows: Vec<Vec<String>> = r
        .records()
        .map(|rec| {
            rec.unwrap()
                .iter()
                .enumerate()
                .filter(|(i, _)| Some(*i) != wall)
                .map(|(_, v)| v.to_string())
                .collect()
        })
        .collect();
    rows.sort();
    rows
}

fn run_cli(args: &[String], out: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_condreg"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn reproducibility() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let mut subcommands: Vec<Vec<&str>> = vec![
        vec![
            "lsq",
            "--steps",
            "2000",
            "--lambdas",
            "0,50,100",
            "--repeats",
            "3",
        ],
        vec![
            "lsq",
            "--steps",
            "2000",
            "--lambdas",
            "0,50",
            "--repeats",
            "2",
            "--reg",
            "tikhonov",
        ],
        vec!["check", "--trials", "10"],
    ];
    let data = mnist_dir();
    let data_arg = data
        .as_ref()
        .map(|d| d.to_string_lossy().into_owned())
        .unwrap_or_default();
    if data.is_some() {
        subcommands.push(vec![
            "classify",
            "--data-dir",
            &data_arg,
            "--hidden",
            "16",
            "--epochs",
            "1",
            "--train-limit",
            "300",
            "--lambdas",
            "0,0.1",
            "--repeats",
            "2",
        ]);
        subcommands.push(vec![
            "denoise",
            "--data-dir",
            &data_arg,
            "--epochs",
            "1",
            "--train-limit",
            "200",
            "--repeats",
            "2",
        ]);
    }
    let mut failures = Vec::new();
    for (k, cmd) in subcommands.iter().enumerate() {
        let outs: Vec<PathBuf> = (0..3)
            .map(|i| dir.path().join(format!("{k}_{i}.csv")))
            .collect();
        let with_jobs = |j: &str| -> Vec<String> {
            let mut v: Vec<String> = cmd.iter().map(|s| s.to_string()).collect();
            v.extend(["--seed".into(), "11".into(), "--jobs".into(), j.into()]);
            v
        };
        let ran = run_cli(&with_jobs("1"), &outs[0])
            && run_cli(&with_jobs("8"), &outs[1])
            && run_cli(&with_jobs("8"), &outs[2]);
        if !ran {
            failures.push(format!("{} did not run", cmd[0]));
            continue;
        }
        let (a, b, c) = (csv_rows(&outs[0]), csv_rows(&outs[1]), csv_rows(&outs[2]));
        if a.is_empty() || a != b || b != c {
            failures.push(format!("{} differs", cmd[0]));
        }
    }
    let tested: Vec<&str> = subcommands.iter().map(|c| c[0]).collect();
    let detail = if data.is_none() {
        " (classify/denoise skipped: no MNIST)"
    } else {
        ""
    };
    verdict(
        failures.is_empty(),
        format!(
            "{} identical across reruns and --jobs 1/8{detail} {}",
            tested.join(","),
            failures.join("; ")
        ),
    )
}

type Criterion = (u32, &'static str, fn() -> Verdict);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        (
            1,
            "gradient matches finite differences",
            gradient_correctness,
        ),
        (2, "condition number bound", kappa_bound),
        (3, "exact condition number decrement", exact_decrement),
        (4, "discontinuity at rank drop", discontinuity),
        (5, "least-squares sweep", lsq_sweep),
        (6, "tikhonov contrast", tikhonov_contrast),
        (7, "classification property", classification),
        (8, "denoising property", denoising),
        (9, "almost-sure differentiability", almost_sure_uniqueness),
        (10, "reproducibility", reproducibility),
    ];
    let selected: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        let (tag, detail) = match run() {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Verdict::Skip(d) => ("SKIP", d),
        };
        println!("criterion {id:>2} {tag} {name}: {detail}");
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
