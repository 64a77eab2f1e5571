use condreg::linalg::{
    frobenius_norm_sq, kappa, pseudoinverse, singular_values, spectral_norm, svd, thin_svd, Matrix,
};
use condreg::optim::{gd_step, ParamSet};
use condreg::regularizer::{
    check_kappa_bound, descent_step, grad_r, max_descent_step, reg_value, GradientKind, RegGradient,
};
use proptest::prelude::*;

fn matrix(max_dim: usize) -> impl Strategy<Value = Matrix> {
    (1..=max_dim, 1..=max_dim).prop_flat_map(|(r, c)| {
        prop::collection::vec(-10.0f64..10.0, r * c)
            .prop_map(move |v| Matrix::from_row_major(r, c, &v).unwrap())
    })
}

fn orthonormal(n: usize, seed: &[f64]) -> Matrix {
    let g = Matrix::from_row_major(n, n, seed).unwrap();
    thin_svd(&g).unwrap().u
}

fn eye_defect(q: &Matrix) -> f64 {
    (&q.transposed_matmul(q) - &Matrix::identity(q.cols())).max_abs()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn svd_reconstructs_and_is_orthogonal(s in matrix(7)) {
        let f = svd(&s).unwrap();
        let scale = 1.0 + frobenius_norm_sq(&s).sqrt();
        prop_assert!(f.recompose().max_abs_diff(&s) <= 1e-12 * scale);
        prop_assert!(eye_defect(&f.u) <= 1e-12 * s.rows() as f64);
        prop_assert!(eye_defect(&f.v) <= 1e-12 * s.cols() as f64);
        prop_assert!(f.sigma.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(f.sigma.iter().all(|&x| x >= 0.0));
        for j in 0..s.rows() {
            let col = f.u.col(j);
            let big = col.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let first = col.iter().position(|x| x.abs() == big).unwrap();
            prop_assert!(col[first] >= 0.0);
        }
    }

    #[test]
    fn singular_values_carry_the_frobenius_norm(s in matrix(7)) {
        let sigma = singular_values(&s).unwrap();
        let total: f64 = sigma.iter().map(|x| x * x).sum();
        prop_assert!((total - frobenius_norm_sq(&s)).abs() <= 1e-10 * (1.0 + frobenius_norm_sq(&s)));
        let norm = spectral_norm(&s).unwrap();
        prop_assert!(norm >= s.max_abs() * (1.0 - 1e-12));
        prop_assert!(norm <= frobenius_norm_sq(&s).sqrt() * (1.0 + 1e-12));
    }

    #[test]
    fn pseudoinverse_satisfies_penrose_identities(s in matrix(6)) {
        let p = pseudoinverse(&s).unwrap();
        let k = kappa(&s).unwrap();
        prop_assume!(k < 1e6);
        let tol = 1e-8 * (1.0 + s.max_abs()) * k;
        prop_assert!(s.matmul(&p).matmul(&s).max_abs_diff(&s) <= tol);
        let sp = s.matmul(&p);
        prop_assert!(sp.max_abs_diff(&sp.transpose()) <= tol);
    }

    #[test]
    fn kappa_is_scale_invariant(s in matrix(6), c in 0.01f64..100.0) {
        prop_assume!(s.max_abs() > 1e-3);
        let k = kappa(&s).unwrap();
        let kc = kappa(&s.scale(c)).unwrap();
        prop_assert!(k >= 1.0);
        prop_assert!((k - kc).abs() <= 1e-8 * k);
    }

    #[test]
    fn penalty_is_nonnegative_and_quadratic(s in matrix(7), c in 0.1f64..10.0) {
        let r = reg_value(&s).unwrap();
        prop_assert!(r >= -1e-12 * (1.0 + frobenius_norm_sq(&s)));
        let rc = reg_value(&s.scale(c)).unwrap();
        prop_assert!((rc - c * c * r).abs() <= 1e-10 * (1.0 + c * c * frobenius_norm_sq(&s)));
    }

    #[test]
    fn kappa_bound_holds(s in matrix(7)) {
        prop_assume!(s.max_abs() > 0.0);
        let b = check_kappa_bound(&s).unwrap();
        prop_assert!(b.holds(), "{:?}", b);
    }

    #[test]
    fn gradient_matches_central_differences(s in matrix(5)) {
        let sigma = singular_values(&s).unwrap();
        prop_assume!(sigma.len() < 2 || sigma[0] / sigma[1] > 1.01);
        prop_assume!(sigma[0] > 1e-6);
        let g = grad_r(&s).unwrap();
        prop_assert_eq!(g.kind(), GradientKind::Unique);
        let h = 1e-6 * (1.0 + frobenius_norm_sq(&s).sqrt());
        let mut p = s.clone();
        for i in 0..s.rows() {
            for j in 0..s.cols() {
                let x = s[(i, j)];
                p[(i, j)] = x + h;
                let up = reg_value(&p).unwrap();
                p[(i, j)] = x - h;
                let down = reg_value(&p).unwrap();
                p[(i, j)] = x;
                let fd = (up - down) / (2.0 * h);
                let a = g.canonical()[(i, j)];
                prop_assert!((a - fd).abs() <= 1e-5 + 1e-4 * fd.abs(), "({}, {}): {} vs {}", i, j, a, fd);
            }
        }
    }

    #[test]
    fn tied_canonical_is_the_mean(seed in prop::collection::vec(-1.0f64..1.0, 16), c in 0.5f64..5.0, tail in 0.0f64..0.4) {
        let q = orthonormal(4, &seed);
        let p = orthonormal(4, &seed.iter().rev().copied().collect::<Vec<_>>());
        let s = q.matmul(&Matrix::diag(&[c, c, tail * c, 0.5 * tail * c])).matmul_transposed(&p);
        match grad_r(&s).unwrap() {
            RegGradient::Tied { extreme_points, canonical } => {
                prop_assert_eq!(extreme_points.len(), 2);
                let mut mean = Matrix::zeros(4, 4);
                for e in &extreme_points {
                    mean.add_scaled_in_place(1.0, e);
                }
                prop_assert_eq!(mean.scale(0.5), canonical);
            }
            other => prop_assert!(false, "expected a tie, got {:?}", other.kind()),
        }
    }

    #[test]
    fn half_step_always_lowers_kappa(s in matrix(6)) {
        let sigma = singular_values(&s).unwrap();
        prop_assume!(sigma.len() >= 2 && sigma[0] / sigma[1] > 1.0 + 1e-6);
        let k = kappa(&s).unwrap();
        prop_assume!(k < 1e8);
        let lambda = 0.5 * max_descent_step(k, s.rows().min(s.cols()));
        let (_, report) = descent_step(&s, lambda).unwrap();
        prop_assert!(report.kappa_after < report.kappa_before);
        prop_assert!(report.relative_prediction_error() <= 1e-8);
    }

    #[test]
    fn gd_step_is_linear(p in matrix(4), seed in prop::collection::vec(-5.0f64..5.0, 32), lr in 1e-3f64..1.0) {
        let (r, c) = p.shape();
        let g1 = Matrix::from_fn(r, c, |i, j| seed[(i * c + j) % 32]);
        let g2 = Matrix::from_fn(r, c, |i, j| seed[(i * c + j + 7) % 32]);
        let wrap = |m: Matrix| ParamSet::from_iter([("w".to_string(), m)]);
        let together = gd_step(&wrap(p.clone()), &wrap(&g1 + &g2), lr).unwrap();
        let split = gd_step(&gd_step(&wrap(p.clone()), &wrap(g1), lr).unwrap(), &wrap(g2), lr).unwrap();
        prop_assert!(together.get("w").unwrap().max_abs_diff(split.get("w").unwrap()) <= 1e-12 * (1.0 + p.max_abs()));
    }
}
