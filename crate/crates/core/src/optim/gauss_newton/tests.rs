use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::problem::{CurvedLeastSquares, Objective};
use crate::trace::{Budget, ValueMonitor};

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)])
}

fn curved(m: usize, n: usize, kappa: f64, seed: u64) -> CurvedLeastSquares {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CurvedLeastSquares {
        a: random_matrix(m, n, &mut rng),
        b: random_vec(m, &mut rng),
        u: random_vec(m, &mut rng),
        kappa,
    }
}

#[test]
fn tsm_direction_matches_dense_minimizer() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let jac = random_matrix(6, 10, &mut rng);
    let f = random_vec(10, &mut rng);
    let l = 0.7;
    let d = tsm_direction(&jac, &f, l).unwrap();
    // model L/2 |d|^2 + (f1^2 + |F + J d|^2) / (2 f1): zero gradient
    let (j, fv) = (to_na(&jac).transpose(), DVector::from_vec(f.clone()));
    let f1 = fv.norm();
    let h = j.transpose() * &j / f1 + DMatrix::identity(6, 6) * l;
    let want = h.lu().solve(&(-(j.transpose() * &fv) / f1)).unwrap();
    for (a, b) in d.iter().zip(want.iter()) {
        assert!((a - b).abs() < 1e-8);
    }
}

#[test]
fn tsm_direction_shrinks_with_large_l() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let jac = random_matrix(5, 8, &mut rng);
    let f = random_vec(8, &mut rng);
    let f1 = norm(&f);
    for l in [1e2, 1e4, 1e6] {
        let d = tsm_direction(&jac, &f, l).unwrap();
        assert!(norm(&d) <= norm(&jac.mul_vec(&f)) / (l * f1) * (1.0 + 1e-12));
    }
    assert_eq!(tsm_direction(&jac, &[0.0; 8], 1.0).unwrap(), vec![0.0; 5]);
}

#[test]
fn tsm_decreases_affine_residual() {
    let sys = curved(12, 5, 0.0, 3);
    let mon = ValueMonitor(&sys);
    let r = tsm_run(&sys, &[0.5; 5], 10.0, Recorder::new(Budget::iterations(30).with_grad_tol(0.0), &mon)).unwrap();
    let f = &r.trace.rows;
    assert!(f.windows(2).all(|w| w[1].f_value < w[0].f_value || w[1].f_value == 0.0));
}

fn nsgn_objective(jac: &Matrix, f: &[f64], l: f64, d: &[f64]) -> f64 {
    let r: Vec<f64> = jac.tr_mul_vec(d).iter().zip(f).map(|(a, b)| a + b).collect();
    0.5 * l * dot(d, d) + norm(&r)
}

#[test]
fn nsgn_trivial_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let jac = random_matrix(3, 4, &mut rng);
    assert_eq!(nsgn_direction(&jac, &[0.0; 4], 1.0).unwrap(), vec![0.0; 3]);
    let zero = Matrix::zeros(3, 4);
    let f = [1.0, 2.0, 0.0, -1.0];
    let d = nsgn_direction(&zero, &f, 1.0).unwrap();
    assert_eq!(d, vec![0.0; 3]);
    assert_eq!(nsgn_objective(&zero, &f, 1.0, &d), norm(&f));
}

#[test]
fn nsgn_direction_is_locally_optimal() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (m_res, l) in [(10, 1.0), (10, 0.05), (4, 0.3)] {
        let jac = random_matrix(6, m_res, &mut rng);
        let f = random_vec(m_res, &mut rng);
        let d = nsgn_direction(&jac, &f, l).unwrap();
        let best = nsgn_objective(&jac, &f, l, &d);
        for _ in 0..500 {
            let xi = random_vec(6, &mut rng);
            let s = 1e-3 / norm(&xi);
            let dp: Vec<f64> = d.iter().zip(&xi).map(|(a, b)| a + s * b).collect();
            assert!(nsgn_objective(&jac, &f, l, &dp) >= best - 1e-12, "m_res={m_res} l={l}");
        }
    }
}

fn f2_grad(sys: &CurvedLeastSquares, x: &[f64]) -> (f64, Vec<f64>) {
    sys.grad_f2(x).unwrap()
}

#[test]
fn ssm_empty_batch_is_gradient_step() {
    let sys = curved(12, 6, 0.5, 6);
    let x = vec![0.3; 6];
    let (f2, g) = f2_grad(&sys, &x);
    let l = 1e-3;
    let s = ssm_step(&sys, &x, f2, &g, l, &[]).unwrap().unwrap();
    let m = 12.0;
    let f1 = (f2 / m).sqrt();
    let tau = l * 2f64.powi(s.doublings as i32);
    for k in 0..6 {
        let want = x[k] - g[k] / (2.0 * m * f1) / tau;
        assert!((s.x[k] - want).abs() < 1e-14);
    }
    assert!(s.doublings > 0);
    assert_eq!(s.l_next, tau / 2.0);
}

#[test]
fn ssm_acceptance_at_zero_halves_l() {
    let sys = curved(12, 6, 0.5, 7);
    let x = vec![0.1; 6];
    let (f2, g) = f2_grad(&sys, &x);
    let s = ssm_step(&sys, &x, f2, &g, 1e3, &[0, 4, 9]).unwrap().unwrap();
    assert_eq!(s.doublings, 0);
    assert_eq!(s.l_next, 500.0);
}

/// `x - B^{-1} grad f_hat_1` with `B = G G^T / (p f_hat_1) + tau I`, dense.
fn dense_ssm_point(sys: &CurvedLeastSquares, x: &[f64], idx: &[usize], tau: f64) -> Vec<f64> {
    let (f2, g) = f2_grad(sys, x);
    let m = sys.residual_count() as f64;
    let f1 = (f2 / m).sqrt();
    let gm = to_na(&sys.jacobian_rows(x, idx).unwrap());
    let n = x.len();
    let b = &gm * gm.transpose() / (idx.len() as f64 * f1) + DMatrix::identity(n, n) * tau;
    let rhs = DVector::from_iterator(n, g.iter().map(|v| v / (2.0 * m * f1)));
    let h = b.lu().solve(&rhs).unwrap();
    x.iter().zip(h.iter()).map(|(a, b)| a - b).collect()
}

#[test]
fn ssm_step_matches_dense_solve_on_both_paths() {
    let sys = curved(12, 6, 0.5, 8);
    let x = vec![0.2, -0.1, 0.3, 0.0, 0.1, -0.2];
    let (f2, g) = f2_grad(&sys, &x);
    for idx in [vec![1, 5, 7], vec![0, 1, 2, 3, 5, 6, 8, 11], (0..12).collect()] {
        let s = ssm_step(&sys, &x, f2, &g, 0.3, &idx).unwrap().unwrap();
        let tau = 0.3 * 2f64.powi(s.doublings as i32);
        let want = dense_ssm_point(&sys, &x, &idx, tau);
        for (a, b) in s.x.iter().zip(&want) {
            assert!((a - b).abs() < 1e-8 * (1.0 + b.abs()), "p={}", idx.len());
        }
    }
}

#[test]
fn ssm_full_batch_matches_dense_trajectory() {
    let sys = curved(12, 6, 0.5, 9);
    let x0 = vec![0.4; 6];
    let log = crate::optim::fullgrad::tests::IterateLog::new(&sys);
    let rec = Recorder::new(Budget::iterations(15).with_grad_tol(0.0), &log);
    let r = ssm_run(&sys, &x0, 12, 1.0, 0, rec).unwrap();
    let xs = log.into_iterates();
    let ls: Vec<f64> = r.trace.rows.iter().filter_map(|row| row.aux).collect();
    let idx: Vec<usize> = (0..12).collect();
    let mut l = 1.0;
    for k in 0..xs.len() - 1 {
        // the next L is 2^(i-1) L, so tau = 2 L_next
        let tau = 2.0 * ls[k];
        let want = dense_ssm_point(&sys, &xs[k], &idx, tau);
        for (a, b) in xs[k + 1].iter().zip(&want) {
            assert!((a - b).abs() < 1e-8, "iterate {k}");
        }
        assert!(tau >= l);
        l = ls[k];
    }
}

#[test]
fn ssm_trace_is_monotone_and_reproducible() {
    let sys = curved(40, 8, 0.3, 10);
    let run = |seed| {
        let mon = ValueMonitor(&sys);
        ssm_run(&sys, &[0.3; 8], 5, 1.0, seed, Recorder::new(Budget::iterations(40).with_grad_tol(0.0), &mon)).unwrap()
    };
    let (a, b) = (run(3), run(3));
    assert_eq!(a.x, b.x);
    let f: Vec<f64> = a.trace.rows.iter().map(|r| r.f_value).collect();
    assert!(f.windows(2).all(|w| w[1] <= w[0]));
    assert!(a.trace.rows[1..].iter().all(|r| r.aux.is_some_and(|l| l > 0.0)));
    assert_ne!(run(4).x, a.x);
}

#[test]
fn lm_identity_solves_linear_least_squares() {
    let sys = curved(15, 6, 0.0, 11);
    let mon = ValueMonitor(&sys);
    let rec = Recorder::new(Budget::iterations(20).with_grad_tol(1e-8), &mon);
    let r = lm_run(&sys, &[0.0; 6], LmDamping::Identity, LmParams::default(), rec).unwrap();
    assert_eq!(r.trace.status, Status::Converged);
    let (_, g) = sys.value_grad(&r.x).unwrap();
    assert!(norm(&g) < 1e-8);
}

#[test]
fn lm_variants_decrease_f2_strictly() {
    let sys = curved(15, 6, 0.4, 12);
    for d in [LmDamping::Identity, LmDamping::Diagonal, LmDamping::SqrtDiagonal] {
        let mon = ValueMonitor(&sys);
        let rec = Recorder::new(Budget::iterations(30).with_grad_tol(1e-10), &mon);
        let r = lm_run(&sys, &[0.5; 6], d, LmParams::default(), rec).unwrap();
        let f: Vec<f64> = r.trace.rows.iter().map(|r| r.f_value).collect();
        assert!(f.windows(2).all(|w| w[1] < w[0] || w[1] == w[0] && r.trace.status != Status::Budget), "{d:?}");
        assert!(r.trace.rows[1..].iter().all(|r| r.aux.is_some_and(|l| (LAMBDA_MIN..=LAMBDA_MAX).contains(&l))));
    }
}

#[test]
fn lm_failed_factorization_is_reported() {
    // rank-one J^T J with lambda = 0 is not positive definite
    let jtj = Matrix::from_fn(2, 2, |_, _| 1.0);
    assert_eq!(lm_trial(&jtj, &[1.0, 1.0], 0.0, &[1.0, 0.0]).unwrap(), None);
    assert!(lm_trial(&jtj, &[1.0, 1.0], 10.0, &[1.0, 0.0]).unwrap().is_some());
}

#[test]
fn lm_damping_diagonals() {
    let jtj = Matrix::from_fn(3, 3, |i, j| if i == j { [4.0, 9.0, 0.25][i] } else { 0.1 });
    assert_eq!(LmDamping::Identity.diagonal(&jtj), vec![1.0; 3]);
    let d2 = LmDamping::Diagonal.diagonal(&jtj);
    let d3 = LmDamping::SqrtDiagonal.diagonal(&jtj);
    assert_eq!(d2, vec![4.0, 9.0, 0.25]);
    assert!(d2.iter().zip(&d3).all(|(a, b)| a.sqrt() == *b));
    assert!(LmDamping::from_variant(4).is_err());
}

#[test]
fn lm_stalls_when_no_step_helps() {
    // a wrong Jacobian never yields descent
    struct Flipped(CurvedLeastSquares);
    impl Objective for Flipped {
        fn dim(&self) -> usize {
            self.0.dim()
        }
        fn value(&self, x: &[f64]) -> Result<f64> {
            self.0.value(x)
        }
        fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
            self.0.value_grad(x)
        }
    }
    impl LeastSquares for Flipped {
        fn residual_count(&self) -> usize {
            self.0.residual_count()
        }
        fn residuals(&self, x: &[f64]) -> Result<Vec<f64>> {
            self.0.residuals(x)
        }
        fn jacobian_rows(&self, x: &[f64], idx: &[usize]) -> Result<Matrix> {
            let mut j = self.0.jacobian_rows(x, idx)?;
            j.scale(-1.0);
            Ok(j)
        }
        fn objective_from_f2(&self, f2: f64) -> f64 {
            f2
        }
    }
    let sys = Flipped(curved(8, 3, 0.0, 13));
    let mon = ValueMonitor(&sys);
    let r = lm_run(&sys, &[1.0; 3], LmDamping::Identity, LmParams::default(), Recorder::new(Budget::iterations(10), &mon))
        .unwrap();
    assert_eq!(r.trace.status, Status::Stalled);
}

#[test]
fn method_config_round_trip() {
    let m: GaussNewtonMethod = serde_json::from_str(r#"{"method":"ssm","batch":12,"seed":5}"#).unwrap();
    assert_eq!(m, GaussNewtonMethod::Ssm { batch: 12, l0: 1.0, seed: 5 });
    let m: GaussNewtonMethod = serde_json::from_str(r#"{"method":"lm","damping":"sqrt_diagonal"}"#).unwrap();
    assert_eq!(m, GaussNewtonMethod::Lm { damping: LmDamping::SqrtDiagonal, params: LmParams::default() });
}
