use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::problem::{Quadratic, Rosenbrock};
use crate::trace::{Budget, Monitor, Observation, ValueMonitor};

/// Random SPD quadratic with minimum value 0 at the origin, so function
/// values keep full relative precision near the solution.
pub(crate) fn spd_quadratic(n: usize, seed: u64) -> Quadratic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let mut a = m.gram();
    a.add_diagonal(1.0);
    Quadratic { a, b: vec![0.0; n] }
}

fn exact_ctl() -> StepControl {
    StepControl { line_search: LineSearch { alpha_init: 1.0, max_evals: 40 }, ..StepControl::default() }
}

/// Remembers every recorded iterate.
pub(crate) struct IterateLog<'a, O: Objective + ?Sized> {
    obj: &'a O,
    xs: RefCell<Vec<Vec<f64>>>,
}

impl<'a, O: Objective + ?Sized> IterateLog<'a, O> {
    pub(crate) fn new(obj: &'a O) -> Self {
        Self { obj, xs: RefCell::new(Vec::new()) }
    }

    pub(crate) fn into_iterates(self) -> Vec<Vec<f64>> {
        self.xs.into_inner()
    }
}

impl<O: Objective + ?Sized> Monitor for IterateLog<'_, O> {
    fn observe(&self, x: &[f64], f_hint: Option<f64>) -> Result<Observation> {
        self.xs.borrow_mut().push(x.to_vec());
        ValueMonitor(self.obj).observe(x, f_hint)
    }
}

#[test]
fn fr_and_hs_terminate_on_quadratic() {
    let q = spd_quadratic(10, 3);
    for v in [CgVariant::Fr, CgVariant::Hs] {
        let mon = ValueMonitor(&q);
        let rec = Recorder::new(Budget::iterations(12).with_grad_tol(1e-8), &mon);
        let r = cg_run(&q, &[1.0; 10], v, 1000, &exact_ctl(), rec).unwrap();
        let (_, g) = q.value_grad(&r.x).unwrap();
        assert_eq!(r.trace.status, Status::Converged, "{v:?}");
        assert!(norm(&g) < 1e-8);
    }
}

#[test]
fn every_cg_variant_solves_a_quadratic() {
    let q = spd_quadratic(6, 5);
    for v in [
        CgVariant::Hs,
        CgVariant::Fr,
        CgVariant::Prp,
        CgVariant::PrpPlus,
        CgVariant::Cd,
        CgVariant::Ls,
        CgVariant::Dy,
        CgVariant::Nesterov,
    ] {
        let mon = ValueMonitor(&q);
        let rec = Recorder::new(Budget::iterations(500).with_grad_tol(1e-7), &mon);
        let r = cg_run(&q, &[1.0; 6], v, 120, &exact_ctl(), rec).unwrap();
        assert_eq!(r.trace.status, Status::Converged, "{v:?}");
    }
}

#[test]
fn cg_beta_formulas() {
    let g = [1.0, 0.0];
    let gn = [0.0, 2.0];
    let p = [-1.0, 0.0];
    // y = (-1, 2), p.y = 1, g.g = 1, -p.g = 1
    assert_eq!(cg_beta(CgVariant::Hs, &g, &gn, &p), Some(4.0));
    assert_eq!(cg_beta(CgVariant::Fr, &g, &gn, &p), Some(4.0));
    assert_eq!(cg_beta(CgVariant::Prp, &g, &gn, &p), Some(4.0));
    assert_eq!(cg_beta(CgVariant::Cd, &g, &gn, &p), Some(4.0));
    assert_eq!(cg_beta(CgVariant::Ls, &g, &gn, &p), Some(4.0));
    assert_eq!(cg_beta(CgVariant::Dy, &g, &gn, &p), Some(4.0));
    let gn = [2.0, 0.0];
    // y = (1, 0): PRP = 2, PRP+ keeps it; gn = (0.5, 0) gives PRP = -0.25
    assert_eq!(cg_beta(CgVariant::Prp, &g, &gn, &p), Some(2.0));
    assert_eq!(cg_beta(CgVariant::PrpPlus, &g, &[0.5, 0.0], &p), Some(0.0));
    assert_eq!(cg_beta(CgVariant::Fr, &[0.0, 0.0], &gn, &p), None);
}

#[test]
fn quasi_newton_updates_satisfy_secant() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for rule in [QuasiNewtonRule::Bfgs, QuasiNewtonRule::Dfp] {
        let mut h = Matrix::identity(5);
        for _ in 0..4 {
            let s: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut y: Vec<f64> = (0..5).map(|_| rng.gen_range(-0.3..0.3)).collect();
            crate::linalg::axpy(1.0, &s, &mut y);
            assert!(quasi_newton_update(&mut h, &s, &y, rule));
            let hy = h.mul_vec(&y);
            for (a, b) in hy.iter().zip(&s) {
                assert!((a - b).abs() < 1e-10, "{rule:?}");
            }
        }
    }
    let mut h = Matrix::identity(2);
    assert!(!quasi_newton_update(&mut h, &[1.0, 0.0], &[0.0, 1.0], QuasiNewtonRule::Bfgs));
    assert_eq!(h, Matrix::identity(2));
}

#[test]
fn bfgs_recovers_inverse_hessian() {
    let n = 6;
    let q = spd_quadratic(n, 11);
    let mon = ValueMonitor(&q);
    let rec = Recorder::new(Budget::iterations(n as u64).with_grad_tol(0.0), &mon);
    let mut last = Matrix::identity(n);
    quasi_newton_inspect(&q, &[1.0; 6], QuasiNewtonRule::Bfgs, 1000, &exact_ctl(), rec, |h| last = h.clone())
        .unwrap();
    let err = last.mul(&q.a).sub(&Matrix::identity(n)).frobenius();
    assert!(err < 1e-4, "|HA - I| = {err}");
}

#[test]
fn bfgs_and_dfp_converge_within_two_n() {
    let n = 8;
    let q = spd_quadratic(n, 12);
    for rule in [QuasiNewtonRule::Bfgs, QuasiNewtonRule::Dfp] {
        let mon = ValueMonitor(&q);
        let rec = Recorder::new(Budget::iterations(2 * n as u64).with_grad_tol(1e-6), &mon);
        let r = quasi_newton_run(&q, &[1.0; 8], rule, 1000, &exact_ctl(), rec).unwrap();
        assert_eq!(r.trace.status, Status::Converged, "{rule:?}");
    }
}

#[test]
fn full_memory_lbfgs_tracks_bfgs() {
    let n = 8;
    let q = spd_quadratic(n, 13);
    let budget = Budget::iterations(n as u64).with_grad_tol(1e-12);
    let a = IterateLog { obj: &q, xs: RefCell::new(Vec::new()) };
    quasi_newton_run(&q, &[1.0; 8], QuasiNewtonRule::Bfgs, 1000, &exact_ctl(), Recorder::new(budget, &a)).unwrap();
    let b = IterateLog { obj: &q, xs: RefCell::new(Vec::new()) };
    lbfgs_run(&q, &[1.0; 8], 16, &exact_ctl(), Recorder::new(budget, &b)).unwrap();
    let (xa, xb) = (a.xs.into_inner(), b.xs.into_inner());
    assert!(xa.len() >= 4);
    for (u, v) in xa.iter().zip(&xb) {
        for (p, r) in u.iter().zip(v) {
            assert!((p - r).abs() < 1e-6, "{p} vs {r}");
        }
    }
}

#[test]
fn lbfgs_history_rejects_flat_pairs_and_evicts_oldest() {
    let mut h = LbfgsHistory::new(2);
    assert!(!h.push(vec![1.0, 0.0], vec![0.0, 1.0]));
    assert!(h.is_empty());
    // empty history is steepest descent
    assert_eq!(h.direction(&[1.0, -2.0]), vec![-1.0, 2.0]);
    for k in 1..=3 {
        assert!(h.push(vec![k as f64, 0.0], vec![1.0, 0.0]));
    }
    assert_eq!(h.len(), 2);
}

#[test]
fn lbfgs_solves_rosenbrock() {
    let mon = ValueMonitor(&Rosenbrock);
    let rec = Recorder::new(Budget::iterations(500).with_grad_tol(1e-8), &mon);
    let r = lbfgs_run(&Rosenbrock, &[-1.2, 1.0], 5, &exact_ctl(), rec).unwrap();
    assert_eq!(r.trace.status, Status::Converged);
    assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6);
}

#[test]
fn polyak_step_examples() {
    assert_eq!(polyak_step(10.0, &[2.0, 0.0], 0.0, PolyakVariant::V1), 2.5);
    assert_eq!(polyak_step(10.0, &[2.0, 0.0], 0.0, PolyakVariant::V2), 5.0);
    assert_eq!(polyak_step(3.0, &[2.0, 0.0], 3.0, PolyakVariant::V1), 0.0);
}

#[test]
fn polyak_stops_at_known_minimum() {
    // f = |x|^2 with f* = 0: v2 jumps straight to the minimizer
    let q = Quadratic { a: Matrix::from_fn(2, 2, |i, j| if i == j { 2.0 } else { 0.0 }), b: vec![0.0; 2] };
    let mon = ValueMonitor(&q);
    let rec = Recorder::new(Budget::iterations(50).with_grad_tol(0.0), &mon);
    let r = polyak_run(&q, &[1.0, -2.0], PolyakVariant::V2, 0.0, &StepControl::default(), rec).unwrap();
    assert_eq!(r.trace.status, Status::Converged);
    assert_eq!(r.trace.last().iteration, 1);
    assert_eq!(r.x, vec![0.0, 0.0]);
}

#[test]
fn bb_step_examples_and_fallback() {
    assert_eq!(bb_step(&[1.0, 1.0], &[1.0, 0.0], BbVariant::V1, 1e-4), 1.0);
    assert_eq!(bb_step(&[1.0, 1.0], &[1.0, 0.0], BbVariant::V2, 1e-4), 2.0);
    assert_eq!(bb_step(&[1.0, 0.0], &[0.0, 1.0], BbVariant::V2, 1e-4), 1e-4);
    assert_eq!(bb_step(&[1.0, 0.0], &[-1.0, 0.0], BbVariant::V1, 1e-4), 1e-4);
    assert_eq!(bb_step(&[1.0, 0.0], &[0.0, 0.0], BbVariant::V1, 1e-4), 1e-4);
}

#[test]
fn bb_converges_on_quadratic() {
    let q = spd_quadratic(10, 21);
    for v in [BbVariant::V1, BbVariant::V2] {
        let mon = ValueMonitor(&q);
        let rec = Recorder::new(Budget::iterations(200).with_grad_tol(1e-6), &mon);
        let r = bb_run(&q, &[1.0; 10], v, &StepControl::default(), rec).unwrap();
        assert_eq!(r.trace.status, Status::Converged, "{v:?}");
    }
}

#[test]
fn raider_masks() {
    let g = [1.0, -0.5, 0.1];
    assert_eq!(raider_mask(&g, 0.2), vec![true, true, false]);
    assert_eq!(raider_mask(&g, 1.0), vec![true, false, false]);
    assert_eq!(raider_mask(&g, 1e-6), vec![true, true, true]);
    assert_eq!(raider_mask(&[0.0, 0.0], 0.5), vec![false, false]);
}

#[test]
fn raider_and_sdm_decrease_rosenbrock() {
    let f0 = Rosenbrock.value(&[-1.2, 1.0]).unwrap();
    let mon = ValueMonitor(&Rosenbrock);
    let r = raider_run(&Rosenbrock, &[-1.2, 1.0], 0.5, &StepControl::default(), Recorder::new(Budget::iterations(200), &mon))
        .unwrap();
    assert!(r.trace.last().f_value < 0.1 * f0);
    let r = sdm_run(&Rosenbrock, &[-1.2, 1.0], &StepControl::default(), Recorder::new(Budget::iterations(200), &mon)).unwrap();
    assert!(r.trace.last().f_value < 0.1 * f0);
    assert!(r.trace.rows.windows(2).all(|w| w[1].f_value <= w[0].f_value));
}

/// Reports an ascent direction as the gradient.
struct WrongGradient;

impl Objective for WrongGradient {
    fn dim(&self) -> usize {
        1
    }
    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(x[0] * x[0])
    }
    fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        Ok((x[0] * x[0], vec![-2.0 * x[0]]))
    }
}

#[test]
fn failed_line_searches_stall() {
    let mon = ValueMonitor(&WrongGradient);
    for m in [
        FullGradMethod::Sdm,
        FullGradMethod::Cg { variant: CgVariant::PrpPlus, restart: None },
        FullGradMethod::QuasiNewton { rule: QuasiNewtonRule::Bfgs, restart: None },
        FullGradMethod::Lbfgs { history: 4 },
        FullGradMethod::Raider { d_level: 0.5 },
        FullGradMethod::Polyak { variant: PolyakVariant::V1, f_star: 0.0 },
    ] {
        let r = minimize(&WrongGradient, &[1.0], &m, &StepControl::default(), Recorder::new(Budget::iterations(50), &mon))
            .unwrap();
        assert_eq!(r.trace.status, Status::Stalled, "{m:?}");
        assert_eq!(r.x, vec![1.0]);
    }
}

#[test]
fn method_config_parses_from_json() {
    let m: FullGradMethod = serde_json::from_str(r#"{"method":"cg","variant":"prp_plus"}"#).unwrap();
    assert_eq!(m, FullGradMethod::Cg { variant: CgVariant::PrpPlus, restart: None });
    assert_eq!(default_restart(3), 60);
    assert_eq!(default_restart(500), 1000);
}
