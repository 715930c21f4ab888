//! Gauss-Newton family on the residual form `F`: the method of three
//! squares, non-smooth Gauss-Newton, stochastic squares with adaptive `L`,
//! and Levenberg-Marquardt.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::finite_or_none;
use crate::error::{arg, Error, Result};
use crate::linalg::{bidiagonalize, cholesky_solve, dot, norm, smw_solve, Matrix};
use crate::problem::LeastSquares;
use crate::trace::{Recorder, RunResult, Status};

/// Largest `i` tried in the doubling search for `2^i L`.
pub const MAX_DOUBLINGS: u32 = 60;
/// Clamp for the adaptive `L` of stochastic squares.
pub const L_MIN: f64 = 1e-12;
pub const LAMBDA_MIN: f64 = 1e-12;
pub const LAMBDA_MAX: f64 = 1e12;
/// Bisection steps in the non-smooth Gauss-Newton subproblem.
pub const NSGN_BISECTIONS: usize = 60;
/// Largest `n` for which the dense `n x n` normal matrix is formed.
pub const MAX_DENSE_DIM: usize = 4000;

/// Levenberg-Marquardt damping matrix `B`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LmDamping {
    /// `B = I`
    Identity,
    /// `B = diag(J^T J)`
    Diagonal,
    /// `B = sqrt(diag(J^T J))`
    SqrtDiagonal,
}

impl LmDamping {
    /// Variant numbering 1, 2, 3.
    pub fn from_variant(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Self::Identity),
            2 => Ok(Self::Diagonal),
            3 => Ok(Self::SqrtDiagonal),
            _ => arg(format!("LM variant must be 1, 2 or 3, got {v}")),
        }
    }

    /// Diagonal of `B` for the normal matrix `jtj`.
    pub fn diagonal(self, jtj: &Matrix) -> Vec<f64> {
        let n = jtj.rows();
        (0..n)
            .map(|i| match self {
                Self::Identity => 1.0,
                Self::Diagonal => jtj[(i, i)],
                Self::SqrtDiagonal => jtj[(i, i)].sqrt(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LmParams {
    /// Multiplier on success.
    pub alpha: f64,
    /// Multiplier on failure.
    pub beta: f64,
    pub lambda0: f64,
}

impl Default for LmParams {
    fn default() -> Self {
        Self { alpha: 0.5, beta: 10.0, lambda0: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum GaussNewtonMethod {
    Tsm {
        #[serde(default = "one")]
        l: f64,
    },
    Nsgn {
        #[serde(default = "one")]
        l: f64,
    },
    Ssm {
        batch: usize,
        #[serde(default = "one")]
        l0: f64,
        #[serde(default)]
        seed: u64,
    },
    Lm {
        damping: LmDamping,
        #[serde(default)]
        params: LmParams,
    },
}

fn one() -> f64 {
    1.0
}

pub fn minimize<O: LeastSquares + ?Sized>(
    sys: &O,
    x0: &[f64],
    method: &GaussNewtonMethod,
    rec: Recorder<'_>,
) -> Result<RunResult> {
    match *method {
        GaussNewtonMethod::Tsm { l } => tsm_run(sys, x0, l, rec),
        GaussNewtonMethod::Nsgn { l } => nsgn_run(sys, x0, l, rec),
        GaussNewtonMethod::Ssm { batch, l0, seed } => ssm_run(sys, x0, batch, l0, seed, rec),
        GaussNewtonMethod::Lm { damping, params } => lm_run(sys, x0, damping, params, rec),
    }
}

fn check<O: LeastSquares + ?Sized>(sys: &O, x0: &[f64], dense: bool) -> Result<()> {
    if x0.len() != sys.dim() {
        return arg(format!("start point has {} entries, problem has {}", x0.len(), sys.dim()));
    }
    if dense && x0.len() > MAX_DENSE_DIM {
        return arg(format!("dense normal matrix limited to n <= {MAX_DENSE_DIM}"));
    }
    Ok(())
}

/// `|F(x)|^2`, `None` when not finite.
fn f2_at<O: LeastSquares + ?Sized>(sys: &O, x: &[f64]) -> Result<Option<f64>> {
    Ok(finite_or_none(sys.residuals(x))?.map(|r| dot(&r, &r)).filter(|v| v.is_finite()))
}

/// Method of three squares step: `d` solving
/// `(J^T J / f1 + L I) d = -J^T F / f1` with `f1 = |F|`; zero when `F = 0`.
/// `jac` is the `n x m_res` matrix of residual gradients.
pub fn tsm_direction(jac: &Matrix, f: &[f64], l: f64) -> Result<Vec<f64>> {
    let f1 = norm(f);
    if f1 == 0.0 {
        return Ok(vec![0.0; jac.rows()]);
    }
    let mut a = jac.outer_gram();
    a.scale(1.0 / f1);
    a.add_diagonal(l);
    let rhs: Vec<f64> = jac.mul_vec(f).iter().map(|v| -v / f1).collect();
    cholesky_solve(&a, &rhs)
}

/// Non-smooth Gauss-Newton step: minimizer of `L/2 |d|^2 + |F + J^T d|`
/// (with `jac = J^T`), by bisection on `sigma = |F + J^T d|`.
pub fn nsgn_direction(jac: &Matrix, f: &[f64], l: f64) -> Result<Vec<f64>> {
    let n = jac.rows();
    let f1 = norm(f);
    let jtf = jac.mul_vec(f);
    if f1 == 0.0 || jtf.iter().all(|v| *v == 0.0) {
        return Ok(vec![0.0; n]);
    }
    let jtj = jac.outer_gram();
    let solve = |shift: f64| -> Result<Vec<f64>> {
        let mut a = jtj.clone();
        a.add_diagonal(shift);
        cholesky_solve(&a, &jtf.iter().map(|v| -v).collect::<Vec<_>>())
    };
    let gap = |d: &[f64], sigma: f64| -> f64 {
        let r: Vec<f64> = jac.tr_mul_vec(d).iter().zip(f).map(|(a, b)| a + b).collect();
        norm(&r) - sigma
    };
    let (mut lo, mut hi) = (0.0, f1);
    let mut best = None;
    for _ in 0..NSGN_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let d = match solve(l * mid) {
            Ok(d) => d,
            Err(Error::Numerical(_)) => {
                lo = mid;
                continue;
            }
            Err(e) => return Err(e),
        };
        if gap(&d, mid) >= 0.0 {
            lo = mid;
        } else {
            hi = mid;
            best = Some(d);
        }
    }
    if lo > 0.0 {
        return match best {
            Some(d) => Ok(d),
            None => solve(l * hi),
        };
    }
    // root at sigma -> 0: the residual can be zeroed; minimum-norm solution
    let scale = (0..n).map(|i| jtj[(i, i)]).fold(0.0, f64::max).max(1.0);
    solve(1e-12 * scale)
}

fn damped_run<O: LeastSquares + ?Sized>(
    sys: &O,
    x0: &[f64],
    l: f64,
    mut rec: Recorder<'_>,
    direction: fn(&Matrix, &[f64], f64) -> Result<Vec<f64>>,
) -> Result<RunResult> {
    check(sys, x0, true)?;
    if !(l > 0.0) {
        return arg("L must be positive");
    }
    let mut x = x0.to_vec();
    let Some(mut f2) = f2_at(sys, &x)? else {
        rec.start(&x, Some(f64::INFINITY))?;
        return rec.finish(Status::Diverged, &x, Some(f64::INFINITY));
    };
    if let Some(s) = rec.start(&x, Some(sys.objective_from_f2(f2)))? {
        return rec.finish(s, &x, Some(sys.objective_from_f2(f2)));
    }
    let mut l = l;
    loop {
        let f = sys.residuals(&x)?;
        let jac = sys.jacobian(&x)?;
        let g: Vec<f64> = jac.mul_vec(&f).iter().map(|v| 2.0 * v).collect();
        if f2 == 0.0 || rec.grad_converged(norm(&g)) {
            return rec.finish(Status::Converged, &x, Some(sys.objective_from_f2(f2)));
        }
        // doubling safeguard, inactive once L >= L_F
        let mut i = 0;
        let (xn, f2n) = loop {
            let d = match direction(&jac, &f, l) {
                Ok(d) => d,
                // the damping is below rounding relative to J^T J / f1
                Err(Error::Numerical(_)) => {
                    return rec.finish(Status::Stalled, &x, Some(sys.objective_from_f2(f2)));
                }
                Err(e) => return Err(e),
            };
            let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + b).collect();
            match f2_at(sys, &xn)? {
                Some(v) if v <= f2 => break (xn, v),
                _ => {}
            }
            i += 1;
            if i > MAX_DOUBLINGS {
                return rec.finish(Status::LOverflow, &x, Some(sys.objective_from_f2(f2)));
            }
            l *= 2.0;
        };
        let stalled = f2n == f2;
        (x, f2) = (xn, f2n);
        if let Some(s) = rec.step(&x, Some(sys.objective_from_f2(f2)), Some(l))? {
            return rec.finish(s, &x, Some(sys.objective_from_f2(f2)));
        }
        if stalled {
            return rec.finish(Status::Stalled, &x, Some(sys.objective_from_f2(f2)));
        }
    }
}

/// Method of three squares with fixed `L`; `L` doubles only when a step
/// would increase `|F|`.
pub fn tsm_run<O: LeastSquares + ?Sized>(sys: &O, x0: &[f64], l: f64, rec: Recorder<'_>) -> Result<RunResult> {
    damped_run(sys, x0, l, rec, tsm_direction)
}

pub fn nsgn_run<O: LeastSquares + ?Sized>(sys: &O, x0: &[f64], l: f64, rec: Recorder<'_>) -> Result<RunResult> {
    damped_run(sys, x0, l, rec, nsgn_direction)
}

/// One accepted stochastic-squares step.
#[derive(Debug, Clone, PartialEq)]
pub struct SsmStep {
    pub x: Vec<f64>,
    /// `f_hat_1` at the new point.
    pub f1_hat: f64,
    /// `L` for the next step, `2^(i-1) L`.
    pub l_next: f64,
    pub doublings: u32,
}

/// `T_i = x - B^{-1} grad` with `B = c G G^T + tau I`, `c = 1 / (p f_hat_1)`.
enum ShiftedSolver {
    Gradient,
    Smw(Matrix, f64),
    Bidiag(crate::linalg::BidiagFactorization, f64),
}

impl ShiftedSolver {
    fn new(g: Matrix, c: f64) -> Result<Self> {
        Ok(match g.cols() {
            0 => Self::Gradient,
            p if p <= g.rows() => Self::Smw(g, c),
            _ => Self::Bidiag(bidiagonalize(&g)?, c),
        })
    }

    fn solve(&self, tau: f64, rhs: &[f64]) -> Result<Vec<f64>> {
        match self {
            Self::Gradient => Ok(rhs.iter().map(|v| v / tau).collect()),
            Self::Smw(g, c) => smw_solve(g, c / tau, tau, rhs),
            Self::Bidiag(b, c) => {
                let mut w = rhs.to_vec();
                b.apply_ut(&mut w);
                let mut w = b.solve_shifted_gram(*c, tau, &w)?;
                b.apply_u(&mut w);
                Ok(w)
            }
        }
    }
}

/// Stochastic-squares step from `x` on residual subset `idx`. `f2` and
/// `grad_f2` are the full `|F|^2` and its gradient at `x`. Returns
/// `Ok(None)` when no `i <= MAX_DOUBLINGS` passes the acceptance test.
pub fn ssm_step<O: LeastSquares + ?Sized>(
    sys: &O,
    x: &[f64],
    f2: f64,
    grad_f2: &[f64],
    l: f64,
    idx: &[usize],
) -> Result<Option<SsmStep>> {
    let m = sys.residual_count() as f64;
    let f1 = (f2 / m).sqrt();
    if !(f1 > 0.0) {
        return arg("stochastic squares step needs f_hat_1 > 0");
    }
    let grad: Vec<f64> = grad_f2.iter().map(|v| v / (2.0 * m * f1)).collect();
    let p = idx.len();
    let g = sys.jacobian_rows(x, idx)?;
    let c = if p == 0 { 0.0 } else { 1.0 / (p as f64 * f1) };
    let gt = g.clone();
    let solver = ShiftedSolver::new(g, c)?;
    for i in 0..=MAX_DOUBLINGS {
        let tau = l * 2f64.powi(i as i32);
        let h: Vec<f64> = match solver.solve(tau, &grad) {
            Ok(w) => w.iter().map(|v| -v).collect(),
            Err(Error::Numerical(_)) => continue,
            Err(e) => return Err(e),
        };
        let t: Vec<f64> = x.iter().zip(&h).map(|(a, b)| a + b).collect();
        let Some(f2t) = f2_at(sys, &t)? else { continue };
        let f1t = (f2t / m).sqrt();
        let gth = gt.tr_mul_vec(&h);
        let model = f1 + dot(&grad, &h) + 0.5 * c * dot(&gth, &gth) + 0.5 * tau * dot(&h, &h);
        // psi(T) <= psi(x) = f_hat_1(x) in exact arithmetic; the second
        // test keeps rounding from breaking monotonicity
        if f1t <= model && f2t <= f2 {
            return Ok(Some(SsmStep { x: t, f1_hat: f1t, l_next: (0.5 * tau).max(L_MIN), doublings: i }));
        }
    }
    Ok(None)
}

/// Stochastic squares with batch `p` drawn uniformly without replacement
/// each step; the trace `aux` column holds `L_k`.
pub fn ssm_run<O: LeastSquares + ?Sized>(
    sys: &O,
    x0: &[f64],
    batch: usize,
    l0: f64,
    seed: u64,
    mut rec: Recorder<'_>,
) -> Result<RunResult> {
    check(sys, x0, false)?;
    let m_res = sys.residual_count();
    if batch > m_res {
        return arg(format!("batch {batch} exceeds residual count {m_res}"));
    }
    if !(l0 > 0.0) {
        return arg("L0 must be positive");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = x0.to_vec();
    let Some((mut f2, mut g)) = finite_or_none(sys.grad_f2(&x))? else {
        rec.start(&x, Some(f64::INFINITY))?;
        return rec.finish(Status::Diverged, &x, Some(f64::INFINITY));
    };
    if let Some(s) = rec.start(&x, Some(sys.objective_from_f2(f2)))? {
        return rec.finish(s, &x, Some(sys.objective_from_f2(f2)));
    }
    let mut l = l0;
    loop {
        if f2 == 0.0 || rec.grad_converged(norm(&g)) {
            return rec.finish(Status::Converged, &x, Some(sys.objective_from_f2(f2)));
        }
        let idx = rand::seq::index::sample(&mut rng, m_res, batch).into_vec();
        let Some(step) = ssm_step(sys, &x, f2, &g, l, &idx)? else {
            return rec.finish(Status::LOverflow, &x, Some(sys.objective_from_f2(f2)));
        };
        x = step.x;
        l = step.l_next;
        let Some((nf2, ng)) = finite_or_none(sys.grad_f2(&x))? else {
            return rec.finish(Status::Diverged, &x, Some(f64::INFINITY));
        };
        (f2, g) = (nf2, ng);
        if let Some(s) = rec.step(&x, Some(sys.objective_from_f2(f2)), Some(l))? {
            return rec.finish(s, &x, Some(sys.objective_from_f2(f2)));
        }
    }
}

/// Solves `(J^T J + lambda B) d = rhs`; `None` when the matrix is not
/// positive definite.
pub fn lm_trial(jtj: &Matrix, b_diag: &[f64], lambda: f64, rhs: &[f64]) -> Result<Option<Vec<f64>>> {
    let mut a = jtj.clone();
    for (i, b) in b_diag.iter().enumerate() {
        a[(i, i)] += lambda * b;
    }
    match cholesky_solve(&a, rhs) {
        Ok(d) => Ok(Some(d)),
        Err(Error::Numerical(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Levenberg-Marquardt; the trace `aux` column holds `lambda`.
pub fn lm_run<O: LeastSquares + ?Sized>(
    sys: &O,
    x0: &[f64],
    damping: LmDamping,
    params: LmParams,
    mut rec: Recorder<'_>,
) -> Result<RunResult> {
    check(sys, x0, true)?;
    let LmParams { alpha, beta, lambda0 } = params;
    if !(0.0 < alpha && alpha < 1.0 && beta > 1.0 && lambda0 > 0.0) {
        return arg("LM needs 0 < alpha < 1, beta > 1, lambda0 > 0");
    }
    let mut x = x0.to_vec();
    let Some(mut f2) = f2_at(sys, &x)? else {
        rec.start(&x, Some(f64::INFINITY))?;
        return rec.finish(Status::Diverged, &x, Some(f64::INFINITY));
    };
    if let Some(s) = rec.start(&x, Some(sys.objective_from_f2(f2)))? {
        return rec.finish(s, &x, Some(sys.objective_from_f2(f2)));
    }
    let mut lambda = lambda0.clamp(LAMBDA_MIN, LAMBDA_MAX);
    loop {
        let f = sys.residuals(&x)?;
        let jac = sys.jacobian(&x)?;
        let jtf = jac.mul_vec(&f);
        if f2 == 0.0 || rec.grad_converged(2.0 * norm(&jtf)) {
            return rec.finish(Status::Converged, &x, Some(sys.objective_from_f2(f2)));
        }
        let jtj = jac.outer_gram();
        let b = damping.diagonal(&jtj);
        let rhs: Vec<f64> = jtf.iter().map(|v| -v).collect();
        loop {
            if let Some(d) = lm_trial(&jtj, &b, lambda, &rhs)? {
                let xn: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + b).collect();
                if let Some(v) = f2_at(sys, &xn)?.filter(|v| *v < f2) {
                    (x, f2) = (xn, v);
                    lambda = (lambda * alpha).max(LAMBDA_MIN);
                    break;
                }
            }
            lambda *= beta;
            if lambda > LAMBDA_MAX {
                return rec.finish(Status::Stalled, &x, Some(sys.objective_from_f2(f2)));
            }
        }
        if let Some(s) = rec.step(&x, Some(sys.objective_from_f2(f2)), Some(lambda))? {
            return rec.finish(s, &x, Some(sys.objective_from_f2(f2)));
        }
    }
}

#[cfg(test)]
mod tests;
