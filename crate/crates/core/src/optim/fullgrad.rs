//! Full-gradient local methods: steepest descent, Polyak, Barzilai-Borwein,
//! Raider, the nonlinear CG family, BFGS/DFP and limited-memory BFGS.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::{finite_or_none, line_min, step_to, EPS_FLT};
use crate::error::{arg, Result};
use crate::linalg::{dot, norm, LineSearch, Matrix};
use crate::problem::Objective;
use crate::trace::{Recorder, RunResult, Status};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolyakVariant {
    /// `alpha = (f - f*) / |g|^2`
    V1,
    /// `alpha = 2 (f - f*) / |g|^2`
    V2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BbVariant {
    /// `<s, y> / <y, y>`
    V1,
    /// `<s, s> / <s, y>`
    V2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CgVariant {
    Hs,
    Fr,
    Prp,
    PrpPlus,
    Cd,
    Ls,
    Dy,
    Nesterov,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuasiNewtonRule {
    Bfgs,
    Dfp,
}

/// Method selection with its hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum FullGradMethod {
    Sdm,
    Polyak {
        variant: PolyakVariant,
        #[serde(default)]
        f_star: f64,
    },
    Bb {
        variant: BbVariant,
    },
    Raider {
        #[serde(default = "default_d_level")]
        d_level: f64,
    },
    Cg {
        variant: CgVariant,
        #[serde(default)]
        restart: Option<usize>,
    },
    QuasiNewton {
        rule: QuasiNewtonRule,
        #[serde(default)]
        restart: Option<usize>,
    },
    Lbfgs {
        history: usize,
    },
}

fn default_d_level() -> f64 {
    0.2
}

/// Step-control constants shared by the methods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub line_search: LineSearch,
    /// Backtracking divisor for Polyak and Raider.
    pub k_alpha: f64,
    pub alpha_min: f64,
    /// BB step used when the formula gives a non-positive or undefined value.
    pub bb_fallback: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self { line_search: LineSearch::default(), k_alpha: 3.0, alpha_min: 1e-12, bb_fallback: 1e-4 }
    }
}

/// Restart period default `min(20 n, 1000)`.
pub fn default_restart(n: usize) -> usize {
    (20 * n).clamp(1, 1000)
}

pub fn minimize<O: Objective + ?Sized>(
    obj: &O,
    x0: &[f64],
    method: &FullGradMethod,
    ctl: &StepControl,
    rec: Recorder<'_>,
) -> Result<RunResult> {
    match *method {
        FullGradMethod::Sdm => sdm_run(obj, x0, ctl, rec),
        FullGradMethod::Polyak { variant, f_star } => polyak_run(obj, x0, variant, f_star, ctl, rec),
        FullGradMethod::Bb { variant } => bb_run(obj, x0, variant, ctl, rec),
        FullGradMethod::Raider { d_level } => raider_run(obj, x0, d_level, ctl, rec),
        FullGradMethod::Cg { variant, restart } => {
            cg_run(obj, x0, variant, restart.unwrap_or(default_restart(x0.len())), ctl, rec)
        }
        FullGradMethod::QuasiNewton { rule, restart } => {
            quasi_newton_run(obj, x0, rule, restart.unwrap_or(default_restart(x0.len())), ctl, rec)
        }
        FullGradMethod::Lbfgs { history } => lbfgs_run(obj, x0, history, ctl, rec),
    }
}

fn check_dim<O: Objective + ?Sized>(obj: &O, x0: &[f64]) -> Result<()> {
    if x0.len() != obj.dim() {
        return arg(format!("start point has {} entries, problem has {}", x0.len(), obj.dim()));
    }
    Ok(())
}

/// Evaluates the start; `Err(result)` when the run is already over.
macro_rules! begin {
    ($obj:expr, $x0:expr, $rec:ident) => {{
        check_dim($obj, $x0)?;
        match finite_or_none($obj.value_grad($x0))? {
            None => {
                $rec.start($x0, Some(f64::INFINITY))?;
                return $rec.finish(Status::Diverged, $x0, Some(f64::INFINITY));
            }
            Some((f, g)) => {
                if let Some(s) = $rec.start($x0, Some(f))? {
                    return $rec.finish(s, $x0, Some(f));
                }
                ($x0.to_vec(), f, g)
            }
        }
    }};
}

/// Iteration state shared by the line-search methods.
struct Searcher {
    alpha: f64,
    failures: u32,
}

impl Searcher {
    fn new() -> Self {
        Self { alpha: 1.0, failures: 0 }
    }
}

/// Line search along `d`; `None` on failure (no descent).
fn search<O: Objective + ?Sized>(
    obj: &O,
    x: &[f64],
    f: f64,
    d: &[f64],
    alpha_init: f64,
    ctl: &StepControl,
) -> Option<(f64, f64)> {
    let r = line_min(obj, x, d, f, alpha_init, ctl.line_search.max_evals);
    (r.alpha > 0.0 && r.value < f).then_some((r.alpha, r.value))
}

pub fn sdm_run<O: Objective + ?Sized>(obj: &O, x0: &[f64], ctl: &StepControl, mut rec: Recorder<'_>) -> Result<RunResult> {
    let (mut x, mut f, mut g) = begin!(obj, x0, rec);
    let mut st = Searcher::new();
    st.alpha = ctl.line_search.alpha_init;
    loop {
        if rec.grad_converged(norm(&g)) {
            return rec.finish(Status::Converged, &x, Some(f));
        }
        let d: Vec<f64> = g.iter().map(|v| -v).collect();
        match search(obj, &x, f, &d, st.alpha, ctl) {
            None => {
                st.failures += 1;
                if st.failures >= 2 {
                    return rec.finish(Status::Stalled, &x, Some(f));
                }
                st.alpha *= 1e-3;
            }
            Some((a, _)) => {
                st.failures = 0;
                st.alpha = a;
                let xn = step_to(&x, &d, a);
                let Some((fn_, gn)) = finite_or_none(obj.value_grad(&xn))? else {
                    return rec.finish(Status::Diverged, &xn, Some(f64::INFINITY));
                };
                (x, f, g) = (xn, fn_, gn);
                if let Some(s) = rec.step(&x, Some(f), None)? {
                    return rec.finish(s, &x, Some(f));
                }
            }
        }
    }
}

/// Polyak step length; `0` when `f <= f_star` or the gradient vanishes.
pub fn polyak_step(f: f64, grad: &[f64], f_star: f64, variant: PolyakVariant) -> f64 {
    let g2 = dot(grad, grad);
    if f <= f_star || g2 == 0.0 {
        return 0.0;
    }
    let a = (f - f_star) / g2;
    match variant {
        PolyakVariant::V1 => a,
        PolyakVariant::V2 => 2.0 * a,
    }
}

/// Divides `alpha` by `k_alpha` until `f(x + alpha d) < f`; `None` once it
/// falls below the floor (`strict_floor`: `<`, otherwise `<=`).
fn backtrack<O: Objective + ?Sized>(
    obj: &O,
    x: &[f64],
    f: f64,
    d: &[f64],
    mut alpha: f64,
    ctl: &StepControl,
    strict_floor: bool,
) -> Option<(Vec<f64>, f64)> {
    loop {
        let xn = step_to(x, d, alpha);
        if let Ok(fv) = obj.value(&xn) {
            if fv < f {
                return Some((xn, fv));
            }
        }
        alpha /= ctl.k_alpha;
        let below = if strict_floor { alpha < ctl.alpha_min } else { alpha <= ctl.alpha_min };
        if below {
            return None;
        }
    }
}

pub fn polyak_run<O: Objective + ?Sized>(
    obj: &O,
    x0: &[f64],
    variant: PolyakVariant,
    f_star: f64,
    ctl: &StepControl,
    mut rec: Recorder<'_>,
) -> Result<RunResult> {
    let (mut x, mut f, mut g) = begin!(obj, x0, rec);
    loop {
        if rec.grad_converged(norm(&g)) {
            return rec.finish(Status::Converged, &x, Some(f));
        }
        let a = polyak_step(f, &g, f_star, variant);
        if a == 0.0 {
            return rec.finish(Status::Converged, &x, Some(f));
        }
        let d: Vec<f64> = g.iter().map(|v| -v).collect();
        let Some((xn, _)) = backtrack(obj, &x, f, &d, a, ctl, true) else {
            return rec.finish(Status::Stalled, &x, Some(f));
        };
        let Some((fn_, gn)) = finite_or_none(obj.value_grad(&xn))? else {
            return rec.finish(Status::Diverged, &xn, Some(f64::INFINITY));
        };
        (x, f, g) = (xn, fn_, gn);
        if let Some(s) = rec.step(&x, Some(f), None)? {
            return rec.finish(s, &x, Some(f));
        }
    }
}

/// Barzilai-Borwein step; `fallback` when the formula is undefined or not
/// positive.
pub fn bb_step(s: &[f64], y: &[f64], variant: BbVariant, fallback: f64) -> f64 {
    let (num, den) = match variant {
        BbVariant::V1 => (dot(s, y), dot(y, y)),
        BbVariant::V2 => (dot(s, s), dot(s, y)),
    };
    let a = num / den;
    if den.abs() <= EPS_FLT || !a.is_finite() || a <= 0.0 {
        fallback
    } else {
        a
    }
}

/// First step by line search, then non-monotone BB steps.
pub fn bb_run<O: Objective + ?Sized>(
    obj: &O,
    x0: &[f64],
    variant: BbVariant,
    ctl: &StepControl,
    mut rec: Recorder<'_>,
) -> Result<RunResult> {
    let (mut x, mut f, mut g) = begin!(obj, x0, rec);
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    loop {
        if rec.grad_converged(norm(&g)) {
            return rec.finish(Status::Converged, &x, Some(f));
        }
        let d: Vec<f64> = g.iter().map(|v| -v).collect();
        let a = match &prev {
            None => match search(obj, &x, f, &d, ctl.line_search.alpha_init, ctl) {
                Some((a, _)) => a,
                None => return rec.finish(Status::Stalled, &x, Some(f)),
            },
            Some((xp, gp)) => {
                let s: Vec<f64> = x.iter().zip(xp).map(|(a, b)| a - b).collect();
                let y: Vec<f64> = g.iter().zip(gp).map(|(a, b)| a - b).collect();
                bb_step(&s, &y, variant, ctl.bb_fallback)
            }
        };
        let xn = step_to(&x, &d, a);
        let Some((fn_, gn)) = finite_or_none(obj.value_grad(&xn))? else {
            return rec.finish(Status::Diverged, &xn, Some(f64::INFINITY));
        };
        prev = Some((std::mem::replace(&mut x, xn), std::mem::replace(&mut g, gn)));
        f = fn_;
        if let Some(s) = rec.step(&x, Some(f), None)? {
            return rec.finish(s, &x, Some(f));
        }
    }
}

/// Coordinates with `|g_i| >= d_level max_j |g_j|`.
pub fn raider_mask(g: &[f64], d_level: f64) -> Vec<bool> {
    let m = crate::linalg::max_abs(g);
    g.iter().map(|v| m > 0.0 && v.abs() >= d_level * m).collect()
}

pub fn raider_run<O: Objective + ?Sized>(
    obj: &O,
    x0: &[f64],
    d_level: f64,
    ctl: &StepControl,
    mut rec: Recorder<'_>,
) -> Result<RunResult> {
    if !(1e-6..=1.0).contains(&d_level) {
        return arg(format!("d_level must lie in [1e-6, 1], got {d_level}"));
    }
    let (mut x, mut f, mut g) = begin!(obj, x0, rec);
    loop {
        if rec.grad_converged(norm(&g)) {
            return rec.finish(Status::Converged, &x, Some(f));
        }
        let mask = raider_mask(&g, d_level);
        let d: Vec<f64> = g.iter().zip(&mask).map(|(v, &on)| if on { -v } else { 0.0 }).collect();
        let Some((xn, _)) = backtrack(obj, &x, f, &d, 1.0, ctl, false) else {
            return rec.finish(Status::Stalled, &x, Some(f));
        };
        let Some((fn_, gn)) = finite_or_none(obj.value_grad(&xn))? else {
            return rec.finish(Status::Diverged, &xn, Some(f64::INFINITY));
        };
        (x, f, g) = (xn, fn_, gn);
        if let Some(s) = rec.step(&x, Some(f), None)? {
            return rec.finish(s, &x, Some(f));
        }
    }
}

/// `beta` for the two-term CG update, `None` when its denominator is
/// (numerically) zero. `g`, `g_new` are consecutive gradients and `p` the
/// previous direction.
pub fn cg_beta(variant: CgVariant, g: &[f64], g_new: &[f64], p: &[f64]) -> Option<f64> {
    let y: Vec<f64> = g_new.iter().zip(g).map(|(a, b)| a - b).collect();
    let (num, den) = match variant {
        CgVariant::Hs => (dot(g_new, &y), dot(p, &y)),
        CgVariant::Fr => (dot(g_new, g_new), dot(g, g)),
        CgVariant::Prp | CgVariant::PrpPlus => (dot(g_new, &y), dot(g, g)),
        CgVariant::Cd => (dot(g_new, g_new), -dot(p, g)),
        CgVariant::Ls => (dot(g_new, &y), -dot(p, g)),
        CgVariant::Dy => (dot(g_new, g_new), dot(p, &y)),
        CgVariant::Nesterov => return Some(0.0),
    };
    if den.abs() <= EPS_FLT {
        return None;
    }
    let b = num / den;
    Some(if variant == CgVariant::PrpPlus { b.max(0.0) } else { b })
}

pub fn cg_run<O: Objective + ?Sized>(
    obj: &O,
    x0: &[f64],
    variant: CgVariant,
    restart: usize,
    ctl: &StepControl,
    rec: Recorder<'_>,
) -> Result<RunResult> {
    if restart == 0 {
        return arg("CG restart period must be >= 1");
    }
    if variant == CgVariant::Nesterov {
        return nesterov_run(obj, x0, ctl, rec);
    }
    let mut rec = rec;
    let (mut x, mut f, mut g) = begin!(obj, x0, rec);
    let mut p: Vec<f64> = g.iter().map(|v| -v).collect();
    let mut st = Searcher::new();
    st.alpha = ctl.line_search.alpha_init;
    let mut k = 0usize;
    loop {
        if rec.grad_converged(norm(&g)) {
            return rec.finish(Status::Converged, &x, Some(f));
        }
        let steepest = p.iter().zip(&g).all(|(a, b)| *a == -*b);
        let Some((a, _)) = search(obj, &x, f, &p, st.alpha, ctl) else {
            if !steepest {
                p = g.iter().map(|v| -v).collect();
                continue;
            }
            st.failures += 1;
            if st.failures >= 2 {
                return rec.finish(Status::Stalled, &x, Some(f));
            }
            st.alpha *= 1e-3;
            continue;
        };
        st.failures = 0;
        st.alpha = a;
        let xn = step_to(&x, &p, a);
        let Some((fn_, gn)) = finite_or_none(obj.value_grad(&xn))? else {
            return rec.finish(Status::Diverged, &xn, Some(f64::INFINITY));
        };
        k += 1;
        let beta = if k.is_multiple_of(restart) { None } else { cg_beta(variant, &g, &gn, &p) };
        let mut pn: Vec<f64> = gn.iter().map(|v| -v).collect();
        if let Some(b) = beta {
            crate::linalg::axpy(b, &p, &mut pn);
            if dot(&pn, &gn) >= 0.0 {
                pn = gn.iter().map(|v| -v).collect();
            }
        }
        (x, f, g, p) = (xn, fn_, gn, pn);
        if let Some(s) = rec.step(&x, Some(f), None)? {
            return rec.finish(s, &x, Some(f));
        }
    }
}

/// Two line searches per iteration: towards the iterate from two steps
/// back, then along the negative gradient.
fn nesterov_run<O: Objective + ?Sized>(
    obj: &O,
    x0: &[f64],
    ctl: &StepControl,
    mut rec: Recorder<'_>,
) -> Result<RunResult> {
    let (mut x, mut f, mut g) = begin!(obj, x0, rec);
    let mut ys: VecDeque<Vec<f64>> = VecDeque::from(vec![x0.to_vec(), x0.to_vec()]);
    let mut failures = 0;
    loop {
        if rec.grad_converged(norm(&g)) {
            return rec.finish(Status::Converged, &x, Some(f));
        }
        let back = &ys[0];
        let dir: Vec<f64> = back.iter().zip(&x).map(|(a, b)| a - b).collect();
        let (y, fy, gy) = match search(obj, &x, f, &dir, 1.0, ctl) {
            Some((a, _)) => {
                let y = step_to(&x, &dir, a);
                let Some((fy, gy)) = finite_or_none(obj.value_grad(&y))? else {
                    return rec.finish(Status::Diverged, &y, Some(f64::INFINITY));
                };
                (y, fy, gy)
            }
            None => (x.clone(), f, g.clone()),
        };
        let d: Vec<f64> = gy.iter().map(|v| -v).collect();
        let (xn, fn_, gn) = match search(obj, &y, fy, &d, ctl.line_search.alpha_init, ctl) {
            Some((a, _)) => {
                failures = 0;
                let xn = step_to(&y, &d, a);
                let Some((fn_, gn)) = finite_or_none(obj.value_grad(&xn))? else {
                    return rec.finish(Status::Diverged, &xn, Some(f64::INFINITY));
                };
                (xn, fn_, gn)
            }
            None if fy < f => (y.clone(), fy, gy),
            None => {
                failures += 1;
                if failures >= 2 {
                    return rec.finish(Status::Stalled, &x, Some(f));
                }
                (x.clone(), f, g.clone())
            }
        };
        ys.pop_front();
        ys.push_back(y);
        (x, f, g) = (xn, fn_, gn);
        if let Some(s) = rec.step(&x, Some(f), None)? {
            return rec.finish(s, &x, Some(f));
        }
    }
}

/// Inverse-Hessian update satisfying `H+ y = s`; `false` (no change) when
/// `<s, y> <= EPS_FLT`.
pub fn quasi_newton_update(h: &mut Matrix, s: &[f64], y: &[f64], rule: QuasiNewtonRule) -> bool {
    let sy = dot(s, y);
    if sy <= EPS_FLT {
        return false;
    }
    let n = s.len();
    let hy = h.mul_vec(y);
    let yhy = dot(y, &hy);
    match rule {
        QuasiNewtonRule::Bfgs => {
            // H - rho (s hy^T + hy s^T) + (rho^2 y^T H y + rho) s s^T
            let rho = 1.0 / sy;
            let c = rho * rho * yhy + rho;
            for j in 0..n {
                for i in 0..n {
                    h[(i, j)] += -rho * (s[i] * hy[j] + hy[i] * s[j]) + c * s[i] * s[j];
                }
            }
        }
        QuasiNewtonRule::Dfp => {
            if yhy <= EPS_FLT {
                return false;
            }
            for j in 0..n {
                for i in 0..n {
                    h[(i, j)] += -hy[i] * hy[j] / yhy + s[i] * s[j] / sy;
                }
            }
        }
    }
    h.symmetrize();
    true
}

/// Largest dimension for which the dense inverse Hessian is kept.
pub const MAX_DENSE_DIM: usize = 4000;

pub fn quasi_newton_run<O: Objective + ?Sized>(
    obj: &O,
    x0: &[f64],
    rule: QuasiNewtonRule,
    restart: usize,
    ctl: &StepControl,
    rec: Recorder<'_>,
) -> Result<RunResult> {
    quasi_newton_inspect(obj, x0, rule, restart, ctl, rec, |_| {})
}

/// [`quasi_newton_run`] that hands every updated `H` to `inspect`.
pub fn quasi_newton_inspect<O: Objective + ?Sized>(
    obj: &O,
    x0: &[f64],
    rule: QuasiNewtonRule,
    restart: usize,
    ctl: &StepControl,
    mut rec: Recorder<'_>,
    mut inspect: impl FnMut(&Matrix),
) -> Result<RunResult> {
    let n = x0.len();
    if n > MAX_DENSE_DIM {
        return arg(format!("dense quasi-Newton limited to n <= {MAX_DENSE_DIM}, got {n}"));
    }
    if restart == 0 {
        return arg("restart period must be >= 1");
    }
    let (mut x, mut f, mut g) = begin!(obj, x0, rec);
    let mut h = Matrix::identity(n);
    let mut k = 0usize;
    let mut failures = 0;
    loop {
        if rec.grad_converged(norm(&g)) {
            return rec.finish(Status::Converged, &x, Some(f));
        }
        if k.is_multiple_of(restart) {
            h = Matrix::identity(n);
        }
        let mut d: Vec<f64> = h.mul_vec(&g).iter().map(|v| -v).collect();
        if dot(&d, &g) >= 0.0 {
            h = Matrix::identity(n);
            d = g.iter().map(|v| -v).collect();
        }
        let Some((a, _)) = search(obj, &x, f, &d, ctl.line_search.alpha_init, ctl) else {
            if !k.is_multiple_of(restart) {
                // retry once from the identity
                k = 0;
                continue;
            }
            failures += 1;
            if failures >= 2 {
                return rec.finish(Status::Stalled, &x, Some(f));
            }
            continue;
        };
        failures = 0;
        let xn = step_to(&x, &d, a);
        let Some((fn_, gn)) = finite_or_none(obj.value_grad(&xn))? else {
            return rec.finish(Status::Diverged, &xn, Some(f64::INFINITY));
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        if quasi_newton_update(&mut h, &s, &y, rule) {
            inspect(&h);
        }
        (x, f, g) = (xn, fn_, gn);
        k += 1;
        if let Some(st) = rec.step(&x, Some(f), None)? {
            return rec.finish(st, &x, Some(f));
        }
    }
}

/// Ring buffer of curvature pairs for L-BFGS.
#[derive(Debug, Clone)]
pub struct LbfgsHistory {
    capacity: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
}

impl LbfgsHistory {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), pairs: VecDeque::new() }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn clear(&mut self) {
        self.pairs.clear();
    }

    /// Stores `(s, y)` unless `<s, y> <= EPS_FLT`; returns whether stored.
    pub fn push(&mut self, s: Vec<f64>, y: Vec<f64>) -> bool {
        let sy = dot(&s, &y);
        if sy <= EPS_FLT {
            return false;
        }
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
        true
    }

    /// `-H g` by the two-loop recursion with `H_0 = (<s,y>/<y,y>) I` from the
    /// newest pair (`H_0 = I` when empty).
    pub fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alphas = vec![0.0; self.pairs.len()];
        for (i, (s, y, rho)) in self.pairs.iter().enumerate().rev() {
            let a = rho * dot(s, &q);
            alphas[i] = a;
            crate::linalg::axpy(-a, y, &mut q);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for (i, (s, y, rho)) in self.pairs.iter().enumerate() {
            let b = rho * dot(y, &q);
            crate::linalg::axpy(alphas[i] - b, s, &mut q);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }
}

pub fn lbfgs_run<O: Objective + ?Sized>(
    obj: &O,
    x0: &[f64],
    history: usize,
    ctl: &StepControl,
    mut rec: Recorder<'_>,
) -> Result<RunResult> {
    if history == 0 {
        return arg("L-BFGS history must be >= 1");
    }
    let (mut x, mut f, mut g) = begin!(obj, x0, rec);
    let mut hist = LbfgsHistory::new(history);
    let mut failures = 0;
    loop {
        if rec.grad_converged(norm(&g)) {
            return rec.finish(Status::Converged, &x, Some(f));
        }
        let mut d = hist.direction(&g);
        if !(dot(&d, &g) < 0.0) {
            hist.clear();
            d = g.iter().map(|v| -v).collect();
        }
        let Some((a, _)) = search(obj, &x, f, &d, ctl.line_search.alpha_init, ctl) else {
            if !hist.is_empty() {
                hist.clear();
                continue;
            }
            failures += 1;
            if failures >= 2 {
                return rec.finish(Status::Stalled, &x, Some(f));
            }
            continue;
        };
        failures = 0;
        let xn = step_to(&x, &d, a);
        let Some((fn_, gn)) = finite_or_none(obj.value_grad(&xn))? else {
            return rec.finish(Status::Diverged, &xn, Some(f64::INFINITY));
        };
        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        hist.push(s, y);
        (x, f, g) = (xn, fn_, gn);
        if let Some(st) = rec.step(&x, Some(f), None)? {
            return rec.finish(st, &x, Some(f));
        }
    }
}

#[cfg(test)]
pub(crate) mod tests;
