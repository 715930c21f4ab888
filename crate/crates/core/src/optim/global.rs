//! Global strategies: multistart local descent, simulated annealing and
//! differential evolution. The local descent inside annealing and evolution
//! is CG with the PRP+ rule.

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fullgrad::{cg_run, lbfgs_run, CgVariant, StepControl};
use crate::error::{arg, Result};
use crate::linalg::norm;
use crate::problem::Objective;
use crate::trace::{Budget, Recorder, RunResult, Status, ValueMonitor};

/// Axis-aligned box `lower <= x <= upper`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return arg("box bounds differ in length");
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l <= u)) {
            return arg("box needs lower <= upper in every coordinate");
        }
        Ok(Self { lower, upper })
    }

    /// `[lo, hi]^n`
    pub fn cube(n: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::new(vec![lo; n], vec![hi; n])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.lower).zip(&self.upper).all(|((v, l), u)| l <= v && v <= u)
    }

    /// Projects in place; returns whether anything moved.
    pub fn clip(&self, x: &mut [f64]) -> bool {
        let mut moved = false;
        for ((v, l), u) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            let c = v.clamp(*l, *u);
            moved |= c != *v;
            *v = c;
        }
        moved
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.lower.iter().zip(&self.upper).map(|(l, u)| if l == u { *l } else { rng.gen_range(*l..=*u) }).collect()
    }
}

/// Result of one multistart descent.
#[derive(Debug, Clone, PartialEq)]
pub struct StartOutcome {
    pub start: Vec<f64>,
    pub x: Vec<f64>,
    pub f: f64,
    pub status: Status,
}

/// L-BFGS from `n_starts` points drawn uniformly from `starts`; sorted by
/// final objective.
pub fn multistart<O: Objective + ?Sized>(
    obj: &O,
    n_starts: usize,
    starts: &BoxBounds,
    seed: u64,
    inner: Budget,
    history: usize,
) -> Result<Vec<StartOutcome>> {
    if n_starts == 0 {
        return arg("multistart needs at least one start");
    }
    if starts.dim() != obj.dim() {
        return arg("start box dimension differs from the problem");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec<f64>> = (0..n_starts).map(|_| starts.sample(&mut rng)).collect();
    multistart_from(obj, points, inner, history)
}

/// [`multistart`] from given points.
pub fn multistart_from<O: Objective + ?Sized>(
    obj: &O,
    points: Vec<Vec<f64>>,
    inner: Budget,
    history: usize,
) -> Result<Vec<StartOutcome>> {
    let mut out = Vec::with_capacity(points.len());
    for start in points {
        let mon = ValueMonitor(obj);
        let r = lbfgs_run(obj, &start, history, &StepControl::default(), Recorder::new(inner, &mon))?;
        let f = r.trace.last().f_value;
        out.push(StartOutcome { start, x: r.x, f, status: r.trace.status });
    }
    out.sort_by(|a, b| a.f.total_cmp(&b.f));
    Ok(out)
}

/// `K_CG` PRP+ iterations from `x`, projected back into the box.
fn local_descent<O: Objective + ?Sized>(
    obj: &O,
    x: Vec<f64>,
    fx: f64,
    k_cg: usize,
    bounds: &BoxBounds,
) -> Result<(Vec<f64>, f64)> {
    if k_cg == 0 {
        return Ok((x, fx));
    }
    let mon = ValueMonitor(obj);
    let rec = Recorder::new(Budget::iterations(k_cg as u64).with_grad_tol(0.0), &mon);
    let r = cg_run(obj, &x, CgVariant::PrpPlus, k_cg.max(1), &StepControl::default(), rec)?;
    let mut y = r.x;
    let mut fy = r.trace.last().f_value;
    if bounds.clip(&mut y) {
        fy = eval(obj, &y);
    }
    Ok(if fy.is_finite() { (y, fy) } else { (x, fx) })
}

fn eval<O: Objective + ?Sized>(obj: &O, x: &[f64]) -> f64 {
    obj.value(x).ok().filter(|v| v.is_finite()).unwrap_or(f64::INFINITY)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SaParams {
    /// Initial temperature.
    pub t0: f64,
    #[serde(rename = "K_CG")]
    pub k_cg: usize,
    #[serde(rename = "K_jump")]
    pub k_jump: u64,
    #[serde(rename = "D_jump")]
    pub d_jump: f64,
    /// Time limit in seconds.
    pub t_max: f64,
}

impl Default for SaParams {
    fn default() -> Self {
        Self { t0: 6.0, k_cg: 50, k_jump: 100, d_jump: 1.0, t_max: 600.0 }
    }
}

impl SaParams {
    pub fn validate(&self) -> Result<()> {
        if !(1.0..=1000.0).contains(&self.t0) {
            return arg("t0 must lie in [1, 1000]");
        }
        if self.k_cg > 1000 {
            return arg("K_CG must lie in [0, 1000]");
        }
        if !(1..=1000).contains(&self.k_jump) {
            return arg("K_jump must lie in [1, 1000]");
        }
        if !(self.d_jump == 0.0 || (1e-6..=1e3).contains(&self.d_jump)) {
            return arg("D_jump must be 0 or lie in [1e-6, 1e3]");
        }
        if !(self.t_max > 0.0) {
            return arg("t_max must be positive");
        }
        Ok(())
    }
}

/// Jump probability `(1/k)^(1/t0)` at iteration `k >= 1`.
pub fn jump_probability(k: u64, t0: f64) -> f64 {
    (1.0 / k.max(1) as f64).powf(1.0 / t0)
}

/// Simulated annealing. Trace rows carry the record `f*` (and the record
/// point goes to the monitor); `aux` is the current objective.
pub fn simulated_annealing<O: Objective + ?Sized>(
    obj: &O,
    x0: &[f64],
    params: &SaParams,
    bounds: &BoxBounds,
    seed: u64,
    mut rec: Recorder<'_>,
) -> Result<RunResult> {
    params.validate()?;
    if bounds.dim() != obj.dim() || x0.len() != obj.dim() {
        return arg("dimension mismatch between start, box and problem");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Uniform::new_inclusive(-1.0, 1.0);
    let mut x = x0.to_vec();
    bounds.clip(&mut x);
    let mut fx = eval(obj, &x);
    let (mut best, mut f_best) = (x.clone(), fx);
    if let Some(s) = rec.start(&best, Some(f_best))? {
        return rec.finish(s, &best, Some(f_best));
    }
    let mut k: u64 = 1;
    while rec.elapsed() <= params.t_max {
        let (xb, fb) = local_descent(obj, x.clone(), fx, params.k_cg, bounds)?;
        if fb < f_best {
            (best, f_best) = (xb.clone(), fb);
        }
        let jump = if fb < fx {
            (x, fx) = (xb, fb);
            k.is_multiple_of(params.k_jump) || rng.gen::<f64>() <= jump_probability(k, params.t0)
        } else {
            true
        };
        if jump {
            x = best.iter().map(|b| b + params.d_jump * unit.sample(&mut rng)).collect();
            bounds.clip(&mut x);
            fx = eval(obj, &x);
            if fx < f_best {
                (best, f_best) = (x.clone(), fx);
            }
        }
        k += 1;
        if let Some(s) = rec.step(&best, Some(f_best), Some(fx))? {
            return rec.finish(s, &best, Some(f_best));
        }
    }
    rec.finish(Status::Budget, &best, Some(f_best))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeParams {
    /// Population size.
    pub m: usize,
    #[serde(rename = "K_CG")]
    pub k_cg: usize,
    /// Mutation force.
    #[serde(rename = "F")]
    pub f: f64,
    /// Probability of keeping an individual unmutated.
    #[serde(rename = "CR")]
    pub cr: f64,
    pub eps_bio: f64,
    pub t_max: f64,
}

impl Default for DeParams {
    fn default() -> Self {
        Self { m: 20, k_cg: 50, f: 0.5, cr: 0.1, eps_bio: 1e-6, t_max: 600.0 }
    }
}

impl DeParams {
    pub fn validate(&self) -> Result<()> {
        if !(4..=1000).contains(&self.m) {
            return arg("population size m must lie in [4, 1000]");
        }
        if self.k_cg > 1000 {
            return arg("K_CG must lie in [0, 1000]");
        }
        if !(self.f >= 0.0 && self.f <= 1000.0) {
            return arg("F must lie in [0, 1000]");
        }
        if !(0.0..=1.0).contains(&self.cr) {
            return arg("CR must lie in [0, 1]");
        }
        if !(self.eps_bio >= 0.0) {
            return arg("eps_bio must be non-negative");
        }
        if !(self.t_max > 0.0) {
            return arg("t_max must be positive");
        }
        Ok(())
    }
}

/// Mean distance between consecutive individuals.
pub fn biodiversity(pop: &[Vec<f64>]) -> f64 {
    if pop.len() < 2 {
        return 0.0;
    }
    let s: f64 = pop
        .windows(2)
        .map(|w| norm(&w[1].iter().zip(&w[0]).map(|(a, b)| a - b).collect::<Vec<_>>()))
        .sum();
    s / (pop.len() - 1) as f64
}

/// Three distinct indices in `0..m`, all different from `l`.
fn pick_three<R: Rng>(rng: &mut R, m: usize, l: usize) -> [usize; 3] {
    let mut out = [usize::MAX; 3];
    let mut n = 0;
    while n < 3 {
        let j = rng.gen_range(0..m);
        if j != l && !out[..n].contains(&j) {
            out[n] = j;
            n += 1;
        }
    }
    out
}

/// Differential evolution. Trace rows carry the record `f*`; `aux` is the
/// population's biodiversity measure before each generation.
pub fn differential_evolution<O: Objective + ?Sized>(
    obj: &O,
    x0: &[f64],
    params: &DeParams,
    bounds: &BoxBounds,
    seed: u64,
    mut rec: Recorder<'_>,
) -> Result<RunResult> {
    params.validate()?;
    if bounds.dim() != obj.dim() || x0.len() != obj.dim() {
        return arg("dimension mismatch between start, box and problem");
    }
    let m = params.m;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut first = x0.to_vec();
    bounds.clip(&mut first);
    let (mut best, mut f_best) = (first.clone(), eval(obj, &first));
    if let Some(s) = rec.start(&best, Some(f_best))? {
        return rec.finish(s, &best, Some(f_best));
    }
    let mut pop: Vec<(Vec<f64>, f64)> = Vec::with_capacity(m);
    for i in 0..m {
        let p = if i == 0 { first.clone() } else { bounds.sample(&mut rng) };
        let fp = eval(obj, &p);
        pop.push(local_descent(obj, p, fp, params.k_cg, bounds)?);
    }
    for (p, fp) in &pop {
        if *fp < f_best {
            (best, f_best) = (p.clone(), *fp);
        }
    }
    while rec.elapsed() <= params.t_max {
        let xs: Vec<Vec<f64>> = pop.iter().map(|(p, _)| p.clone()).collect();
        let bio = biodiversity(&xs);
        if bio <= params.eps_bio {
            return rec.finish(Status::Converged, &best, Some(f_best));
        }
        let mut children = Vec::with_capacity(m);
        for l in 0..m {
            let (mut c, mut fc) = if rng.gen::<f64>() < params.cr {
                pop[l].clone()
            } else {
                let [j1, j2, j3] = pick_three(&mut rng, m, l);
                let mut c: Vec<f64> = (0..x0.len())
                    .map(|i| xs[j1][i] + params.f * (xs[j2][i] - xs[j3][i]))
                    .collect();
                bounds.clip(&mut c);
                let fc = eval(obj, &c);
                (c, fc)
            };
            (c, fc) = local_descent(obj, c, fc, params.k_cg, bounds)?;
            if fc < f_best {
                (best, f_best) = (c.clone(), fc);
            }
            children.push((c, fc));
        }
        pop = select(pop, children, m);
        if let Some(s) = rec.step(&best, Some(f_best), Some(bio))? {
            return rec.finish(s, &best, Some(f_best));
        }
    }
    rec.finish(Status::Budget, &best, Some(f_best))
}

/// The `m` best of `parents ∪ children`; exact duplicates are taken only
/// when there are fewer than `m` distinct vectors.
fn select(parents: Vec<(Vec<f64>, f64)>, children: Vec<(Vec<f64>, f64)>, m: usize) -> Vec<(Vec<f64>, f64)> {
    let mut all: Vec<(Vec<f64>, f64)> = parents.into_iter().chain(children).collect();
    all.sort_by(|a, b| a.1.total_cmp(&b.1));
    let mut keep = Vec::with_capacity(m);
    let mut dupes = Vec::new();
    for ind in all {
        if keep.len() < m && !keep.iter().any(|(p, _): &(Vec<f64>, f64)| *p == ind.0) {
            keep.push(ind);
        } else {
            dupes.push(ind);
        }
    }
    keep.extend(dupes.into_iter().take(m - keep.len()));
    keep.sort_by(|a, b| a.1.total_cmp(&b.1));
    keep
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum GlobalMethod {
    Sa(SaParams),
    De(DeParams),
}
