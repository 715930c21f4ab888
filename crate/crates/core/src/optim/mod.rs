//! Optimizer families. Every runner takes a [`Recorder`](crate::trace::Recorder)
//! that owns the budget and the trace, and returns the final iterate with
//! its [`RunTrace`](crate::trace::RunTrace).

pub mod fullgrad;
pub mod gauss_newton;
pub mod global;
pub mod stochastic;

use crate::error::{Error, Result};
use crate::linalg::{quad_interp_linesearch, LineSearchResult};
use crate::problem::Objective;

/// `|<s, y>|` at or below this is treated as zero curvature.
pub const EPS_FLT: f64 = 7e-16;

/// `f(x + alpha d)` as a line function; evaluation failures read as `+inf`.
pub(crate) fn line_min<O: Objective + ?Sized>(
    obj: &O,
    x: &[f64],
    d: &[f64],
    f: f64,
    alpha_init: f64,
    max_evals: usize,
) -> LineSearchResult {
    let mut trial = x.to_vec();
    quad_interp_linesearch(
        |a| {
            for ((t, xi), di) in trial.iter_mut().zip(x).zip(d) {
                *t = xi + a * di;
            }
            obj.value(&trial).unwrap_or(f64::INFINITY)
        },
        f,
        alpha_init,
        max_evals,
    )
}

pub(crate) fn step_to(x: &[f64], d: &[f64], alpha: f64) -> Vec<f64> {
    x.iter().zip(d).map(|(xi, di)| xi + alpha * di).collect()
}

/// Maps a non-finite evaluation to `Ok(None)` so the caller can stop with
/// `Status::Diverged`.
pub(crate) fn finite_or_none<T>(r: Result<T>) -> Result<Option<T>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::NonFinite { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}
