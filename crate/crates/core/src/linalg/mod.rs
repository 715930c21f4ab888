//! Dense kernels: column-major matrices, Householder reflectors,
//! bidiagonalization, low-rank and Cholesky solves, and the
//! value-only line search shared by the optimizers.

mod bidiag;
mod chol;
mod householder;
mod linesearch;
mod matrix;
mod smw;

pub use bidiag::{bidiagonalize, BidiagFactorization};
pub use chol::{cholesky_solve, Cholesky};
pub use householder::{householder, reflector_to_axis, Reflector, ReflectorChain, Side};
pub use linesearch::{quad_interp_linesearch, LineSearch, LineSearchResult};
pub use matrix::Matrix;
pub use smw::smw_solve;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `y += alpha x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn max_abs(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}
