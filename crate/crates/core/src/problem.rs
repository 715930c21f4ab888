//! Optimizer-facing problem traits and small analytic test problems.

use crate::error::{arg, Result};
use crate::linalg::{dot, Matrix};

/// A smooth scalar objective on `R^n`.
pub trait Objective {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> Result<f64>;

    fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Residual form `F: R^n -> R^m_res`. The companion [`Objective`] is a
/// fixed positive multiple of `f2 = |F|^2` (see [`objective_from_f2`]).
///
/// [`objective_from_f2`]: LeastSquares::objective_from_f2
pub trait LeastSquares: Objective {
    fn residual_count(&self) -> usize;

    fn residuals(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// `n x |idx|` matrix whose column `j` is the gradient of residual
    /// `idx[j]`. Indices must be in range and distinct.
    fn jacobian_rows(&self, x: &[f64], idx: &[usize]) -> Result<Matrix>;

    fn objective_from_f2(&self, f2: f64) -> f64;

    fn jacobian(&self, x: &[f64]) -> Result<Matrix> {
        let idx: Vec<usize> = (0..self.residual_count()).collect();
        self.jacobian_rows(x, &idx)
    }

    /// `(f2, grad f2)` with `grad f2 = 2 J^T F`.
    fn grad_f2(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let f = self.residuals(x)?;
        let j = self.jacobian(x)?;
        let mut g = j.mul_vec(&f);
        g.iter_mut().for_each(|v| *v *= 2.0);
        Ok((dot(&f, &f), g))
    }
}

/// Objective that is an average over `sample_count` terms.
pub trait Sampled: Objective {
    fn sample_count(&self) -> usize;

    /// Average of the selected terms and its gradient.
    fn batch_value_grad(&self, x: &[f64], batch: &[usize]) -> Result<(f64, Vec<f64>)>;
}

pub(crate) fn check_indices(idx: &[usize], count: usize) -> Result<()> {
    let mut seen = vec![false; count];
    for &i in idx {
        if i >= count {
            return arg(format!("index {i} out of range (count {count})"));
        }
        if std::mem::replace(&mut seen[i], true) {
            return arg(format!("duplicate index {i}"));
        }
    }
    Ok(())
}

/// Central differences with step `h_rel * max(1, |x_i|)`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> Result<f64>, x: &[f64], h_rel: f64) -> Result<Vec<f64>> {
    let mut xp = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let h = h_rel * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let fp = f(&xp)?;
        xp[i] = x[i] - h;
        let fm = f(&xp)?;
        xp[i] = x[i];
        g.push((fp - fm) / (2.0 * h));
    }
    Ok(g)
}

/// `max_i |g_i - fd_i| / max(|fd_i|, 1e-4 |fd|_inf)`.
pub fn max_relative_error(g: &[f64], fd: &[f64]) -> f64 {
    let scale = crate::linalg::max_abs(fd);
    g.iter()
        .zip(fd)
        .map(|(a, b)| {
            let den = b.abs().max(1e-4 * scale);
            if den == 0.0 {
                (a - b).abs()
            } else {
                (a - b).abs() / den
            }
        })
        .fold(0.0, f64::max)
}

/// `f(x) = x^T A x / 2 - b^T x`.
#[derive(Debug, Clone)]
pub struct Quadratic {
    pub a: Matrix,
    pub b: Vec<f64>,
}

impl Objective for Quadratic {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(0.5 * dot(x, &self.a.mul_vec(x)) - dot(&self.b, x))
    }

    fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let ax = self.a.mul_vec(x);
        let f = 0.5 * dot(x, &ax) - dot(&self.b, x);
        let g = ax.iter().zip(&self.b).map(|(p, q)| p - q).collect();
        Ok((f, g))
    }
}

/// `F(x) = A x - b + (kappa / 2) |x|^2 u`; the Jacobian `A + kappa u x^T`
/// is `kappa |u|`-Lipschitz. `kappa = 0` gives plain linear least squares.
/// The objective is `f2`.
#[derive(Debug, Clone)]
pub struct CurvedLeastSquares {
    pub a: Matrix,
    pub b: Vec<f64>,
    pub u: Vec<f64>,
    pub kappa: f64,
}

impl CurvedLeastSquares {
    pub fn linear(a: Matrix, b: Vec<f64>) -> Self {
        let u = vec![0.0; b.len()];
        Self { a, b, u, kappa: 0.0 }
    }
}

impl Objective for CurvedLeastSquares {
    fn dim(&self) -> usize {
        self.a.cols()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        let f = self.residuals(x)?;
        Ok(dot(&f, &f))
    }

    fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.grad_f2(x)
    }
}

impl LeastSquares for CurvedLeastSquares {
    fn residual_count(&self) -> usize {
        self.a.rows()
    }

    fn residuals(&self, x: &[f64]) -> Result<Vec<f64>> {
        let q = 0.5 * self.kappa * dot(x, x);
        Ok(self.a.mul_vec(x).iter().zip(&self.b).zip(&self.u).map(|((ax, b), u)| ax - b + q * u).collect())
    }

    fn jacobian_rows(&self, x: &[f64], idx: &[usize]) -> Result<Matrix> {
        check_indices(idx, self.residual_count())?;
        let n = self.dim();
        Ok(Matrix::from_fn(n, idx.len(), |k, j| {
            let i = idx[j];
            self.a[(i, k)] + self.kappa * self.u[i] * x[k]
        }))
    }

    fn objective_from_f2(&self, f2: f64) -> f64 {
        f2
    }
}

impl Sampled for CurvedLeastSquares {
    fn sample_count(&self) -> usize {
        self.residual_count()
    }

    fn batch_value_grad(&self, x: &[f64], batch: &[usize]) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return arg("empty batch");
        }
        let f = self.residuals(x)?;
        let j = self.jacobian_rows(x, batch)?;
        let fb: Vec<f64> = batch.iter().map(|&i| f[i]).collect();
        let s = 1.0 / batch.len() as f64;
        let mut g = j.mul_vec(&fb);
        g.iter_mut().for_each(|v| *v *= 2.0 * s);
        Ok((s * dot(&fb, &fb), g))
    }
}

/// Rosenbrock in residual form `F = (10 (x2 - x1^2), 1 - x1)`; objective `f2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Rosenbrock;

impl Objective for Rosenbrock {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        let f = self.residuals(x)?;
        Ok(dot(&f, &f))
    }

    fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.grad_f2(x)
    }
}

impl LeastSquares for Rosenbrock {
    fn residual_count(&self) -> usize {
        2
    }

    fn residuals(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![10.0 * (x[1] - x[0] * x[0]), 1.0 - x[0]])
    }

    fn jacobian_rows(&self, x: &[f64], idx: &[usize]) -> Result<Matrix> {
        check_indices(idx, 2)?;
        let cols: Vec<Vec<f64>> = idx
            .iter()
            .map(|&i| if i == 0 { vec![-20.0 * x[0], 10.0] } else { vec![-1.0, 0.0] })
            .collect();
        Ok(Matrix::from_columns(2, &cols))
    }

    fn objective_from_f2(&self, f2: f64) -> f64 {
        f2
    }
}

/// `10 n + sum (x_i^2 - 10 cos(2 pi x_i))`; global minimum 0 at the origin.
#[derive(Debug, Clone, Copy)]
pub struct Rastrigin {
    pub n: usize,
}

impl Objective for Rastrigin {
    fn dim(&self) -> usize {
        self.n
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        use std::f64::consts::TAU;
        Ok(10.0 * x.len() as f64 + x.iter().map(|v| v * v - 10.0 * (TAU * v).cos()).sum::<f64>())
    }

    fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        use std::f64::consts::TAU;
        let g = x.iter().map(|v| 2.0 * v + 10.0 * TAU * (TAU * v).sin()).collect();
        Ok((self.value(x)?, g))
    }
}
