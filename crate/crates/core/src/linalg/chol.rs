use super::Matrix;
use crate::error::{arg, Error, Result};

/// Lower Cholesky factor of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Matrix,
}

/// Pivots at or below this multiple of the largest diagonal entry count as
/// loss of definiteness.
const PIVOT_TOL: f64 = 1e-14;

impl Cholesky {
    /// Reads only the lower triangle of `a`.
    pub fn new(a: &Matrix) -> Result<Self> {
        let n = a.rows();
        if a.cols() != n {
            return arg("cholesky needs a square matrix");
        }
        let dmax = (0..n).fold(0.0f64, |m, i| m.max(a[(i, i)].abs()));
        let tol = PIVOT_TOL * dmax.max(f64::MIN_POSITIVE);
        let mut l = a.clone();
        for j in 0..n {
            let mut d = l[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > tol) || !d.is_finite() {
                return Err(Error::Numerical(format!("matrix is not positive definite (pivot {j})")));
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in j + 1..n {
                let mut s = l[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
            for i in 0..j {
                l[(i, j)] = 0.0;
            }
        }
        Ok(Self { l })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.rows();
        assert_eq!(b.len(), n);
        let l = &self.l;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..n {
                s -= l[(k, i)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        y
    }
}

/// Solves `A x = b` for symmetric positive definite `A`; a non-positive
/// pivot yields `Error::Numerical`.
pub fn cholesky_solve(a: &Matrix, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != a.rows() {
        return arg("cholesky_solve: right-hand side length mismatch");
    }
    Ok(Cholesky::new(a)?.solve(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_and_indefinite() {
        let b = [1.0, -2.0, 3.0];
        assert_eq!(cholesky_solve(&Matrix::identity(3), &b).unwrap(), b.to_vec());
        let mut a = Matrix::identity(2);
        a[(1, 1)] = -1.0;
        assert!(matches!(cholesky_solve(&a, &[1.0, 1.0]), Err(Error::Numerical(_))));
    }

    #[test]
    fn random_pd_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = Matrix::from_fn(30, 30, |_, _| rng.gen_range(-1.0..1.0));
        let mut a = g.gram();
        a.add_diagonal(0.1);
        let b: Vec<f64> = (0..30).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = cholesky_solve(&a, &b).unwrap();
        let r: Vec<f64> = a.mul_vec(&x).iter().zip(&b).map(|(p, q)| p - q).collect();
        assert!(super::super::norm(&r) <= 1e-8 * super::super::norm(&b));
    }
}
