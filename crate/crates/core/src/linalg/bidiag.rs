use super::householder::{reflector_to_axis, ReflectorChain, Side};
use super::Matrix;
use crate::error::{arg, Result};

/// `G = U Lambda V` for an `n x p` matrix with `p > n`. `U` (`n x n`) and
/// `V` (first `n` rows of a `p x p` orthogonal matrix) stay in reflector
/// form; `Lambda` is lower bidiagonal.
#[derive(Debug, Clone)]
pub struct BidiagFactorization {
    n: usize,
    p: usize,
    /// Left reflectors `L_0, L_1, ...`; `U = L_0 L_1 ...`.
    pub u: ReflectorChain,
    /// Right reflectors `R_0, R_1, ...`; `V = [I 0] R_{n-1} ... R_0`.
    pub v: ReflectorChain,
    /// `Lambda[i][i]`
    pub diag: Vec<f64>,
    /// `Lambda[i+1][i]`
    pub sub: Vec<f64>,
}

/// Householder bidiagonalization: step `i` reflects row `i` (columns
/// `i..`) onto its first entry, then column `i` (rows `i+1..`) likewise.
pub fn bidiagonalize(g: &Matrix) -> Result<BidiagFactorization> {
    let (n, p) = (g.rows(), g.cols());
    if n == 0 || p <= n {
        return arg(format!("bidiagonalize needs p > n >= 1, got {n}x{p}"));
    }
    if g.as_slice().iter().any(|v| !v.is_finite()) {
        return arg("bidiagonalize: matrix has non-finite entries");
    }
    // row-major working copy: right reflectors act on contiguous rows
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| g.row(i)).collect();
    let mut u = ReflectorChain::new();
    let mut v = ReflectorChain::new();
    let mut diag = vec![0.0; n];
    let mut sub = vec![0.0; n.saturating_sub(1)];
    for i in 0..n {
        let (r, beta) = reflector_to_axis(&a[i][i..]);
        if let Some(r) = r {
            for row in a.iter_mut().skip(i + 1) {
                r.apply(&mut row[i..]);
            }
            v.push(Side::Right, i, r);
        }
        diag[i] = beta;
        a[i][i + 1..].iter_mut().for_each(|x| *x = 0.0);
        a[i][i] = beta;
        if i + 1 < n {
            let col: Vec<f64> = (i + 1..n).map(|k| a[k][i]).collect();
            let (r, beta) = reflector_to_axis(&col);
            if let Some(r) = r {
                // H applied to every column at once, sweeping contiguous rows:
                // s = w^T A, then A -= beta w s
                let mut s = vec![0.0; p - i - 1];
                for (wk, row) in r.w().iter().zip(&a[i + 1..]) {
                    super::axpy(*wk, &row[i + 1..], &mut s);
                }
                for (wk, row) in r.w().iter().zip(&mut a[i + 1..]) {
                    super::axpy(-r.beta() * wk, &s, &mut row[i + 1..]);
                }
                u.push(Side::Left, i + 1, r);
            }
            sub[i] = beta;
            for k in i + 2..n {
                a[k][i] = 0.0;
            }
            a[i + 1][i] = beta;
        }
    }
    Ok(BidiagFactorization { n, p, u, v, diag, sub })
}

impl BidiagFactorization {
    pub fn n(&self) -> usize {
        self.n
    }

    /// `U x`
    pub fn apply_u(&self, x: &mut [f64]) {
        self.u.apply_reverse(x);
    }

    /// `U^T x`
    pub fn apply_ut(&self, x: &mut [f64]) {
        self.u.apply_forward(x);
    }

    /// Dense `Lambda`.
    pub fn lambda(&self) -> Matrix {
        let mut l = Matrix::zeros(self.n, self.n);
        for i in 0..self.n {
            l[(i, i)] = self.diag[i];
            if i + 1 < self.n {
                l[(i + 1, i)] = self.sub[i];
            }
        }
        l
    }

    /// Dense `U Lambda V`.
    pub fn reconstruct(&self) -> Matrix {
        let (n, p) = (self.n, self.p);
        let lam = self.lambda();
        let mut rows: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut r = lam.row(i);
                r.resize(p, 0.0);
                // row vector times R_{n-1} ... R_0, reflectors are symmetric
                self.v.apply_reverse(&mut r);
                r
            })
            .collect();
        let mut col = vec![0.0; n];
        for j in 0..p {
            for i in 0..n {
                col[i] = rows[i][j];
            }
            self.apply_u(&mut col);
            for i in 0..n {
                rows[i][j] = col[i];
            }
        }
        Matrix::from_fn(n, p, |i, j| rows[i][j])
    }

    /// Solves `(c Lambda Lambda^T + tau I) w = r` by tridiagonal Cholesky.
    pub fn solve_shifted_gram(&self, c: f64, tau: f64, r: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        // T = c L L^T + tau I: diagonal d_i = c (a_i^2 + b_{i-1}^2) + tau,
        // off-diagonal e_i = c a_i b_i
        let mut d: Vec<f64> = (0..n)
            .map(|i| {
                let b = if i > 0 { self.sub[i - 1] } else { 0.0 };
                c * (self.diag[i] * self.diag[i] + b * b) + tau
            })
            .collect();
        let e: Vec<f64> = (0..n.saturating_sub(1)).map(|i| c * self.diag[i] * self.sub[i]).collect();
        let mut l = vec![0.0; e.len()];
        for i in 0..n {
            if i > 0 {
                l[i - 1] = e[i - 1] / d[i - 1];
                d[i] -= l[i - 1] * e[i - 1];
            }
            if !(d[i] > 0.0) {
                return Err(crate::Error::Numerical("tridiagonal system is not positive definite".into()));
            }
        }
        let mut w = r.to_vec();
        for i in 1..n {
            w[i] -= l[i - 1] * w[i - 1];
        }
        for i in 0..n {
            w[i] /= d[i];
        }
        for i in (0..n.saturating_sub(1)).rev() {
            w[i] -= l[i] * w[i + 1];
        }
        Ok(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn off_bidiag_mass(l: &Matrix) -> f64 {
        let mut s = 0.0;
        for i in 0..l.rows() {
            for j in 0..l.cols() {
                if !(i == j || i == j + 1) {
                    s += l[(i, j)] * l[(i, j)];
                }
            }
        }
        s.sqrt()
    }

    #[test]
    fn random_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Matrix::from_fn(4, 9, |_, _| rng.gen_range(-1.0..1.0));
        let f = bidiagonalize(&g).unwrap();
        assert!(f.reconstruct().sub(&g).frobenius() / g.frobenius() < 1e-12);
        assert!(off_bidiag_mass(&f.lambda()) < 1e-12);
    }

    #[test]
    fn already_bidiagonal_needs_no_reflectors() {
        let g = Matrix::from_fn(3, 5, |i, j| match (i, j) {
            (0, 0) => 2.0,
            (1, 0) => 1.0,
            (1, 1) => 3.0,
            (2, 1) => -1.0,
            (2, 2) => 4.0,
            _ => 0.0,
        });
        let f = bidiagonalize(&g).unwrap();
        assert!(f.u.is_empty() && f.v.is_empty());
        let lam = f.lambda();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(lam[(i, j)], g[(i, j)]);
            }
        }
    }

    #[test]
    fn rank_one_row() {
        let v = [1.0, -2.0, 2.0, 0.5, 0.0];
        let g = Matrix::from_fn(3, 5, |i, j| if i == 0 { v[j] } else { 0.0 });
        let f = bidiagonalize(&g).unwrap();
        let nv = super::super::norm(&v);
        assert!((f.diag[0].abs() - nv).abs() < 1e-14);
        let lam = f.lambda();
        let rest: f64 = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).filter(|&p| p != (0, 0)).map(|p| lam[p].abs()).sum();
        assert!(rest < 1e-14);
        assert!(f.reconstruct().sub(&g).frobenius() < 1e-13);
    }

    #[test]
    fn rejects_tall() {
        assert!(bidiagonalize(&Matrix::zeros(3, 3)).is_err());
    }

    #[test]
    fn shifted_gram_solve_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let n = rng.gen_range(1..10);
            let p = rng.gen_range(n + 1..3 * n + 3);
            let g = Matrix::from_fn(n, p, |_, _| rng.gen_range(-1.0..1.0));
            let c = rng.gen_range(0.1..3.0);
            let tau = rng.gen_range(0.01..2.0);
            let rhs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let f = bidiagonalize(&g).unwrap();
            // B^{-1} r = U (c LL^T + tau)^{-1} U^T r
            let mut t = rhs.clone();
            f.apply_ut(&mut t);
            let mut w = f.solve_shifted_gram(c, tau, &t).unwrap();
            f.apply_u(&mut w);
            let mut b = g.outer_gram();
            b.scale(c);
            b.add_diagonal(tau);
            let back = b.mul_vec(&w);
            let err: f64 = back.iter().zip(&rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(err < 1e-10 * (1.0 + super::super::norm(&rhs)));
        }
    }
}
