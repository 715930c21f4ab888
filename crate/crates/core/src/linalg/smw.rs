use super::{Cholesky, Matrix};
use crate::error::{arg, Result};

/// `B^{-1} rhs` for `B = scale (I + gamma G G^T)`, `G` of size `n x p` with
/// `p <= n`, via `B^{-1} = (I - gamma G (I_p + gamma G^T G)^{-1} G^T) / scale`.
/// Costs `O(p^2 (n + p))`.
pub fn smw_solve(g: &Matrix, gamma: f64, scale: f64, rhs: &[f64]) -> Result<Vec<f64>> {
    let (n, p) = (g.rows(), g.cols());
    if rhs.len() != n {
        return arg("smw_solve: right-hand side length mismatch");
    }
    if p > n {
        return arg(format!("smw_solve needs p <= n, got p={p}, n={n}"));
    }
    if !(gamma > 0.0 && scale > 0.0) {
        return arg("smw_solve needs gamma > 0 and scale > 0");
    }
    let mut out: Vec<f64> = rhs.iter().map(|v| v / scale).collect();
    if p == 0 {
        return Ok(out);
    }
    let mut inner = g.gram();
    inner.scale(gamma);
    inner.add_diagonal(1.0);
    let t = Cholesky::new(&inner)?.solve(&g.tr_mul_vec(rhs));
    let corr = g.mul_vec(&t);
    super::axpy(-gamma / scale, &corr, &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::cholesky_solve;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn empty_and_zero_g() {
        let rhs = [2.0, -4.0];
        assert_eq!(smw_solve(&Matrix::zeros(2, 0), 1.0, 2.0, &rhs).unwrap(), vec![1.0, -2.0]);
        assert_eq!(smw_solve(&Matrix::zeros(2, 2), 3.0, 2.0, &rhs).unwrap(), vec![1.0, -2.0]);
    }

    #[test]
    fn matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = Matrix::from_fn(20, 5, |_, _| rng.gen_range(-1.0..1.0));
        let rhs: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (gamma, scale) = (0.7, 1.3);
        let mut b = g.outer_gram();
        b.scale(gamma * scale);
        b.add_diagonal(scale);
        let want = cholesky_solve(&b, &rhs).unwrap();
        let got = smw_solve(&g, gamma, scale, &rhs).unwrap();
        let err: f64 = got.iter().zip(&want).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(err < 1e-8 * crate::linalg::norm(&want));
    }

    #[test]
    fn rejects_wide() {
        assert!(smw_solve(&Matrix::zeros(2, 3), 1.0, 1.0, &[0.0, 0.0]).is_err());
    }
}
