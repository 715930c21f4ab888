/// Settings of [`quad_interp_linesearch`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearch {
    pub alpha_init: f64,
    pub max_evals: usize,
}

impl Default for LineSearch {
    fn default() -> Self {
        Self { alpha_init: 1.0, max_evals: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchResult {
    /// `0` when no trial decreased `phi`.
    pub alpha: f64,
    /// `phi(alpha)`
    pub value: f64,
    pub evals: usize,
}

const GROWTH: f64 = 2.0;
const REL_TOL: f64 = 1e-10;

/// Minimizes `phi` over `alpha >= 0` with at most `max_evals` evaluations:
/// brackets by doubling or halving from `alpha_init`, then repeatedly jumps
/// to the vertex of the parabola through the bracket triple, bisecting when
/// the parabola is degenerate or the vertex leaves the bracket. Non-finite
/// values count as `+inf`.
pub fn quad_interp_linesearch(
    mut phi: impl FnMut(f64) -> f64,
    phi0: f64,
    alpha_init: f64,
    max_evals: usize,
) -> LineSearchResult {
    let max_evals = max_evals.max(1);
    let mut evals = 0;
    let mut eval = |a: f64, evals: &mut usize| {
        *evals += 1;
        let v = phi(a);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    let fail = |evals| LineSearchResult { alpha: 0.0, value: phi0, evals };
    let alpha_init = if alpha_init > 0.0 && alpha_init.is_finite() { alpha_init } else { 1.0 };

    // bracket (a0, a1, a2) with f1 < f0 and f1 <= f2
    let (mut a0, mut f0) = (0.0, phi0);
    let (mut a1, mut f1) = (alpha_init, eval(alpha_init, &mut evals));
    let (mut a2, mut f2);
    if f1 < f0 {
        a2 = GROWTH * a1;
        if evals >= max_evals {
            return LineSearchResult { alpha: a1, value: f1, evals };
        }
        f2 = eval(a2, &mut evals);
        while f2 < f1 {
            if evals >= max_evals {
                return LineSearchResult { alpha: a2, value: f2, evals };
            }
            (a0, f0, a1, f1) = (a1, f1, a2, f2);
            a2 = GROWTH * a1;
            f2 = eval(a2, &mut evals);
        }
    } else {
        loop {
            if evals >= max_evals {
                return fail(evals);
            }
            (a2, f2) = (a1, f1);
            a1 = 0.5 * a2;
            f1 = eval(a1, &mut evals);
            if f1 < f0 {
                break;
            }
        }
    }

    while evals < max_evals && a2 - a0 > REL_TOL * a1 {
        let (d0, d2) = (a1 - a0, a1 - a2);
        let num = d0 * d0 * (f1 - f2) - d2 * d2 * (f1 - f0);
        let den = d0 * (f1 - f2) - d2 * (f1 - f0);
        let mut t = if den < 0.0 { a1 - 0.5 * num / den } else { f64::NAN };
        if !(t > a0 && t < a2) {
            t = if a1 - a0 > a2 - a1 { 0.5 * (a0 + a1) } else { 0.5 * (a1 + a2) };
        } else if (t - a1).abs() <= REL_TOL * a1 {
            break;
        }
        let ft = eval(t, &mut evals);
        if ft < f1 {
            if t < a1 {
                (a2, f2) = (a1, f1);
            } else {
                (a0, f0) = (a1, f1);
            }
            (a1, f1) = (t, ft);
        } else if t < a1 {
            (a0, f0) = (t, ft);
        } else {
            (a2, f2) = (t, ft);
        }
    }
    LineSearchResult { alpha: a1, value: f1, evals }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_on_quadratic() {
        let mut n = 0;
        let r = quad_interp_linesearch(|a| { n += 1; (a - 2.0) * (a - 2.0) }, 4.0, 1.0, 10);
        assert!((r.alpha - 2.0).abs() < 1e-6);
        assert!(r.evals <= 6 && n == r.evals);
    }

    #[test]
    fn off_grid_quadratic() {
        let r = quad_interp_linesearch(|a| (a - 0.3) * (a - 0.3) - 1.0, -0.91, 1.0, 10);
        assert!((r.alpha - 0.3).abs() < 1e-9, "{r:?}");
    }

    #[test]
    fn increasing_gives_zero() {
        let r = quad_interp_linesearch(|a| a, 0.0, 1.0, 10);
        assert_eq!(r.alpha, 0.0);
        assert_eq!(r.evals, 10);
    }

    #[test]
    fn unbounded_descent_is_clamped() {
        let r = quad_interp_linesearch(|a| -a, 0.0, 1.0, 10);
        assert!(r.alpha.is_finite() && r.alpha == 512.0);
        assert_eq!(r.evals, 10);
    }

    #[test]
    fn non_finite_counts_as_infinite() {
        let r = quad_interp_linesearch(|a| if a > 0.5 { f64::NAN } else { (a - 0.25).powi(2) }, 0.0625, 1.0, 10);
        assert!(r.alpha > 0.0 && r.alpha <= 0.5 && r.value < 0.0625);
    }
}
