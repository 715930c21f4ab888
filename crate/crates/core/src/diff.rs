//! Loss, residuals and exact derivatives of the model on a dataset.
//!
//! The loss is `f = f2 / m` with `f2 = sum_k |y_k - target_k|^2`; the real
//! residual vector has `m_res = 2m` entries, residual `2k` being the real and
//! `2k + 1` the imaginary part of sample `k`'s error.

use num_complex::Complex64;

use crate::error::{arg, Result};
use crate::linalg::Matrix;
use crate::model::{layer_supports, ModelConfig, Scratch, Support, Tape};
use crate::problem::{check_indices, LeastSquares, Objective, Sampled};
use crate::signal::{nmse_from_powers, Dataset};
use crate::trace::{Monitor, Observation};

type C = Complex64;

/// Immutable evaluator for one (model config, dataset) pair.
#[derive(Debug, Clone)]
pub struct ResidualSystem {
    config: ModelConfig,
    input: Vec<C>,
    target: Vec<C>,
    input_power: f64,
}

fn to_real(g: &[C]) -> Vec<f64> {
    g.iter().flat_map(|z| [z.re, z.im]).collect()
}

impl ResidualSystem {
    pub fn new(config: ModelConfig, data: &Dataset) -> Result<Self> {
        config.validate()?;
        let input = data.input().samples().to_vec();
        let input_power = data.input().power();
        Ok(Self { config, input, target: data.target().samples().to_vec(), input_power })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Number of complex samples `m`.
    pub fn samples(&self) -> usize {
        self.input.len()
    }

    fn check(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.config.real_dim() {
            return arg(format!(
                "parameter vector has {} reals, model needs {}",
                theta.len(),
                self.config.real_dim()
            ));
        }
        Ok(())
    }

    fn tape(&self, theta: &[f64], out: Option<&Support>) -> Result<Tape> {
        self.check(theta)?;
        Tape::record(&self.config, theta, &self.input, out)
    }

    pub fn predict(&self, theta: &[f64]) -> Result<Vec<C>> {
        Ok(self.tape(theta, None)?.into_output())
    }

    /// `f2 = sum_k |y_k - target_k|^2`.
    pub fn f2(&self, theta: &[f64]) -> Result<f64> {
        let y = self.predict(theta)?;
        Ok(y.iter().zip(&self.target).map(|(a, b)| (a - b).norm_sqr()).sum())
    }

    /// NMSE (dB) of the model output against the target, normalized by the
    /// input power.
    pub fn nmse_db(&self, theta: &[f64]) -> Result<f64> {
        self.nmse_from_loss(self.value(theta)?)
    }

    /// NMSE (dB) for a known loss value `f = f2 / m`.
    pub fn nmse_from_loss(&self, loss: f64) -> Result<f64> {
        nmse_from_powers(loss * self.samples() as f64, self.input_power)
    }

    /// `(f, grad f)` by one full reverse sweep.
    pub fn loss_and_grad(&self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let all: Vec<usize> = (0..self.samples()).collect();
        self.subset_loss_grad(theta, &all, true)
    }

    /// Average of `|y_k - target_k|^2` over `samples` and its gradient.
    pub fn minibatch_grad(&self, theta: &[f64], samples: &[usize]) -> Result<(f64, Vec<f64>)> {
        if samples.is_empty() {
            return arg("empty batch");
        }
        check_indices(samples, self.samples())?;
        self.subset_loss_grad(theta, samples, false)
    }

    fn subset_loss_grad(&self, theta: &[f64], samples: &[usize], full: bool) -> Result<(f64, Vec<f64>)> {
        let m = self.samples();
        let sup = if full { Support::full(m) } else { Support::from_indices(samples) };
        let tape = self.tape(theta, if full { None } else { Some(&sup) })?;
        let y = tape.output();
        let scale = 1.0 / samples.len() as f64;
        let mut scratch = Scratch::new(m);
        let mut loss = 0.0;
        for &k in samples {
            let r = y[k] - self.target[k];
            loss += r.norm_sqr();
            scratch.ob[k] = r * (2.0 * scale);
        }
        let mut grad = vec![C::new(0.0, 0.0); self.config.param_count()];
        tape.backward(tape.supports(), &mut scratch, &mut grad);
        Ok((loss * scale, to_real(&grad)))
    }
}

impl Objective for ResidualSystem {
    fn dim(&self) -> usize {
        self.config.real_dim()
    }

    fn value(&self, x: &[f64]) -> Result<f64> {
        Ok(self.f2(x)? / self.samples() as f64)
    }

    fn value_grad(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        self.loss_and_grad(x)
    }
}

impl LeastSquares for ResidualSystem {
    fn residual_count(&self) -> usize {
        2 * self.samples()
    }

    fn residuals(&self, x: &[f64]) -> Result<Vec<f64>> {
        let y = self.predict(x)?;
        Ok(y.iter().zip(&self.target).flat_map(|(a, b)| {
            let r = a - b;
            [r.re, r.im]
        }).collect())
    }

    /// One windowed reverse sweep per requested residual.
    fn jacobian_rows(&self, x: &[f64], idx: &[usize]) -> Result<Matrix> {
        check_indices(idx, self.residual_count())?;
        let m = self.samples();
        let n = self.dim();
        let tape = self.tape(x, None)?;
        let mut scratch = Scratch::new(m);
        let mut grad = vec![C::new(0.0, 0.0); self.config.param_count()];
        let mut out = Matrix::zeros(n, idx.len());
        for (col, &i) in idx.iter().enumerate() {
            let k = i / 2;
            let sups = layer_supports(&self.config, m, &Support::single(k));
            scratch.ob[k] = if i % 2 == 0 { C::new(1.0, 0.0) } else { C::new(0.0, 1.0) };
            grad.iter_mut().for_each(|g| *g = C::new(0.0, 0.0));
            tape.backward(&sups, &mut scratch, &mut grad);
            for (dst, g) in out.col_mut(col).chunks_exact_mut(2).zip(&grad) {
                dst[0] = g.re;
                dst[1] = g.im;
            }
        }
        Ok(out)
    }

    fn objective_from_f2(&self, f2: f64) -> f64 {
        f2 / self.samples() as f64
    }

    fn grad_f2(&self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let (f, mut g) = self.loss_and_grad(x)?;
        let m = self.samples() as f64;
        g.iter_mut().for_each(|v| *v *= m);
        Ok((f * m, g))
    }
}

impl Sampled for ResidualSystem {
    fn sample_count(&self) -> usize {
        self.samples()
    }

    fn batch_value_grad(&self, x: &[f64], batch: &[usize]) -> Result<(f64, Vec<f64>)> {
        self.minibatch_grad(x, batch)
    }
}

/// Trace monitor reporting the train loss with train and validation NMSE.
pub struct NmseMonitor<'a> {
    pub train: &'a ResidualSystem,
    pub val: Option<&'a ResidualSystem>,
}

impl Monitor for NmseMonitor<'_> {
    fn observe(&self, x: &[f64], f_hint: Option<f64>) -> Result<Observation> {
        let f = match f_hint {
            Some(f) => f,
            None => self.train.value(x)?,
        };
        let train_db = if f.is_finite() { Some(self.train.nmse_from_loss(f)?) } else { None };
        let val_db = match self.val {
            Some(v) => Some(v.nmse_db(x)?),
            None => None,
        };
        Ok(Observation { f, train_db, val_db })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;
    use crate::model::{forward, init_xavier, LayerConfig};
    use crate::problem::{fd_gradient, max_relative_error};
    use crate::signal::{ComplexSignal, ParamVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn layer() -> LayerConfig {
        LayerConfig { blocks: 2, cs_width: 3, lut_width: 3, branch_width: 3, branches: 2, gain_order: 2 }
    }

    fn system(seed: u64, m: usize, residual: bool) -> (ResidualSystem, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = ModelConfig::uniform(2, layer(), residual);
        let theta: Vec<f64> = init_xavier(&cfg, seed).unwrap().into_values().iter().map(|v| v * 0.5).collect();
        let sig = |rng: &mut ChaCha8Rng| {
            ComplexSignal::new((0..m).map(|_| C::new(rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8))).collect())
                .unwrap()
        };
        let data = Dataset::new(sig(&mut rng), sig(&mut rng)).unwrap();
        (ResidualSystem::new(cfg, &data).unwrap(), theta)
    }

    #[test]
    fn gradient_matches_fd() {
        for seed in 0..4 {
            let (s, theta) = system(seed, 32, seed % 2 == 0);
            let (_, g) = s.loss_and_grad(&theta).unwrap();
            let fd = fd_gradient(|t| s.value(t), &theta, 1e-6).unwrap();
            assert!(max_relative_error(&g, &fd) < 1e-5, "seed {seed}");
        }
    }

    #[test]
    fn interpolation_gives_zero_loss() {
        let (s, theta) = system(7, 24, true);
        let y = forward(&ParamVector::from_values(theta.clone()).unwrap(), &ComplexSignal::new(s.input.clone()).unwrap(), s.config()).unwrap();
        let data = Dataset::new(ComplexSignal::new(s.input.clone()).unwrap(), y).unwrap();
        let exact = ResidualSystem::new(s.config().clone(), &data).unwrap();
        let (f, g) = exact.loss_and_grad(&theta).unwrap();
        assert_eq!(f, 0.0);
        assert!(g.iter().all(|v| v.abs() < 1e-12));
        assert!(exact.residuals(&theta).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shifted_target_gives_two_entries() {
        let (s, theta) = system(8, 16, false);
        let y = s.predict(&theta).unwrap();
        let mut t = y.clone();
        t[5] += C::new(1.0, 0.0);
        let data = Dataset::new(ComplexSignal::new(s.input.clone()).unwrap(), ComplexSignal::new(t).unwrap()).unwrap();
        let sys = ResidualSystem::new(s.config().clone(), &data).unwrap();
        let r = sys.residuals(&theta).unwrap();
        let nz: Vec<(usize, f64)> = r.iter().cloned().enumerate().filter(|(_, v)| *v != 0.0).collect();
        assert_eq!(nz, vec![(10, -1.0)]);
    }

    #[test]
    fn residual_norm_matches_loss() {
        let (s, theta) = system(9, 32, true);
        let r = s.residuals(&theta).unwrap();
        let (f, _) = s.loss_and_grad(&theta).unwrap();
        assert!((dot(&r, &r) / 32.0 - f).abs() < 1e-12 * f.max(1.0));
    }

    #[test]
    fn gauss_newton_identity() {
        let (s, theta) = system(10, 20, true);
        let j = s.jacobian(&theta).unwrap();
        let r = s.residuals(&theta).unwrap();
        let (_, g2) = s.grad_f2(&theta).unwrap();
        let jtf = j.mul_vec(&r);
        for (a, b) in jtf.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() < 1e-10 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn jacobian_column_matches_fd() {
        let (s, theta) = system(11, 32, true);
        for &i in &[0usize, 13, 63] {
            let col = s.jacobian_rows(&theta, &[i]).unwrap();
            let fd = fd_gradient(|t| Ok(s.residuals(t)?[i]), &theta, 1e-6).unwrap();
            assert!(max_relative_error(col.col(0), &fd) < 1e-5, "residual {i}");
        }
        assert!(s.jacobian_rows(&theta, &[3, 3]).is_err());
        assert!(s.jacobian_rows(&theta, &[64]).is_err());
    }

    #[test]
    fn linear_region_jacobian_is_constant() {
        // P = 1 and every branch kernel zero: the output is conv_lut(C_0 x),
        // linear in the lut kernel, so its Jacobian rows do not depend on it
        let l = LayerConfig { gain_order: 1, ..layer() };
        let cfg = ModelConfig::uniform(1, l, false);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = ComplexSignal::new((0..16).map(|_| C::new(rng.gen(), rng.gen())).collect()).unwrap();
        let data = Dataset::new(x.clone(), x).unwrap();
        let s = ResidualSystem::new(cfg.clone(), &data).unwrap();
        let base: Vec<f64> = (0..cfg.real_dim()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let draw = |rng: &mut ChaCha8Rng| {
            let mut t = base.clone();
            for b in &cfg.layout()[0] {
                for j in b.branch..b.gain {
                    t[2 * j] = 0.0;
                    t[2 * j + 1] = 0.0;
                }
                for v in &mut t[2 * b.lut..2 * b.cs] {
                    *v = rng.gen_range(-1.0..1.0);
                }
            }
            t
        };
        let (t1, t2) = (draw(&mut rng), draw(&mut rng));
        let j1 = s.jacobian(&t1).unwrap();
        let j2 = s.jacobian(&t2).unwrap();
        for b in &cfg.layout()[0] {
            for p in 2 * b.lut..2 * b.cs {
                for c in 0..j1.cols() {
                    assert!((j1[(p, c)] - j2[(p, c)]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn minibatch_consistency() {
        let (s, theta) = system(12, 40, true);
        let all: Vec<usize> = (0..40).collect();
        let (f, g) = s.loss_and_grad(&theta).unwrap();
        let (fb, gb) = s.minibatch_grad(&theta, &all).unwrap();
        assert!((f - fb).abs() < 1e-12);
        assert!(g.iter().zip(&gb).all(|(a, b)| (a - b).abs() < 1e-12));
        let (b1, b2) = (&all[..13], &all[13..]);
        let (f1, g1) = s.minibatch_grad(&theta, b1).unwrap();
        let (f2, g2) = s.minibatch_grad(&theta, b2).unwrap();
        assert!((f - (13.0 * f1 + 27.0 * f2) / 40.0).abs() < 1e-12);
        for i in 0..g.len() {
            assert!((g[i] - (13.0 * g1[i] + 27.0 * g2[i]) / 40.0).abs() < 1e-12);
        }
        let single = [17usize];
        let (_, gs) = s.minibatch_grad(&theta, &single).unwrap();
        let fd = fd_gradient(|t| Ok(s.minibatch_grad(t, &single)?.0), &theta, 1e-6).unwrap();
        assert!(max_relative_error(&gs, &fd) < 1e-5);
        assert!(s.minibatch_grad(&theta, &[]).is_err());
    }

    #[test]
    fn nonfinite_output_reports_index() {
        let (s, mut theta) = system(13, 16, false);
        theta[0] = f64::INFINITY;
        assert!(matches!(s.loss_and_grad(&theta), Err(crate::Error::NonFinite { .. })));
    }
}
