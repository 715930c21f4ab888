//! Complex baseband signals, supervised datasets, the NMSE metric and the
//! real/complex packing used to hand complex model weights to real-valued
//! optimizers.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};

/// NMSE reported when the residual is exactly zero.
pub const NMSE_FLOOR_DB: f64 = -300.0;

/// A non-empty sequence of finite complex samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Complex64>", into = "Vec<Complex64>")]
pub struct ComplexSignal(Vec<Complex64>);

impl ComplexSignal {
    pub fn new(samples: Vec<Complex64>) -> Result<Self> {
        if samples.is_empty() {
            return arg("signal must contain at least one sample");
        }
        if let Some(k) = samples.iter().position(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFinite { index: k });
        }
        Ok(Self(samples))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Always false; kept for API symmetry with slices.
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn samples(&self) -> &[Complex64] {
        &self.0
    }

    pub fn into_samples(self) -> Vec<Complex64> {
        self.0
    }

    /// Sum of squared moduli.
    pub fn power(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn slice(&self, lo: usize, hi: usize) -> Result<Self> {
        Self::new(self.0[lo..hi].to_vec())
    }
}

impl TryFrom<Vec<Complex64>> for ComplexSignal {
    type Error = Error;
    fn try_from(v: Vec<Complex64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<ComplexSignal> for Vec<Complex64> {
    fn from(s: ComplexSignal) -> Self {
        s.0
    }
}

impl AsRef<[Complex64]> for ComplexSignal {
    fn as_ref(&self) -> &[Complex64] {
        &self.0
    }
}

/// A supervised pair: model input and desired model output.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    input: ComplexSignal,
    target: ComplexSignal,
}

impl Dataset {
    pub fn new(input: ComplexSignal, target: ComplexSignal) -> Result<Self> {
        if input.len() != target.len() {
            return arg(format!(
                "input has {} samples but target has {}",
                input.len(),
                target.len()
            ));
        }
        Ok(Self { input, target })
    }

    pub fn input(&self) -> &ComplexSignal {
        &self.input
    }

    pub fn target(&self) -> &ComplexSignal {
        &self.target
    }

    pub fn len(&self) -> usize {
        self.input.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn slice(&self, lo: usize, hi: usize) -> Result<Self> {
        if lo >= hi || hi > self.len() {
            return arg(format!("bad slice {lo}..{hi} of {} samples", self.len()));
        }
        Self::new(self.input.slice(lo, hi)?, self.target.slice(lo, hi)?)
    }
}

/// Normalized mean square error in decibels:
/// `10 log10( sum |y - y_ref|^2 / sum |x|^2 )`.
///
/// Returns [`NMSE_FLOOR_DB`] when `y == y_ref` exactly.
pub fn nmse_db(y: &[Complex64], y_ref: &[Complex64], x: &[Complex64]) -> Result<f64> {
    if y.len() != y_ref.len() || y.len() != x.len() {
        return arg(format!(
            "nmse length mismatch: {} / {} / {}",
            y.len(),
            y_ref.len(),
            x.len()
        ));
    }
    let num: f64 = y.iter().zip(y_ref).map(|(a, b)| (a - b).norm_sqr()).sum();
    let den: f64 = x.iter().map(|z| z.norm_sqr()).sum();
    nmse_from_powers(num, den)
}

/// NMSE from an already accumulated residual power and reference power.
pub fn nmse_from_powers(residual_power: f64, reference_power: f64) -> Result<f64> {
    if !(reference_power > 0.0) {
        return arg("reference signal has zero power");
    }
    if residual_power == 0.0 {
        return Ok(NMSE_FLOOR_DB);
    }
    Ok((10.0 * (residual_power / reference_power).log10()).max(NMSE_FLOOR_DB))
}

/// Splits a dataset without shuffling: the leading `floor(fraction * m)`
/// samples train, the rest validate.
pub fn split_sequential(d: &Dataset, train_fraction: f64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return arg(format!("train fraction {train_fraction} outside (0, 1)"));
    }
    let m = d.len();
    let cut = (train_fraction * m as f64).floor() as usize;
    if cut < 1 || cut >= m {
        return arg(format!(
            "split of {m} samples at fraction {train_fraction} leaves an empty part"
        ));
    }
    Ok((d.slice(0, cut)?, d.slice(cut, m)?))
}

/// Flat real view of the model weights: complex weight `j` occupies
/// `values[2j]` (real part) and `values[2j + 1]` (imaginary part).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if !values.len().is_multiple_of(2) {
            return arg(format!("odd parameter vector length {}", values.len()));
        }
        Ok(Self(values))
    }

    pub fn zeros(complex_count: usize) -> Self {
        Self(vec![0.0; 2 * complex_count])
    }

    pub fn complex_count(&self) -> usize {
        self.0.len() / 2
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }

    pub fn get(&self, j: usize) -> Complex64 {
        Complex64::new(self.0[2 * j], self.0[2 * j + 1])
    }

    pub fn set(&mut self, j: usize, z: Complex64) {
        self.0[2 * j] = z.re;
        self.0[2 * j + 1] = z.im;
    }
}

/// Interleaves complex weights into a real vector.
pub fn pack_params(weights: &[Complex64]) -> ParamVector {
    ParamVector(weights.iter().flat_map(|z| [z.re, z.im]).collect())
}

/// Inverse of [`pack_params`]; `expected` is the number of complex weights
/// the layout requires.
pub fn unpack_params(v: &ParamVector, expected: usize) -> Result<Vec<Complex64>> {
    if v.complex_count() != expected {
        return arg(format!(
            "parameter vector holds {} complex weights, layout needs {expected}",
            v.complex_count()
        ));
    }
    Ok(v.0.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(v: &[(f64, f64)]) -> Vec<Complex64> {
        v.iter().map(|&(a, b)| Complex64::new(a, b)).collect()
    }

    #[test]
    fn nmse_reference_values() {
        let x = sig(&[(1.0, 0.5), (-0.3, 2.0), (0.7, -0.1)]);
        let y_ref = sig(&[(0.2, 0.1), (0.0, 0.0), (1.0, 1.0)]);
        let y: Vec<_> = y_ref.iter().zip(&x).map(|(a, b)| a + b).collect();
        assert!(nmse_db(&y, &y_ref, &x).unwrap().abs() < 1e-12);
        assert_eq!(nmse_db(&y_ref, &y_ref, &x).unwrap(), NMSE_FLOOR_DB);

        let y: Vec<_> = y_ref.iter().zip(&x).map(|(a, b)| a + b * 0.1).collect();
        assert!((nmse_db(&y, &y_ref, &x).unwrap() + 20.0).abs() < 1e-12);
    }

    #[test]
    fn nmse_errors() {
        let x = sig(&[(1.0, 0.0), (1.0, 0.0)]);
        assert!(nmse_db(&x, &x[..1], &x).is_err());
        let zero = sig(&[(0.0, 0.0), (0.0, 0.0)]);
        assert!(nmse_db(&x, &zero, &zero).is_err());
    }

    #[test]
    fn signal_rejects_empty_and_nan() {
        assert!(ComplexSignal::new(vec![]).is_err());
        let e = ComplexSignal::new(sig(&[(1.0, 0.0), (f64::NAN, 0.0)])).unwrap_err();
        assert!(matches!(e, Error::NonFinite { index: 1 }));
    }

    fn ramp(m: usize) -> Dataset {
        let s: Vec<_> = (0..m).map(|k| Complex64::new(k as f64, 0.0)).collect();
        Dataset::new(ComplexSignal::new(s.clone()).unwrap(), ComplexSignal::new(s).unwrap())
            .unwrap()
    }

    #[test]
    fn sequential_split_sizes() {
        let (a, b) = split_sequential(&ramp(100), 0.75).unwrap();
        assert_eq!((a.len(), b.len()), (75, 25));
        assert_eq!(a.input().samples()[74].re, 74.0);
        assert_eq!(b.input().samples()[0].re, 75.0);

        let (a, b) = split_sequential(&ramp(10), 0.5).unwrap();
        assert_eq!((a.len(), b.len()), (5, 5));

        let (a, b) = split_sequential(&ramp(2), 0.9).unwrap();
        assert_eq!((a.len(), b.len()), (1, 1));

        for f in [0.1, 0.5, 0.99] {
            assert!(split_sequential(&ramp(1), f).is_err());
        }
        assert!(split_sequential(&ramp(10), 1.0).is_err());
        assert!(split_sequential(&ramp(10), 0.05).is_err());
    }

    #[test]
    fn dataset_length_mismatch() {
        let a = ComplexSignal::new(sig(&[(1.0, 0.0)])).unwrap();
        let b = ComplexSignal::new(sig(&[(1.0, 0.0), (2.0, 0.0)])).unwrap();
        assert!(Dataset::new(a, b).is_err());
    }

    #[test]
    fn packing_layout() {
        let p = pack_params(&[Complex64::new(3.0, 4.0)]);
        assert_eq!(p.as_slice(), &[3.0, 4.0]);
        let z = pack_params(&[Complex64::new(0.0, 0.0); 4]);
        assert!(z.as_slice().iter().all(|&v| v == 0.0));
        assert!(unpack_params(&p, 2).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn pack_unpack_roundtrip(v in prop::collection::vec((-1e6f64..1e6, -1e6f64..1e6), 1..64)) {
                let w: Vec<_> = v.iter().map(|&(a, b)| Complex64::new(a, b)).collect();
                let p = pack_params(&w);
                let back = unpack_params(&p, w.len()).unwrap();
                prop_assert_eq!(&back, &w);
                prop_assert_eq!(pack_params(&back), p);
            }

            #[test]
            fn nmse_phase_invariant(
                v in prop::collection::vec((-2f64..2.0, -2f64..2.0, -2f64..2.0, -2f64..2.0), 2..32),
                phi in 0f64..std::f64::consts::TAU,
            ) {
                let y: Vec<_> = v.iter().map(|t| Complex64::new(t.0, t.1)).collect();
                let r: Vec<_> = v.iter().map(|t| Complex64::new(t.2, t.3)).collect();
                let x: Vec<_> = v.iter().map(|t| Complex64::new(t.1 + 1.0, t.2)).collect();
                let rot = Complex64::from_polar(1.0, phi);
                let yr: Vec<_> = y.iter().map(|z| z * rot).collect();
                let rr: Vec<_> = r.iter().map(|z| z * rot).collect();
                let a = nmse_db(&y, &r, &x).unwrap();
                let b = nmse_db(&yr, &rr, &x).unwrap();
                prop_assert!((a - b).abs() < 1e-12);
            }

            #[test]
            fn nmse_input_scaling(
                v in prop::collection::vec((-2f64..2.0, -2f64..2.0, 0.1f64..2.0), 2..32),
                c in prop_oneof![0.01f64..100.0, -100f64..-0.01],
            ) {
                let y: Vec<_> = v.iter().map(|t| Complex64::new(t.0, t.1)).collect();
                let r: Vec<_> = v.iter().map(|t| Complex64::new(t.1, t.0 * 0.5)).collect();
                let x: Vec<_> = v.iter().map(|t| Complex64::new(t.2, 0.0)).collect();
                let xs: Vec<_> = x.iter().map(|z| z * c).collect();
                let a = nmse_db(&y, &r, &x).unwrap();
                let b = nmse_db(&y, &r, &xs).unwrap();
                prop_assume!(a > NMSE_FLOOR_DB + 50.0);
                prop_assert!((b - (a - 20.0 * c.abs().log10())).abs() < 1e-10);
            }
        }
    }
}
