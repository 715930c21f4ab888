//! Synthetic power amplifier and test-signal generator used to build
//! pre-distortion datasets.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::model::conv;
use crate::signal::{ComplexSignal, Dataset};

/// Saturating AM/AM, rational AM/PM and a short FIR memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaModel {
    /// Small-signal gain.
    pub g0: f64,
    /// Amplitude at which the gain has halved.
    pub a_sat: f64,
    /// AM/PM coefficient `c` in `c t^2 / (1 + t^2)`.
    pub am_pm: f64,
    /// Centered memory taps as `[re, im]`; odd length, at most 5.
    pub fir: Vec<[f64; 2]>,
}

impl Default for PaModel {
    fn default() -> Self {
        Self { g0: 2.0, a_sat: 1.0, am_pm: 0.5, fir: vec![[0.05, 0.0], [1.0, 0.0], [0.05, 0.0]] }
    }
}

impl PaModel {
    /// Memoryless, phase-free amplifier with constant gain `g0` at
    /// amplitudes far below `a_sat`.
    pub fn linear(g0: f64) -> Self {
        Self { g0, a_sat: f64::INFINITY, am_pm: 0.0, fir: vec![[1.0, 0.0]] }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.g0 > 0.0 && self.a_sat > 0.0) || !self.am_pm.is_finite() {
            return arg("PA needs g0 > 0, a_sat > 0 and a finite AM/PM coefficient");
        }
        let n = self.fir.len();
        if n == 0 || n > 5 || n.is_multiple_of(2) {
            return arg(format!("PA FIR must have odd length at most 5, got {n}"));
        }
        let c = self.fir[n / 2];
        if c == [0.0, 0.0] {
            return arg("PA FIR center tap must be nonzero");
        }
        if self.fir.iter().flatten().any(|v| !v.is_finite()) {
            return arg("PA FIR taps must be finite");
        }
        Ok(())
    }

    fn kernel(&self) -> Vec<Complex64> {
        self.fir.iter().map(|&[re, im]| Complex64::new(re, im)).collect()
    }

    /// `g(t) e^{i phi(t)}` for amplitude `t`.
    pub fn complex_gain(&self, t: f64) -> Complex64 {
        let r = t / self.a_sat;
        let g = self.g0 / (1.0 + r * r);
        let phi = self.am_pm * t * t / (1.0 + t * t);
        Complex64::from_polar(g, phi)
    }
}

/// Multi-tone test signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSpec {
    pub m: usize,
    pub tone_count: usize,
    pub seed: u64,
    /// Target `max |x_k|`.
    pub peak: f64,
}

impl SignalSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m < 64 {
            return arg(format!("signal needs m >= 64, got {}", self.m));
        }
        if self.tone_count == 0 {
            return arg("signal needs at least one tone");
        }
        if !(self.peak > 0.0 && self.peak.is_finite()) {
            return arg("signal peak must be positive and finite");
        }
        Ok(())
    }
}

/// Sum of `tone_count` unit tones on bins spread around zero frequency with
/// seeded uniform phases, scaled so the peak modulus equals `spec.peak`.
pub fn gen_signal(spec: &SignalSpec) -> Result<ComplexSignal> {
    spec.validate()?;
    let t = spec.tone_count;
    let spacing = (spec.m / (2 * t)).max(1) as i64;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let tones: Vec<(f64, f64)> = (0..t as i64)
        .map(|j| {
            let bin = (j - t as i64 / 2) * spacing;
            (2.0 * PI * bin as f64 / spec.m as f64, rng.gen_range(0.0..2.0 * PI))
        })
        .collect();
    let mut x: Vec<Complex64> = (0..spec.m)
        .map(|k| {
            tones
                .iter()
                .map(|&(w, ph)| Complex64::from_polar(1.0, w * k as f64 + ph))
                .sum()
        })
        .collect();
    let peak = x.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(Error::Numerical("generated signal is identically zero".into()));
    }
    let s = spec.peak / peak;
    for z in &mut x {
        *z *= s;
    }
    ComplexSignal::new(x)
}

/// `FIR * (g(|u|) e^{i phi(|u|)} u)`.
pub fn pa_forward(x: &ComplexSignal, pa: &PaModel) -> Result<ComplexSignal> {
    pa.validate()?;
    let v: Vec<Complex64> = x.samples().iter().map(|&u| pa.complex_gain(u.norm()) * u).collect();
    ComplexSignal::new(conv(&v, &pa.kernel(), 0)?)
}

/// Indirect-learning pair: input `PA(x) / a`, target `x`.
pub fn make_dpd_dataset(spec: &SignalSpec, pa: &PaModel, a: f64) -> Result<Dataset> {
    if !(a > 0.0 && a.is_finite()) {
        return arg("dataset gain a must be positive and finite");
    }
    let x = gen_signal(spec)?;
    let y = pa_forward(&x, pa)?;
    let input = ComplexSignal::new(y.samples().iter().map(|z| z / a).collect())?;
    Dataset::new(input, x)
}

pub const DATASET_FILE_VERSION: u32 = 1;
const DATASET_HEADER: &str = "# whdpd-dataset version=";

/// Writes `# whdpd-dataset version=1` then CSV columns
/// `in_re,in_im,tgt_re,tgt_im`.
pub fn write_dataset<W: Write>(d: &Dataset, mut w: W) -> Result<()> {
    writeln!(w, "{DATASET_HEADER}{DATASET_FILE_VERSION}")?;
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["in_re", "in_im", "tgt_re", "tgt_im"]).map_err(csv_err)?;
    for (i, t) in d.input().samples().iter().zip(d.target().samples()) {
        wr.serialize((i.re, i.im, t.re, t.im)).map_err(csv_err)?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_dataset<R: BufRead>(mut r: R) -> Result<Dataset> {
    let mut first = String::new();
    r.read_line(&mut first)?;
    let version = first
        .trim_end()
        .strip_prefix(DATASET_HEADER)
        .and_then(|v| v.parse::<u32>().ok())
        .ok_or_else(|| Error::Parse("missing dataset version line".into()))?;
    if version != DATASET_FILE_VERSION {
        return Err(Error::Parse(format!("unsupported dataset version {version}")));
    }
    let mut rd = csv::Reader::from_reader(r);
    let headers = rd.headers().map_err(csv_err)?.clone();
    if headers.iter().collect::<Vec<_>>() != ["in_re", "in_im", "tgt_re", "tgt_im"] {
        return Err(Error::Parse(format!("unexpected dataset columns {headers:?}")));
    }
    let (mut input, mut target) = (Vec::new(), Vec::new());
    for (line, row) in rd.deserialize::<(f64, f64, f64, f64)>().enumerate() {
        let (a, b, c, d) = row.map_err(|e| Error::Parse(format!("dataset row {}: {e}", line + 1)))?;
        input.push(Complex64::new(a, b));
        target.push(Complex64::new(c, d));
    }
    Dataset::new(ComplexSignal::new(input)?, ComplexSignal::new(target)?)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}
