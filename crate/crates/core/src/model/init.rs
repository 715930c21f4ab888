//! Parameter initialization schemes.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::ModelConfig;
use crate::error::{arg, Result};
use crate::signal::{pack_params, ParamVector};

/// Visits every parameter group as `(offset, width)` in layout order.
fn for_each_group(config: &ModelConfig, mut f: impl FnMut(usize, usize)) {
    for (layer, blocks) in config.layout().iter().zip(&config.layers) {
        for b in layer {
            f(b.lut, blocks.lut_width);
            f(b.cs, blocks.cs_width);
            for l in 0..blocks.branches {
                f(b.branch_range(l).start, blocks.branch_width);
            }
            f(b.gain, blocks.gain_order);
        }
    }
}

/// Uniform on `±sqrt(6 / (n_in + n_out))` with `n_in = n_out` = group width,
/// real and imaginary parts drawn independently.
pub fn init_xavier(config: &ModelConfig, seed: u64) -> Result<ParamVector> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = vec![Complex64::new(0.0, 0.0); config.param_count()];
    for_each_group(config, |off, width| {
        let bound = (6.0 / (2 * width) as f64).sqrt();
        for z in &mut w[off..off + width] {
            *z = Complex64::new(rng.gen_range(-bound..=bound), rng.gen_range(-bound..=bound));
        }
    });
    Ok(pack_params(&w))
}

/// Normal with `sigma = sqrt(2 / n_in)`, `n_in` = group width.
pub fn init_he(config: &ModelConfig, seed: u64) -> Result<ParamVector> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = vec![Complex64::new(0.0, 0.0); config.param_count()];
    for_each_group(config, |off, width| {
        let normal = Normal::new(0.0, (2.0 / width as f64).sqrt()).expect("positive sigma");
        for z in &mut w[off..off + width] {
            *z = Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng));
        }
    });
    Ok(pack_params(&w))
}

/// Tap offsets from the center for blocks `0..count`: `0, +1, -1, +2, -2, ...`.
pub fn stagger_offsets(count: usize) -> Vec<i64> {
    (0..count as i64)
        .map(|r| if r % 2 == 1 { (r + 1) / 2 } else { -(r / 2) })
        .collect()
}

/// Settings of the shifted ("near identity") initialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShiftedInit {
    /// Value of every gain coefficient.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Center tap of every convolution kernel, as `[re, im]`.
    #[serde(default = "default_tap")]
    pub identity_tap: [f64; 2],
}

fn default_alpha() -> f64 {
    0.01
}

fn default_tap() -> [f64; 2] {
    [1.0, 0.0]
}

impl Default for ShiftedInit {
    fn default() -> Self {
        Self { alpha: default_alpha(), identity_tap: default_tap() }
    }
}

impl ShiftedInit {
    pub fn apply(&self, config: &ModelConfig) -> Result<ParamVector> {
        let [re, im] = self.identity_tap;
        init_shifted(config, self.alpha, Complex64::new(re, im))
    }
}

/// `lut` and `cs` kernels get `identity_tap` at the center; block `r`'s
/// branch kernels get it at `center + stagger(r)`; every gain coefficient is
/// `alpha`.
pub fn init_shifted(config: &ModelConfig, alpha: f64, identity_tap: Complex64) -> Result<ParamVector> {
    config.validate()?;
    if !alpha.is_finite() || !identity_tap.re.is_finite() || !identity_tap.im.is_finite() {
        return arg("shifted init needs finite alpha and identity tap");
    }
    let mut w = vec![Complex64::new(0.0, 0.0); config.param_count()];
    for (li, (layer, cfg)) in config.layout().iter().zip(&config.layers).enumerate() {
        if cfg.blocks > cfg.branch_width {
            return arg(format!(
                "layer {li}: {} blocks need distinct branch taps but branch_width is {}",
                cfg.blocks, cfg.branch_width
            ));
        }
        let offsets = stagger_offsets(cfg.blocks);
        let bc = ((cfg.branch_width - 1) / 2) as i64;
        for (b, &off) in layer.iter().zip(&offsets) {
            w[b.lut + (cfg.lut_width - 1) / 2] = identity_tap;
            w[b.cs + (cfg.cs_width - 1) / 2] = identity_tap;
            for l in 0..cfg.branches {
                let tap = (bc + off) as usize;
                w[b.branch_range(l).start + tap] = identity_tap;
            }
            for c in &mut w[b.gain..b.end] {
                *c = Complex64::new(alpha, 0.0);
            }
        }
    }
    Ok(pack_params(&w))
}
