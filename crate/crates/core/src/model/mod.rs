//! The cascade Wiener-Hammerstein model.
//!
//! A layer is a sum of `R` parallel blocks. Each block applies a polynomial
//! amplitude gain followed by a convolution (`u`), forms a correction signal
//! `d = conv_cs(u - x)`, and adds the branch terms `conv_l(d |d|^l)`:
//!
//! ```text
//! u   = conv_lut( sum_p C_p |x|^(p-1) x )
//! d   = conv_cs(u - x)
//! out = u + sum_{l=0}^{L-1} conv_l(d |d|^l)
//! ```
//!
//! Layers are chained; with `residual = true` every layer after the first
//! adds its own input to its output.
//!
//! Parameter layout (frozen): layer-major, then block-major; inside a block
//! the groups are `lut[M]`, `cs[N]`, `branch_0[K] .. branch_{L-1}[K]`,
//! `gain[P]`; each complex weight is stored as `(re, im)`.

mod graph;
mod init;
mod support;

pub(crate) use graph::{layer_supports, Scratch, Tape};
pub use init::{init_he, init_shifted, init_xavier, stagger_offsets, ShiftedInit};
pub(crate) use support::Support;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Result};
use crate::signal::{ComplexSignal, ParamVector};

/// Hyperparameters of one layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerConfig {
    /// Number of parallel blocks `R`.
    pub blocks: usize,
    /// Width `N` of the correction convolution.
    pub cs_width: usize,
    /// Width `M` of the convolution after the gain.
    pub lut_width: usize,
    /// Width `K` of each branch convolution.
    pub branch_width: usize,
    /// Branch count `L`; branch `l` sees `d |d|^l`.
    pub branches: usize,
    /// Order `P` of the power-basis gain.
    pub gain_order: usize,
}

impl LayerConfig {
    /// Complex weights in one block.
    pub fn block_params(&self) -> usize {
        self.cs_width + self.lut_width + self.branch_width * self.branches + self.gain_order
    }

    pub fn params(&self) -> usize {
        self.blocks * self.block_params()
    }

    fn validate(&self, li: usize) -> Result<()> {
        for (name, w) in [
            ("cs_width", self.cs_width),
            ("lut_width", self.lut_width),
            ("branch_width", self.branch_width),
        ] {
            if w == 0 || w % 2 == 0 {
                return arg(format!("layer {li}: {name} must be odd and positive, got {w}"));
            }
        }
        if self.blocks == 0 || self.branches == 0 || self.gain_order == 0 {
            return arg(format!("layer {li}: blocks, branches and gain_order must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub layers: Vec<LayerConfig>,
    /// Skip connection on every layer after the first.
    pub residual: bool,
    /// Extra delay applied by every convolution (0 = centered kernels).
    #[serde(default)]
    pub shift: i64,
}

impl ModelConfig {
    /// `layers` identical layers.
    pub fn uniform(layers: usize, layer: LayerConfig, residual: bool) -> Self {
        Self { layers: vec![layer; layers], residual, shift: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return arg("model needs at least one layer");
        }
        for (li, l) in self.layers.iter().enumerate() {
            l.validate(li)?;
        }
        Ok(())
    }

    /// Number of complex weights: `sum_layers R (N + M + K L + P)`.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerConfig::params).sum()
    }

    /// Length of the real parameter vector.
    pub fn real_dim(&self) -> usize {
        2 * self.param_count()
    }

    pub(crate) fn skip(&self, layer: usize) -> bool {
        self.residual && layer > 0
    }

    /// Offsets (in complex weights) of every block's parameter groups.
    pub fn layout(&self) -> Vec<Vec<BlockLayout>> {
        let mut off = 0;
        self.layers
            .iter()
            .map(|l| {
                (0..l.blocks)
                    .map(|_| {
                        let b = BlockLayout::new(off, l);
                        off += l.block_params();
                        b
                    })
                    .collect()
            })
            .collect()
    }
}

/// Where one block's groups live inside the flat complex weight vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockLayout {
    pub lut: usize,
    pub cs: usize,
    pub branch: usize,
    pub gain: usize,
    pub end: usize,
    pub cfg: LayerConfig,
}

impl BlockLayout {
    fn new(start: usize, cfg: &LayerConfig) -> Self {
        let lut = start;
        let cs = lut + cfg.lut_width;
        let branch = cs + cfg.cs_width;
        let gain = branch + cfg.branch_width * cfg.branches;
        let end = gain + cfg.gain_order;
        Self { lut, cs, branch, gain, end, cfg: *cfg }
    }

    pub fn branch_range(&self, l: usize) -> std::ops::Range<usize> {
        let s = self.branch + l * self.cfg.branch_width;
        s..s + self.cfg.branch_width
    }
}

/// Borrowed weights of one block.
#[derive(Debug, Clone, Copy)]
pub struct BlockParams<'a> {
    pub lut: &'a [Complex64],
    pub cs: &'a [Complex64],
    /// Branch kernels, concatenated: `branches * K` entries.
    pub branch: &'a [Complex64],
    pub gain: &'a [Complex64],
}

impl<'a> BlockParams<'a> {
    pub fn from_weights(w: &'a [Complex64], b: &BlockLayout) -> Self {
        Self {
            lut: &w[b.lut..b.cs],
            cs: &w[b.cs..b.branch],
            branch: &w[b.branch..b.gain],
            gain: &w[b.gain..b.end],
        }
    }

    pub fn branch_kernel(&self, l: usize, width: usize) -> &'a [Complex64] {
        &self.branch[l * width..(l + 1) * width]
    }
}

/// Reach of a centered convolution of width `w` delayed by `shift`:
/// output `k` reads inputs `k - left ..= k + right`.
pub(crate) fn conv_reach(width: usize, shift: i64) -> (isize, isize) {
    let c = ((width - 1) / 2) as isize;
    let s = shift as isize;
    (width as isize - 1 - c + s, c - s)
}

/// `out_k = sum_j H_j x_{k + c - j - shift}` with zero padding and
/// `c = (len(H) - 1) / 2`, so a unit tap at `c` is the identity.
pub fn conv(x: &[Complex64], h: &[Complex64], shift: i64) -> Result<Vec<Complex64>> {
    if h.is_empty() {
        return arg("convolution kernel must be non-empty");
    }
    let mut out = vec![Complex64::new(0.0, 0.0); x.len()];
    graph::conv_fwd(h, x, &mut out, &Support::full(x.len()), shift);
    Ok(out)
}

/// `sum_p C_p |x_k|^(p-1) x_k`, elementwise.
pub fn gain_function(x: &[Complex64], c: &[Complex64]) -> Result<Vec<Complex64>> {
    if c.is_empty() {
        return arg("gain needs at least one coefficient");
    }
    Ok(x.iter().map(|&z| graph::gain_scale(c, z.norm()) * z).collect())
}

/// One block evaluated on the whole signal.
pub fn block_forward(
    x: &[Complex64],
    params: &BlockParams<'_>,
    cfg: &LayerConfig,
    shift: i64,
) -> Result<Vec<Complex64>> {
    check_block_shapes(params, cfg)?;
    let m = x.len();
    let supports = graph::BlockSupports::new(&Support::full(m), cfg, shift, false, m);
    let mut out = vec![Complex64::new(0.0, 0.0); m];
    let state = graph::block_fwd(x, params, cfg, shift, &supports);
    graph::block_out(&state, params, cfg, shift, &supports, &mut out);
    Ok(out)
}

fn check_block_shapes(p: &BlockParams<'_>, cfg: &LayerConfig) -> Result<()> {
    if p.lut.len() != cfg.lut_width
        || p.cs.len() != cfg.cs_width
        || p.branch.len() != cfg.branch_width * cfg.branches
        || p.gain.len() != cfg.gain_order
    {
        return arg("block parameter shapes do not match the layer config");
    }
    Ok(())
}

/// Model output for the whole input signal.
pub fn forward(theta: &ParamVector, x: &ComplexSignal, config: &ModelConfig) -> Result<ComplexSignal> {
    config.validate()?;
    if theta.as_slice().len() != config.real_dim() {
        return arg(format!(
            "parameter vector has {} reals, model needs {}",
            theta.as_slice().len(),
            config.real_dim()
        ));
    }
    let tape = Tape::record(config, theta.as_slice(), x.samples(), None)?;
    ComplexSignal::new(tape.into_output())
}

/// Saved parameter file: `{schema_version, model_config, values}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamFile {
    pub schema_version: u32,
    pub model_config: ModelConfig,
    pub values: Vec<f64>,
}

pub const PARAM_FILE_VERSION: u32 = 1;

impl ParamFile {
    pub fn new(model_config: ModelConfig, values: &ParamVector) -> Result<Self> {
        if values.as_slice().len() != model_config.real_dim() {
            return arg("parameter vector does not match model config");
        }
        Ok(Self {
            schema_version: PARAM_FILE_VERSION,
            model_config,
            values: values.as_slice().to_vec(),
        })
    }

    /// Deterministic pretty JSON.
    pub fn to_text(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("param file serializes");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let f: Self =
            serde_json::from_str(text).map_err(|e| crate::Error::Parse(e.to_string()))?;
        if f.schema_version != PARAM_FILE_VERSION {
            return Err(crate::Error::Parse(format!(
                "unsupported parameter file version {}",
                f.schema_version
            )));
        }
        f.model_config.validate()?;
        if f.values.len() != f.model_config.real_dim() {
            return Err(crate::Error::Parse("value count does not match model config".into()));
        }
        Ok(f)
    }

    pub fn params(&self) -> ParamVector {
        ParamVector::from_values(self.values.clone()).expect("validated length")
    }
}
