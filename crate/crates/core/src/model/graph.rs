//! Forward recording and reverse (adjoint) sweeps over the block graph.
//!
//! Adjoints of complex quantities follow the real-pair convention
//! `z_bar = dL/d(re z) + i dL/d(im z)` for a real scalar `L`, so for
//! `w = a z` the sweep uses `z_bar += conj(a) w_bar` and `a_bar += conj(z) w_bar`.
//! Every stage only touches the positions in its [`Support`]; a sweep for a
//! single residual is therefore local.

use num_complex::Complex64;

use super::{conv_reach, BlockLayout, BlockParams, LayerConfig, ModelConfig, Support};
use crate::error::{arg, Error, Result};

type C = Complex64;
const ZERO: C = C { re: 0.0, im: 0.0 };

#[inline]
fn modulus(z: C) -> f64 {
    z.norm_sqr().sqrt()
}

/// `sum_p c_p a^p` by Horner.
#[inline]
pub(crate) fn gain_scale(c: &[C], a: f64) -> C {
    let mut s = ZERO;
    for &cp in c.iter().rev() {
        s = s * a + cp;
    }
    s
}

/// Derivative of [`gain_scale`] with respect to `a`.
#[inline]
fn gain_scale_deriv(c: &[C], a: f64) -> C {
    let mut s = ZERO;
    for p in (1..c.len()).rev() {
        s = s * a + c[p] * p as f64;
    }
    s
}

/// `out[k] += sum_j h_j x_{k + c - j - shift}` for `k` in `s`.
pub(crate) fn conv_acc(h: &[C], x: &[C], out: &mut [C], s: &Support, shift: i64) {
    let m = x.len() as isize;
    let base = ((h.len() - 1) / 2) as isize - shift as isize;
    for k in s.iter() {
        let t0 = k as isize + base;
        let mut acc = ZERO;
        for (j, &hj) in h.iter().enumerate() {
            let t = t0 - j as isize;
            if t >= 0 && t < m {
                acc += hj * x[t as usize];
            }
        }
        out[k] += acc;
    }
}

pub(crate) fn conv_fwd(h: &[C], x: &[C], out: &mut [C], s: &Support, shift: i64) {
    for k in s.iter() {
        out[k] = ZERO;
    }
    conv_acc(h, x, out, s, shift);
}

/// Adjoint of [`conv_acc`]: reads `ob` on `s`, accumulates into `xb` and `hb`.
fn conv_bwd(h: &[C], x: &[C], ob: &[C], s: &Support, shift: i64, xb: &mut [C], hb: &mut [C]) {
    let m = x.len() as isize;
    let base = ((h.len() - 1) / 2) as isize - shift as isize;
    for k in s.iter() {
        let o = ob[k];
        if o == ZERO {
            continue;
        }
        let t0 = k as isize + base;
        for (j, &hj) in h.iter().enumerate() {
            let t = t0 - j as isize;
            if t >= 0 && t < m {
                let t = t as usize;
                xb[t] += hj.conj() * o;
                hb[j] += x[t].conj() * o;
            }
        }
    }
}

/// Positions each stage of a block must be evaluated on so that the block
/// output is exact on `out`.
#[derive(Debug, Clone)]
pub(crate) struct BlockSupports {
    pub out: Support,
    pub d: Support,
    pub e: Support,
    pub u: Support,
    pub g: Support,
    /// Layer input positions read (including the skip path).
    pub x: Support,
}

impl BlockSupports {
    pub fn new(out: &Support, cfg: &LayerConfig, shift: i64, skip: bool, m: usize) -> Self {
        let (kl, kr) = conv_reach(cfg.branch_width, shift);
        let d = out.dilate(kl, kr, m);
        let (nl, nr) = conv_reach(cfg.cs_width, shift);
        let e = d.dilate(nl, nr, m);
        let u = out.union(&e, m);
        let (ml, mr) = conv_reach(cfg.lut_width, shift);
        let g = u.dilate(ml, mr, m);
        let mut x = g.union(&e, m);
        if skip {
            x = x.union(out, m);
        }
        Self { out: out.clone(), d, e, u, g, x }
    }
}

/// Supports for every layer given the positions wanted at the model output.
pub(crate) fn layer_supports(config: &ModelConfig, m: usize, out: &Support) -> Vec<BlockSupports> {
    let mut sups = Vec::with_capacity(config.layers.len());
    let mut cur = out.clone();
    for li in (0..config.layers.len()).rev() {
        let s = BlockSupports::new(&cur, &config.layers[li], config.shift, config.skip(li), m);
        cur = s.x.clone();
        sups.push(s);
    }
    sups.reverse();
    sups
}

/// Intermediate signals of one block.
#[derive(Debug, Clone)]
pub(crate) struct BlockState {
    pub g: Vec<C>,
    pub u: Vec<C>,
    pub e: Vec<C>,
    pub d: Vec<C>,
}

pub(crate) fn block_fwd(
    x: &[C],
    p: &BlockParams<'_>,
    _cfg: &LayerConfig,
    shift: i64,
    s: &BlockSupports,
) -> BlockState {
    let m = x.len();
    let mut g = vec![ZERO; m];
    for t in s.g.iter() {
        g[t] = gain_scale(p.gain, modulus(x[t])) * x[t];
    }
    let mut u = vec![ZERO; m];
    conv_fwd(p.lut, &g, &mut u, &s.u, shift);
    let mut e = vec![ZERO; m];
    for t in s.e.iter() {
        e[t] = u[t] - x[t];
    }
    let mut d = vec![ZERO; m];
    conv_fwd(p.cs, &e, &mut d, &s.d, shift);
    BlockState { g, u, e, d }
}

fn branch_input(d: &[C], l: usize, s: &Support, q: &mut [C]) {
    for t in s.iter() {
        q[t] = if l == 0 { d[t] } else { d[t] * modulus(d[t]).powi(l as i32) };
    }
}

/// Accumulates the block output into `out` on `s.out`.
pub(crate) fn block_out(
    st: &BlockState,
    p: &BlockParams<'_>,
    cfg: &LayerConfig,
    shift: i64,
    s: &BlockSupports,
    out: &mut [C],
) {
    for k in s.out.iter() {
        out[k] += st.u[k];
    }
    let mut q = vec![ZERO; st.d.len()];
    for l in 0..cfg.branches {
        branch_input(&st.d, l, &s.d, &mut q);
        conv_acc(p.branch_kernel(l, cfg.branch_width), &q, out, &s.out, shift);
    }
}

/// Reusable adjoint buffers. All entries are zero between sweeps.
pub(crate) struct Scratch {
    /// Adjoint of the current layer output; the caller seeds it.
    pub ob: Vec<C>,
    xb: Vec<C>,
    qb: Vec<C>,
    q: Vec<C>,
    db: Vec<C>,
    eb: Vec<C>,
    ub: Vec<C>,
    gb: Vec<C>,
}

impl Scratch {
    pub fn new(m: usize) -> Self {
        let z = || vec![ZERO; m];
        Self { ob: z(), xb: z(), qb: z(), q: z(), db: z(), eb: z(), ub: z(), gb: z() }
    }
}

/// A recorded forward pass.
pub(crate) struct Tape {
    config: ModelConfig,
    layout: Vec<Vec<BlockLayout>>,
    weights: Vec<C>,
    inputs: Vec<Vec<C>>,
    states: Vec<Vec<BlockState>>,
    supports: Vec<BlockSupports>,
    output: Vec<C>,
}

impl Tape {
    /// Runs the model, keeping every intermediate signal. With `out` set,
    /// only the positions needed for those outputs are computed.
    pub fn record(config: &ModelConfig, theta: &[f64], x: &[C], out: Option<&Support>) -> Result<Self> {
        if theta.len() != config.real_dim() {
            return arg(format!(
                "parameter vector has {} reals, model needs {}",
                theta.len(),
                config.real_dim()
            ));
        }
        let m = x.len();
        let weights: Vec<C> = theta.chunks_exact(2).map(|c| C::new(c[0], c[1])).collect();
        let layout = config.layout();
        let out_sup = out.cloned().unwrap_or_else(|| Support::full(m));
        let supports = layer_supports(config, m, &out_sup);

        let mut inputs = Vec::with_capacity(config.layers.len());
        let mut states = Vec::with_capacity(config.layers.len());
        let mut cur = x.to_vec();
        for (li, cfg) in config.layers.iter().enumerate() {
            let s = &supports[li];
            let mut y = vec![ZERO; m];
            let mut layer_states = Vec::with_capacity(cfg.blocks);
            for b in &layout[li] {
                let p = BlockParams::from_weights(&weights, b);
                let st = block_fwd(&cur, &p, cfg, config.shift, s);
                block_out(&st, &p, cfg, config.shift, s, &mut y);
                layer_states.push(st);
            }
            if config.skip(li) {
                for k in s.out.iter() {
                    y[k] += cur[k];
                }
            }
            states.push(layer_states);
            inputs.push(std::mem::replace(&mut cur, y));
        }
        if let Some(k) = out_sup.iter().find(|&k| !(cur[k].re.is_finite() && cur[k].im.is_finite())) {
            return Err(Error::NonFinite { index: k });
        }
        Ok(Self { config: config.clone(), layout, weights, inputs, states, supports, output: cur })
    }

    pub fn output(&self) -> &[C] {
        &self.output
    }

    pub fn into_output(self) -> Vec<C> {
        self.output
    }

    pub fn supports(&self) -> &[BlockSupports] {
        &self.supports
    }

    /// Back-propagates `scratch.ob` (non-zero only on `sups.last().out`)
    /// and accumulates weight adjoints into `grad`. The tape must have been
    /// recorded on supports covering `sups`. Leaves `scratch` zeroed.
    pub fn backward(&self, sups: &[BlockSupports], scratch: &mut Scratch, grad: &mut [C]) {
        let shift = self.config.shift;
        for li in (0..self.config.layers.len()).rev() {
            let cfg = &self.config.layers[li];
            let s = &sups[li];
            let x = &self.inputs[li];
            for (b, st) in self.layout[li].iter().zip(&self.states[li]) {
                let p = BlockParams::from_weights(&self.weights, b);
                self.block_backward(b, &p, cfg, st, x, s, shift, scratch, grad);
            }
            let Scratch { ob, xb, .. } = scratch;
            if self.config.skip(li) {
                for k in s.out.iter() {
                    xb[k] += ob[k];
                }
            }
            for k in s.out.iter() {
                ob[k] = ZERO;
            }
            std::mem::swap(&mut scratch.ob, &mut scratch.xb);
        }
        for t in sups[0].x.iter() {
            scratch.ob[t] = ZERO;
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn block_backward(
        &self,
        b: &BlockLayout,
        p: &BlockParams<'_>,
        cfg: &LayerConfig,
        st: &BlockState,
        x: &[C],
        s: &BlockSupports,
        shift: i64,
        sc: &mut Scratch,
        grad: &mut [C],
    ) {
        let Scratch { ob, xb, qb, q, db, eb, ub, gb } = sc;

        for l in 0..cfg.branches {
            branch_input(&st.d, l, &s.d, q);
            let r = b.branch_range(l);
            conv_bwd(p.branch_kernel(l, cfg.branch_width), q, ob, &s.out, shift, qb, &mut grad[r]);
            for t in s.d.iter() {
                let qbar = qb[t];
                qb[t] = ZERO;
                if l == 0 {
                    db[t] += qbar;
                    continue;
                }
                let d = st.d[t];
                let a = modulus(d);
                if a == 0.0 {
                    continue;
                }
                let al = a.powi(l as i32);
                let radial = l as f64 * al / (a * a) * (qbar.conj() * d).re;
                db[t] += qbar * al + d * radial;
            }
        }

        conv_bwd(p.cs, &st.e, db, &s.d, shift, eb, &mut grad[b.cs..b.branch]);
        for t in s.d.iter() {
            db[t] = ZERO;
        }

        for k in s.out.iter() {
            ub[k] += ob[k];
        }
        for t in s.e.iter() {
            ub[t] += eb[t];
            xb[t] -= eb[t];
            eb[t] = ZERO;
        }

        conv_bwd(p.lut, &st.g, ub, &s.u, shift, gb, &mut grad[b.lut..b.cs]);
        for t in s.u.iter() {
            ub[t] = ZERO;
        }

        let cbar = &mut grad[b.gain..b.end];
        for t in s.g.iter() {
            let gbar = gb[t];
            if gbar == ZERO {
                continue;
            }
            gb[t] = ZERO;
            let z = x[t];
            let a = modulus(z);
            let zc = z.conj() * gbar;
            let mut ap = 1.0;
            for cb in cbar.iter_mut() {
                *cb += zc * ap;
                ap *= a;
            }
            xb[t] += gain_scale(p.gain, a).conj() * gbar;
            if a > 0.0 {
                let abar = (gbar.conj() * gain_scale_deriv(p.gain, a) * z).re;
                xb[t] += z * (abar / a);
            }
        }
    }
}
