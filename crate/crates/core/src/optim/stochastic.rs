//! Minibatch first-order methods over the sample terms of a [`Sampled`]
//! objective, with epoch-shuffled batches.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::finite_or_none;
use crate::error::{arg, Result};
use crate::problem::Sampled;
use crate::trace::{Recorder, RunResult, Status};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StochasticMethod {
    Sgd,
    Adam,
    Adagrad,
    Rmsprop,
    Adadelta,
    Adamax,
}

impl StochasticMethod {
    pub const ALL: [Self; 6] = [Self::Adadelta, Self::Adagrad, Self::Adam, Self::Adamax, Self::Rmsprop, Self::Sgd];

    /// Default `(batch size, step size)`.
    pub fn defaults(self) -> (usize, f64) {
        match self {
            Self::Adadelta => (2048, 10.0),
            Self::Adagrad => (2048, 0.01),
            Self::Adam => (2048, 0.001),
            Self::Adamax => (2048, 0.01),
            Self::Rmsprop => (2048, 0.001),
            Self::Sgd => (128, 10.0),
        }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const ADAGRAD_EPS: f64 = 1e-10;
const RMSPROP_RHO: f64 = 0.99;
const RMSPROP_EPS: f64 = 1e-8;
const ADADELTA_RHO: f64 = 0.9;
const ADADELTA_EPS: f64 = 1e-6;

/// Shuffles `0..m` once per epoch and hands out consecutive slices of
/// length `b` (the last one of an epoch may be shorter).
#[derive(Debug, Clone)]
pub struct BatchSampler {
    perm: Vec<usize>,
    batch: usize,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(m: usize, batch: usize, seed: u64) -> Result<Self> {
        if m == 0 || batch == 0 {
            return arg("sampler needs m > 0 and batch > 0");
        }
        let mut s = Self { perm: (0..m).collect(), batch: batch.min(m), pos: 0, rng: ChaCha8Rng::seed_from_u64(seed) };
        s.perm.shuffle(&mut s.rng);
        Ok(s)
    }

    /// Batches per epoch.
    pub fn batches_per_epoch(&self) -> usize {
        self.perm.len().div_ceil(self.batch)
    }

    pub fn next_batch(&mut self) -> &[usize] {
        if self.pos >= self.perm.len() {
            self.perm.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let lo = self.pos;
        self.pos = (lo + self.batch).min(self.perm.len());
        &self.perm[lo..self.pos]
    }
}

/// Per-coordinate optimizer memory.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveState {
    /// First moment (Adam, Adamax) or squared-update average (Adadelta).
    pub first: Vec<f64>,
    /// Second-moment average, accumulator or infinity norm; never negative.
    pub second: Vec<f64>,
    pub step: u64,
}

impl AdaptiveState {
    pub fn new(n: usize) -> Self {
        Self { first: vec![0.0; n], second: vec![0.0; n], step: 0 }
    }
}

/// Parameter increment for one step with gradient `g` and step size `eta`.
pub fn adaptive_step(state: &mut AdaptiveState, g: &[f64], method: StochasticMethod, eta: f64) -> Vec<f64> {
    debug_assert_eq!(g.len(), state.first.len());
    state.step += 1;
    let t = state.step as i32;
    let (m1, m2) = (&mut state.first, &mut state.second);
    match method {
        StochasticMethod::Sgd => g.iter().map(|v| -eta * v).collect(),
        StochasticMethod::Adam => {
            let c1 = 1.0 - ADAM_BETA1.powi(t);
            let c2 = 1.0 - ADAM_BETA2.powi(t);
            (0..g.len())
                .map(|i| {
                    m1[i] = ADAM_BETA1 * m1[i] + (1.0 - ADAM_BETA1) * g[i];
                    m2[i] = ADAM_BETA2 * m2[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                    -eta * (m1[i] / c1) / ((m2[i] / c2).sqrt() + ADAM_EPS)
                })
                .collect()
        }
        StochasticMethod::Adagrad => (0..g.len())
            .map(|i| {
                m2[i] += g[i] * g[i];
                -eta * g[i] / (m2[i].sqrt() + ADAGRAD_EPS)
            })
            .collect(),
        StochasticMethod::Rmsprop => (0..g.len())
            .map(|i| {
                m2[i] = RMSPROP_RHO * m2[i] + (1.0 - RMSPROP_RHO) * g[i] * g[i];
                -eta * g[i] / (m2[i].sqrt() + RMSPROP_EPS)
            })
            .collect(),
        StochasticMethod::Adadelta => (0..g.len())
            .map(|i| {
                m2[i] = ADADELTA_RHO * m2[i] + (1.0 - ADADELTA_RHO) * g[i] * g[i];
                let dx = -((m1[i] + ADADELTA_EPS).sqrt() / (m2[i] + ADADELTA_EPS).sqrt()) * g[i];
                m1[i] = ADADELTA_RHO * m1[i] + (1.0 - ADADELTA_RHO) * dx * dx;
                eta * dx
            })
            .collect(),
        StochasticMethod::Adamax => {
            let c1 = 1.0 - ADAM_BETA1.powi(t);
            (0..g.len())
                .map(|i| {
                    m1[i] = ADAM_BETA1 * m1[i] + (1.0 - ADAM_BETA1) * g[i];
                    m2[i] = (ADAM_BETA2 * m2[i]).max(g[i].abs() + ADAM_EPS);
                    -(eta / c1) * m1[i] / m2[i]
                })
                .collect()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StochasticConfig {
    pub method: StochasticMethod,
    pub batch_size: usize,
    pub step_size: f64,
    #[serde(default)]
    pub seed: u64,
    /// Steps between trace rows; one epoch when absent.
    #[serde(default)]
    pub record_every: Option<u64>,
}

impl StochasticConfig {
    pub fn with_defaults(method: StochasticMethod) -> Self {
        let (batch_size, step_size) = method.defaults();
        Self { method, batch_size, step_size, seed: 0, record_every: None }
    }
}

/// Runs `cfg.method`; every optimizer step counts as one iteration. Trace
/// rows leave the objective to the monitor, which evaluates it on the full
/// data outside the budget clock.
pub fn stochastic_run<O: Sampled + ?Sized>(
    obj: &O,
    x0: &[f64],
    cfg: &StochasticConfig,
    rec: Recorder<'_>,
) -> Result<RunResult> {
    if x0.len() != obj.dim() {
        return arg(format!("start point has {} entries, problem has {}", x0.len(), obj.dim()));
    }
    if !(cfg.step_size >= 0.0 && cfg.step_size.is_finite()) {
        return arg("step size must be finite and non-negative");
    }
    let mut sampler = BatchSampler::new(obj.sample_count(), cfg.batch_size, cfg.seed)?;
    let every = cfg.record_every.unwrap_or(sampler.batches_per_epoch() as u64);
    let mut rec = rec.record_every(every);
    let mut x = x0.to_vec();
    if let Some(s) = rec.start(&x, None)? {
        return rec.finish(s, &x, None);
    }
    let mut state = AdaptiveState::new(x.len());
    loop {
        let batch = sampler.next_batch();
        let Some((f, g)) = finite_or_none(obj.batch_value_grad(&x, batch))? else {
            return rec.finish(Status::Diverged, &x, Some(f64::INFINITY));
        };
        if !f.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return rec.finish(Status::Diverged, &x, Some(f64::INFINITY));
        }
        let dx = adaptive_step(&mut state, &g, cfg.method, cfg.step_size);
        x.iter_mut().zip(&dx).for_each(|(a, b)| *a += b);
        if let Some(s) = rec.step(&x, None, None)? {
            return rec.finish(s, &x, None);
        }
    }
}
