//! Run traces, budgets and the paused-clock recorder every optimizer
//! reports through.

use std::io::Write;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::Objective;

/// Why a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    /// Gradient (or method-specific) optimality test passed.
    Converged,
    /// Iteration or wall-time budget exhausted.
    Budget,
    /// No further progress possible (step floor, failed line searches).
    Stalled,
    /// Objective blew up or became non-finite.
    Diverged,
    /// Regularization search hit its cap.
    LOverflow,
    /// Requested train NMSE reached.
    TargetReached,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Converged => "converged",
            Status::Budget => "budget",
            Status::Stalled => "stalled",
            Status::Diverged => "diverged",
            Status::LOverflow => "l_overflow",
            Status::TargetReached => "target_reached",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    /// Optimizer time (monitor evaluations excluded).
    pub wall_s: f64,
    pub iteration: u64,
    pub f_value: f64,
    pub train_nmse_db: Option<f64>,
    pub val_nmse_db: Option<f64>,
    /// Method-specific scalar, e.g. the regularization constant `L_k`.
    pub aux: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    pub status: Status,
    pub fingerprint: Option<String>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.17e}")).unwrap_or_default()
}

impl RunTrace {
    pub fn last(&self) -> &TraceRow {
        self.rows.last().expect("trace has at least one row")
    }

    pub fn first(&self) -> &TraceRow {
        &self.rows[0]
    }

    /// Smallest recorded objective value.
    pub fn best_f(&self) -> f64 {
        self.rows.iter().map(|r| r.f_value).fold(f64::INFINITY, f64::min)
    }

    pub const CSV_HEADER: &'static str = "wall_s,iteration,f_value,train_nmse_db,val_nmse_db,aux";

    /// Header comment `# status=... fingerprint=...`, column header, rows.
    /// All columns but `wall_s` are deterministic for a seeded run.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "# status={} fingerprint={}",
            self.status.as_str(),
            self.fingerprint.as_deref().unwrap_or("none")
        )?;
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.rows {
            writeln!(
                w,
                "{:.9},{},{:.17e},{},{},{}",
                r.wall_s,
                r.iteration,
                r.f_value,
                opt(r.train_nmse_db),
                opt(r.val_nmse_db),
                opt(r.aux)
            )?;
        }
        Ok(())
    }
}

/// Final iterate plus its trace.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub x: Vec<f64>,
    pub trace: RunTrace,
}

/// Stopping limits shared by all optimizers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budget {
    #[serde(default)]
    pub max_iterations: Option<u64>,
    #[serde(default)]
    pub max_time_s: Option<f64>,
    /// Gradient-norm tolerance.
    #[serde(default = "default_grad_tol")]
    pub grad_tol: f64,
    /// Stop once the recorded train NMSE is at or below this level.
    #[serde(default)]
    pub target_train_db: Option<f64>,
}

fn default_grad_tol() -> f64 {
    1e-5
}

impl Default for Budget {
    fn default() -> Self {
        Self { max_iterations: Some(1000), max_time_s: None, grad_tol: default_grad_tol(), target_train_db: None }
    }
}

impl Budget {
    pub fn iterations(n: u64) -> Self {
        Self { max_iterations: Some(n), ..Self::default() }
    }

    pub fn seconds(s: f64) -> Self {
        Self { max_iterations: None, max_time_s: Some(s), ..Self::default() }
    }

    pub fn with_grad_tol(mut self, tol: f64) -> Self {
        self.grad_tol = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_iterations.is_none() && self.max_time_s.is_none() {
            return Err(Error::Argument("budget needs max_iterations or max_time_s".into()));
        }
        if self.max_time_s.is_some_and(|t| !(t > 0.0)) {
            return Err(Error::Argument("max_time_s must be positive".into()));
        }
        Ok(())
    }
}

/// Quantities recorded for one trace row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub f: f64,
    pub train_db: Option<f64>,
    pub val_db: Option<f64>,
}

/// Evaluates what a trace row shows. Time spent here is not charged to the
/// optimizer.
pub trait Monitor {
    /// `f_hint` is the objective at `x` when the optimizer already knows it.
    fn observe(&self, x: &[f64], f_hint: Option<f64>) -> Result<Observation>;
}

/// Records the objective value only.
pub struct ValueMonitor<'a, O: Objective + ?Sized>(pub &'a O);

impl<O: Objective + ?Sized> Monitor for ValueMonitor<'_, O> {
    fn observe(&self, x: &[f64], f_hint: Option<f64>) -> Result<Observation> {
        let f = match f_hint {
            Some(f) => f,
            None => self.0.value(x)?,
        };
        Ok(Observation { f, train_db: None, val_db: None })
    }
}

/// Loss growth (relative to the first row) treated as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Collects rows and enforces the [`Budget`] on a clock that is paused
/// while the monitor runs.
pub struct Recorder<'a> {
    budget: Budget,
    monitor: &'a dyn Monitor,
    started: Instant,
    paused: Duration,
    rows: Vec<TraceRow>,
    iteration: u64,
    every: u64,
    f0: Option<f64>,
    fingerprint: Option<String>,
}

impl<'a> Recorder<'a> {
    pub fn new(budget: Budget, monitor: &'a dyn Monitor) -> Self {
        Self {
            budget,
            monitor,
            started: Instant::now(),
            paused: Duration::ZERO,
            rows: Vec::new(),
            iteration: 0,
            every: 1,
            f0: None,
            fingerprint: None,
        }
    }

    /// Record a row only every `k` iterations (the last row is always kept).
    pub fn record_every(mut self, k: u64) -> Self {
        self.every = k.max(1);
        self
    }

    pub fn with_fingerprint(mut self, fp: impl Into<String>) -> Self {
        self.fingerprint = Some(fp.into());
        self
    }

    pub fn budget(&self) -> &Budget {
        &self.budget
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Optimizer seconds so far.
    pub fn elapsed(&self) -> f64 {
        (self.started.elapsed() - self.paused).as_secs_f64()
    }

    pub fn grad_converged(&self, grad_norm: f64) -> bool {
        grad_norm <= self.budget.grad_tol
    }

    fn record(&mut self, x: &[f64], f_hint: Option<f64>, aux: Option<f64>) -> Result<Observation> {
        let wall = self.elapsed();
        let t = Instant::now();
        let obs = self.monitor.observe(x, f_hint);
        self.paused += t.elapsed();
        let obs = match obs {
            Ok(o) => o,
            Err(Error::NonFinite { .. }) => Observation { f: f64::INFINITY, train_db: None, val_db: None },
            Err(e) => return Err(e),
        };
        let wall = match self.rows.last() {
            Some(r) if wall <= r.wall_s => r.wall_s + 1e-9,
            _ => wall,
        };
        self.rows.push(TraceRow {
            wall_s: wall,
            iteration: self.iteration,
            f_value: obs.f,
            train_nmse_db: obs.train_db,
            val_nmse_db: obs.val_db,
            aux,
        });
        Ok(obs)
    }

    fn check(&self, obs: Option<Observation>) -> Option<Status> {
        if let Some(o) = obs {
            if !o.f.is_finite() {
                return Some(Status::Diverged);
            }
            if let Some(f0) = self.f0 {
                if f0 > 0.0 && o.f > DIVERGENCE_FACTOR * f0 {
                    return Some(Status::Diverged);
                }
            }
            if let (Some(t), Some(db)) = (self.budget.target_train_db, o.train_db) {
                if db <= t {
                    return Some(Status::TargetReached);
                }
            }
        }
        if self.budget.max_iterations.is_some_and(|n| self.iteration >= n) {
            return Some(Status::Budget);
        }
        if self.budget.max_time_s.is_some_and(|t| self.elapsed() >= t) {
            return Some(Status::Budget);
        }
        None
    }

    /// Records the starting point (iteration 0).
    pub fn start(&mut self, x: &[f64], f: Option<f64>) -> Result<Option<Status>> {
        let obs = self.record(x, f, None)?;
        self.f0 = Some(obs.f);
        Ok(self.check(Some(obs)))
    }

    /// Counts one iteration ending at `x`; returns a status when the run
    /// must stop.
    pub fn step(&mut self, x: &[f64], f: Option<f64>, aux: Option<f64>) -> Result<Option<Status>> {
        self.iteration += 1;
        let obs = if self.iteration.is_multiple_of(self.every) { Some(self.record(x, f, aux)?) } else { None };
        Ok(self.check(obs))
    }

    /// Time-only budget check for methods with long inner loops.
    pub fn out_of_time(&self) -> bool {
        self.budget.max_time_s.is_some_and(|t| self.elapsed() >= t)
    }

    pub fn finish(mut self, status: Status, x: &[f64], f: Option<f64>) -> Result<RunResult> {
        if self.rows.last().is_none_or(|r| r.iteration != self.iteration) {
            self.record(x, f, None)?;
        }
        Ok(RunResult {
            x: x.to_vec(),
            trace: RunTrace { rows: self.rows, status, fingerprint: self.fingerprint },
        })
    }
}
