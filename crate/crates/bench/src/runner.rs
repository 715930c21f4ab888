//! Builds the problem an [`ExperimentConfig`] describes, runs its optimizer
//! and writes the run artifacts.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use whdpd_core::diff::{NmseMonitor, ResidualSystem};
use whdpd_core::model::{init_he, init_xavier, ParamFile, ShiftedInit};
use whdpd_core::optim::fullgrad::{self, FullGradMethod, QuasiNewtonRule, StepControl};
use whdpd_core::optim::gauss_newton::{self, GaussNewtonMethod, LmDamping};
use whdpd_core::optim::global::{differential_evolution, simulated_annealing, BoxBounds};
use whdpd_core::optim::stochastic::{stochastic_run, StochasticConfig};
use whdpd_core::pa::{make_dpd_dataset, read_dataset, write_dataset};
use whdpd_core::problem::{LeastSquares, Objective};
use whdpd_core::signal::{split_sequential, Dataset, ParamVector};
use whdpd_core::trace::{Recorder, RunTrace, Status};

use crate::config::{DatasetSpec, ExperimentConfig, InitSpec, OptimizerSpec};
use crate::report::Summary;
use crate::BenchError;

pub fn load_dataset(spec: &DatasetSpec) -> Result<Dataset, BenchError> {
    match spec {
        DatasetSpec::File { path } => {
            let f = File::open(path).map_err(|e| BenchError::Config(format!("dataset {}: {e}", path.display())))?;
            Ok(read_dataset(BufReader::new(f))?)
        }
        DatasetSpec::Synthetic { pa, .. } => {
            let (signal, _) = spec.signal_spec().expect("synthetic spec");
            Ok(make_dpd_dataset(&signal, pa, pa.g0)?)
        }
    }
}

/// Writes the synthetic dataset `spec` describes.
pub fn generate(spec: &DatasetSpec, path: &Path) -> Result<Dataset, BenchError> {
    if matches!(spec, DatasetSpec::File { .. }) {
        return Err(BenchError::Config("generate needs a synthetic dataset spec".into()));
    }
    let d = load_dataset(spec)?;
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset(&d, &mut w)?;
    w.flush()?;
    Ok(d)
}

pub fn initial_params(cfg: &ExperimentConfig) -> Result<ParamVector, BenchError> {
    Ok(match cfg.init {
        InitSpec::Xavier {} => init_xavier(&cfg.model, cfg.seed)?,
        InitSpec::He {} => init_he(&cfg.model, cfg.seed)?,
        InitSpec::Shifted { alpha, identity_tap } => ShiftedInit { alpha, identity_tap }.apply(&cfg.model)?,
    })
}

/// Train and validation systems for a config.
pub struct Problem {
    pub train: ResidualSystem,
    pub val: ResidualSystem,
}

impl Problem {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self, BenchError> {
        Self::from_dataset(cfg, &load_dataset(&cfg.dataset)?)
    }

    pub fn from_dataset(cfg: &ExperimentConfig, d: &Dataset) -> Result<Self, BenchError> {
        let (tr, va) = split_sequential(d, cfg.train_fraction)?;
        Ok(Self { train: ResidualSystem::new(cfg.model.clone(), &tr)?, val: ResidualSystem::new(cfg.model.clone(), &va)? })
    }
}

/// Result of one run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub fingerprint: String,
    pub trace: RunTrace,
    pub params: Vec<f64>,
    pub summary: Summary,
}

impl RunOutcome {
    pub fn diverged(&self) -> bool {
        self.trace.status == Status::Diverged
    }
}

/// Runs the configured optimizer; writes artifacts when `output_dir` is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutcome, BenchError> {
    cfg.validate()?;
    let problem = Problem::new(cfg)?;
    run_on(cfg, &problem)
}

/// [`run_experiment`] on an already built problem.
pub fn run_on(cfg: &ExperimentConfig, problem: &Problem) -> Result<RunOutcome, BenchError> {
    let fp = cfg.fingerprint();
    let x0 = initial_params(cfg)?.into_values();
    let result = optimize(cfg, problem, &x0, &fp)?;
    let summary = Summary::new(cfg, &fp, &result.trace);
    let out = RunOutcome { fingerprint: fp, trace: result.trace, params: result.x, summary };
    if let Some(dir) = &cfg.output_dir {
        write_outputs(dir, cfg, &out)?;
    }
    Ok(out)
}

fn optimize(
    cfg: &ExperimentConfig,
    p: &Problem,
    x0: &[f64],
    fp: &str,
) -> Result<whdpd_core::trace::RunResult, BenchError> {
    let sys = &p.train;
    let mon = NmseMonitor { train: sys, val: Some(&p.val) };
    let mut budget = cfg.budget;
    if let Some(gain) = cfg.stop_after_improvement_db {
        let db0 = sys.nmse_db(x0).unwrap_or(f64::INFINITY);
        if db0.is_finite() {
            let t = db0 - gain;
            budget.target_train_db = Some(budget.target_train_db.map_or(t, |b| b.max(t)));
        }
    }
    let rec = Recorder::new(budget, &mon).with_fingerprint(fp);
    let ctl = StepControl::default();
    let n = sys.dim();
    let full = |m: FullGradMethod, rec| fullgrad::minimize(sys, x0, &m, &ctl, rec);
    let gn = |m: GaussNewtonMethod, rec| gauss_newton::minimize(sys, x0, &m, rec);
    let cube = |r: f64| BoxBounds::cube(n, -r, r);
    let r = match cfg.optimizer.clone() {
        OptimizerSpec::Sdm {} => full(FullGradMethod::Sdm, rec),
        OptimizerSpec::Polyak { variant, f_star } => full(FullGradMethod::Polyak { variant, f_star }, rec),
        OptimizerSpec::Bb { variant } => full(FullGradMethod::Bb { variant }, rec),
        OptimizerSpec::Raider { d_level } => full(FullGradMethod::Raider { d_level }, rec),
        OptimizerSpec::Cg { variant, restart } => full(FullGradMethod::Cg { variant, restart }, rec),
        OptimizerSpec::Bfgs { restart } => full(FullGradMethod::QuasiNewton { rule: QuasiNewtonRule::Bfgs, restart }, rec),
        OptimizerSpec::Dfp { restart } => full(FullGradMethod::QuasiNewton { rule: QuasiNewtonRule::Dfp, restart }, rec),
        OptimizerSpec::Lbfgs { history } => full(FullGradMethod::Lbfgs { history }, rec),
        OptimizerSpec::Tsm { l } => gn(GaussNewtonMethod::Tsm { l }, rec),
        OptimizerSpec::Nsgn { l } => gn(GaussNewtonMethod::Nsgn { l }, rec),
        OptimizerSpec::Ssm { batch, batch_factor, l0 } => {
            // factor-derived batches are capped at the residual count
            let batch = batch.unwrap_or(((batch_factor * n as f64).round() as usize).min(sys.residual_count()));
            gn(GaussNewtonMethod::Ssm { batch, l0, seed: cfg.seed }, rec)
        }
        OptimizerSpec::Lm { variant, params } => {
            let damping = LmDamping::from_variant(variant)?;
            gn(GaussNewtonMethod::Lm { damping, params }, rec)
        }
        OptimizerSpec::Stochastic { algorithm, batch_size, step_size, record_every } => {
            let d = StochasticConfig::with_defaults(algorithm);
            let sc = StochasticConfig {
                method: algorithm,
                batch_size: batch_size.unwrap_or(d.batch_size.min(sys.samples())),
                step_size: step_size.unwrap_or(d.step_size),
                seed: cfg.seed,
                record_every,
            };
            stochastic_run(sys, x0, &sc, rec)
        }
        OptimizerSpec::Sa { params, radius } => simulated_annealing(sys, x0, &params, &cube(radius)?, cfg.seed, rec),
        OptimizerSpec::De { params, radius } => differential_evolution(sys, x0, &params, &cube(radius)?, cfg.seed, rec),
    };
    Ok(r?)
}

/// `params.json`: the parameter file tagged with the run fingerprint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsDocument {
    pub fingerprint: String,
    pub param_file: ParamFile,
}

/// `trace.csv`, `summary.csv`, `summary.json`, `params.json` and the
/// resolved `config.toml`.
pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, out: &RunOutcome) -> Result<(), BenchError> {
    fs::create_dir_all(dir)?;
    let mut w = BufWriter::new(File::create(dir.join("trace.csv"))?);
    out.trace.write_csv(&mut w)?;
    w.flush()?;
    crate::report::write_summary_csv(File::create(dir.join("summary.csv"))?, &[&out.summary])?;
    let mut s = serde_json::to_string_pretty(&out.summary).expect("summary serializes");
    s.push('\n');
    fs::write(dir.join("summary.json"), s)?;
    let values = ParamVector::from_values(out.params.clone())?;
    let doc = ParamsDocument { fingerprint: out.fingerprint.clone(), param_file: ParamFile::new(cfg.model.clone(), &values)? };
    let mut s = serde_json::to_string_pretty(&doc).expect("params serialize");
    s.push('\n');
    fs::write(dir.join("params.json"), s)?;
    fs::write(dir.join("config.toml"), format!("# fingerprint={}\n{}", out.fingerprint, cfg.to_toml()))?;
    Ok(())
}

/// Initial train NMSE (dB) of the configured initialization.
pub fn initial_nmse_db(cfg: &ExperimentConfig, problem: &Problem) -> Result<f64, BenchError> {
    let x0 = initial_params(cfg)?;
    Ok(problem.train.nmse_db(x0.as_slice())?)
}
