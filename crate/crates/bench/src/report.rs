//! Report tables: run summaries, time-to-threshold, configuration sweeps,
//! overfitting and multistart studies.
//!
//! `summary.csv` column order is frozen:
//!
//! ```text
//! fingerprint,method,status,iterations,wall_s,f_final,
//! train_nmse_db_initial,train_nmse_db_final,val_nmse_db_final,
//! t_<thr>db ...   (one per configured threshold, in config order)
//! ```
//!
//! `wall_s` and the `t_*` columns are wall-clock seconds; every other
//! column is reproducible. Missing values are empty cells.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use whdpd_core::model::ModelConfig;
use whdpd_core::optim::global::{multistart, BoxBounds};
use whdpd_core::trace::{Budget, RunTrace};

use crate::config::ExperimentConfig;
use crate::runner::{initial_params, run_on, Problem};
use crate::{parallel_map, BenchError};

/// Seconds at the first row whose train NMSE is at or below each
/// threshold; `None` when the trace never gets there.
pub fn time_to_threshold(trace: &RunTrace, thresholds: &[f64]) -> Vec<Option<f64>> {
    thresholds
        .iter()
        .map(|&t| trace.rows.iter().find(|r| r.train_nmse_db.is_some_and(|db| db <= t)).map(|r| r.wall_s))
        .collect()
}

/// Per-run summary (`summary.json`, one `summary.csv` row).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub fingerprint: String,
    pub method: String,
    pub status: String,
    pub iterations: u64,
    pub wall_s: f64,
    pub f_final: f64,
    pub train_nmse_db_initial: Option<f64>,
    pub train_nmse_db_final: Option<f64>,
    pub val_nmse_db_final: Option<f64>,
    pub thresholds_db: Vec<f64>,
    pub time_to_threshold_s: Vec<Option<f64>>,
}

impl Summary {
    pub fn new(cfg: &ExperimentConfig, fingerprint: &str, trace: &RunTrace) -> Self {
        let (first, last) = (trace.first(), trace.last());
        Self {
            fingerprint: fingerprint.to_owned(),
            method: cfg.optimizer.label(),
            status: trace.status.as_str().to_owned(),
            iterations: last.iteration,
            wall_s: last.wall_s,
            f_final: last.f_value,
            train_nmse_db_initial: first.train_nmse_db,
            train_nmse_db_final: last.train_nmse_db,
            val_nmse_db_final: last.val_nmse_db,
            thresholds_db: cfg.thresholds_db.clone(),
            time_to_threshold_s: time_to_threshold(trace, &cfg.thresholds_db),
        }
    }
}

pub const SUMMARY_FIXED_COLUMNS: [&str; 9] = [
    "fingerprint",
    "method",
    "status",
    "iterations",
    "wall_s",
    "f_final",
    "train_nmse_db_initial",
    "train_nmse_db_final",
    "val_nmse_db_final",
];

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.17e}")).unwrap_or_default()
}

fn time_cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn threshold_column(t: f64) -> String {
    format!("t_{t}db")
}

/// Header from the first summary's thresholds; all rows must share them.
pub fn write_summary_csv<W: Write>(w: W, rows: &[&Summary]) -> Result<(), BenchError> {
    let mut wr = csv::Writer::from_writer(w);
    let thresholds = rows.first().map(|s| s.thresholds_db.clone()).unwrap_or_default();
    let mut header: Vec<String> = SUMMARY_FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(thresholds.iter().map(|&t| threshold_column(t)));
    wr.write_record(&header)?;
    for s in rows {
        if s.thresholds_db != thresholds {
            return Err(BenchError::Config("summaries with different thresholds in one table".into()));
        }
        let mut rec = vec![
            s.fingerprint.clone(),
            s.method.clone(),
            s.status.clone(),
            s.iterations.to_string(),
            time_cell(Some(s.wall_s)),
            cell(Some(s.f_final)),
            cell(s.train_nmse_db_initial),
            cell(s.train_nmse_db_final),
            cell(s.val_nmse_db_final),
        ];
        rec.extend(s.time_to_threshold_s.iter().map(|&t| time_cell(t)));
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

/// Sweep file: a base experiment and model variants grouped for
/// equal-parameter comparisons.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub schema_version: u32,
    /// Wall-clock seconds at which each run's train NMSE is reported.
    #[serde(default)]
    pub checkpoints_s: Vec<f64>,
    pub base: ExperimentConfig,
    #[serde(default)]
    pub entry: Vec<SweepEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepEntry {
    /// Entries sharing a group must have the same parameter count.
    pub group: String,
    #[serde(default)]
    pub label: Option<String>,
    pub model: ModelConfig,
}

impl SweepConfig {
    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        let s: Self = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        if s.schema_version != crate::config::SCHEMA_VERSION {
            return Err(BenchError::Config(format!("unsupported sweep schema_version {}", s.schema_version)));
        }
        s.base.validate()?;
        if s.checkpoints_s.iter().any(|c| c.is_nan() || *c < 0.0) {
            return Err(BenchError::Config("checkpoints_s must be non-negative".into()));
        }
        for (i, e) in s.entry.iter().enumerate() {
            e.model.validate().map_err(|err| BenchError::Config(format!("entry {i}: {err}")))?;
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            BenchError::Config(m) => BenchError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// Errors when two entries of one group differ in complex parameter count.
pub fn check_groups(entries: &[SweepEntry]) -> Result<(), BenchError> {
    let mut seen: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for (i, e) in entries.iter().enumerate() {
        let count = e.model.param_count();
        match seen.get(e.group.as_str()) {
            Some(&(j, c)) if c != count => {
                return Err(BenchError::Config(format!(
                    "group '{}': entry {j} has {c} complex parameters but entry {i} has {count}",
                    e.group
                )));
            }
            Some(_) => {}
            None => {
                seen.insert(&e.group, (i, count));
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub group: String,
    pub label: String,
    pub layers: usize,
    /// Blocks per layer, `/`-joined when layers differ.
    pub blocks: String,
    pub param_count: usize,
    pub fingerprint: String,
    pub status: String,
    pub iterations: u64,
    pub train_nmse_db_final: Option<f64>,
    /// Train NMSE of the last row recorded at or before each checkpoint.
    pub db_at_checkpoint: Vec<Option<f64>>,
}

fn blocks_label(m: &ModelConfig) -> String {
    let b: Vec<usize> = m.layers.iter().map(|l| l.blocks).collect();
    if b.windows(2).all(|w| w[0] == w[1]) {
        b[0].to_string()
    } else {
        b.iter().map(usize::to_string).collect::<Vec<_>>().join("/")
    }
}

fn db_at(trace: &RunTrace, t: f64) -> Option<f64> {
    trace.rows.iter().take_while(|r| r.wall_s <= t).filter_map(|r| r.train_nmse_db).last()
}

/// Runs every entry of the sweep; each run writes into
/// `out/<index>_<label>/` when `out` is given.
pub fn config_sweep(sweep: &SweepConfig, out: Option<&Path>, threads: usize) -> Result<Vec<SweepRow>, BenchError> {
    check_groups(&sweep.entry)?;
    let jobs: Vec<(usize, &SweepEntry)> = sweep.entry.iter().enumerate().collect();
    let results = parallel_map(&jobs, threads, |&(i, e)| -> Result<SweepRow, BenchError> {
        let label = e.label.clone().unwrap_or_else(|| format!("{}x{}", e.model.layers.len(), blocks_label(&e.model)));
        let mut cfg = sweep.base.clone();
        cfg.model = e.model.clone();
        cfg.output_dir = out.map(|d| d.join(format!("{i:03}_{}", sanitize(&label))));
        let r = run_on(&cfg, &Problem::new(&cfg)?)?;
        Ok(SweepRow {
            group: e.group.clone(),
            label,
            layers: e.model.layers.len(),
            blocks: blocks_label(&e.model),
            param_count: e.model.param_count(),
            fingerprint: r.fingerprint.clone(),
            status: r.summary.status.clone(),
            iterations: r.summary.iterations,
            train_nmse_db_final: r.summary.train_nmse_db_final,
            db_at_checkpoint: sweep.checkpoints_s.iter().map(|&c| db_at(&r.trace, c)).collect(),
        })
    });
    results.into_iter().collect()
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

pub fn write_sweep_csv<W: Write>(w: W, checkpoints: &[f64], rows: &[SweepRow]) -> Result<(), BenchError> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = [
        "group",
        "label",
        "layers",
        "blocks",
        "param_count",
        "fingerprint",
        "status",
        "iterations",
        "train_nmse_db_final",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend(checkpoints.iter().map(|c| format!("db_at_{c}s")));
    wr.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            r.group.clone(),
            r.label.clone(),
            r.layers.to_string(),
            r.blocks.clone(),
            r.param_count.to_string(),
            r.fingerprint.clone(),
            r.status.clone(),
            r.iterations.to_string(),
            cell(r.train_nmse_db_final),
        ];
        rec.extend(r.db_at_checkpoint.iter().map(|&v| cell(v)));
        wr.write_record(&rec)?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverfitRow {
    pub fraction: f64,
    pub fingerprint: String,
    pub status: String,
    pub iterations: u64,
    pub train_nmse_db: Option<f64>,
    pub val_nmse_db: Option<f64>,
    /// `val - train` in dB.
    pub gap_db: Option<f64>,
}

/// Runs the configured optimizer once per train fraction (sequential split).
pub fn overfitting_report(
    cfg: &ExperimentConfig,
    fractions: &[f64],
    out: Option<&Path>,
    threads: usize,
) -> Result<Vec<OverfitRow>, BenchError> {
    if let Some(f) = fractions.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
        return Err(BenchError::Config(format!("train fractions must lie in (0, 1), got {f}")));
    }
    let data = crate::runner::load_dataset(&cfg.dataset)?;
    let results = parallel_map(fractions, threads, |&fraction| -> Result<OverfitRow, BenchError> {
        let mut c = cfg.clone();
        c.train_fraction = fraction;
        c.output_dir = out.map(|d| d.join(format!("fraction_{fraction}")));
        let r = run_on(&c, &Problem::from_dataset(&c, &data)?)?;
        let (train, val) = (r.summary.train_nmse_db_final, r.summary.val_nmse_db_final);
        Ok(OverfitRow {
            fraction,
            fingerprint: r.fingerprint,
            status: r.summary.status,
            iterations: r.summary.iterations,
            train_nmse_db: train,
            val_nmse_db: val,
            gap_db: train.zip(val).map(|(t, v)| v - t),
        })
    });
    results.into_iter().collect()
}

pub fn write_overfit_csv<W: Write>(w: W, rows: &[OverfitRow]) -> Result<(), BenchError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["fraction", "fingerprint", "status", "iterations", "train_nmse_db", "val_nmse_db", "gap_db"])?;
    for r in rows {
        wr.write_record([
            r.fraction.to_string(),
            r.fingerprint.clone(),
            r.status.clone(),
            r.iterations.to_string(),
            cell(r.train_nmse_db),
            cell(r.val_nmse_db),
            cell(r.gap_db),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MultistartRow {
    pub rank: usize,
    pub status: String,
    pub f_final: f64,
    pub train_nmse_db: Option<f64>,
    pub val_nmse_db: Option<f64>,
    /// Euclidean norm of the start point.
    pub start_norm: f64,
}

/// L-BFGS descents from random starts; rows sorted best first. The best
/// parameters are returned alongside.
pub fn multistart_report(cfg: &ExperimentConfig) -> Result<(Vec<MultistartRow>, Vec<f64>), BenchError> {
    let p = Problem::new(cfg)?;
    let ms = &cfg.multistart;
    let n = initial_params(cfg)?.as_slice().len();
    let starts = BoxBounds::cube(n, -ms.start_radius, ms.start_radius)?;
    let inner = Budget { max_iterations: Some(ms.iterations), ..cfg.budget };
    let outcomes = multistart(&p.train, ms.starts, &starts, cfg.seed, inner, ms.history)?;
    let finite_db = |r: whdpd_core::Result<f64>| r.ok().filter(|v| v.is_finite());
    let rows = outcomes
        .iter()
        .enumerate()
        .map(|(rank, o)| MultistartRow {
            rank,
            status: o.status.as_str().to_owned(),
            f_final: o.f,
            train_nmse_db: finite_db(p.train.nmse_db(&o.x)),
            val_nmse_db: finite_db(p.val.nmse_db(&o.x)),
            start_norm: o.start.iter().map(|v| v * v).sum::<f64>().sqrt(),
        })
        .collect();
    Ok((rows, outcomes[0].x.clone()))
}

pub fn write_multistart_csv<W: Write>(w: W, fingerprint: &str, rows: &[MultistartRow]) -> Result<(), BenchError> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["fingerprint", "rank", "status", "f_final", "train_nmse_db", "val_nmse_db", "start_norm"])?;
    for r in rows {
        wr.write_record([
            fingerprint.to_owned(),
            r.rank.to_string(),
            r.status.clone(),
            cell(Some(r.f_final)),
            cell(r.train_nmse_db),
            cell(r.val_nmse_db),
            cell(Some(r.start_norm)),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

/// `dir/name`, creating `dir`.
pub fn artifact_path(dir: &Path, name: &str) -> Result<PathBuf, BenchError> {
    std::fs::create_dir_all(dir)?;
    Ok(dir.join(name))
}
