use std::fs::File;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use whdpd_bench::config::{DatasetSpec, ExperimentConfig};
use whdpd_bench::report::{self, SweepConfig};
use whdpd_bench::runner::{self, ParamsDocument};
use whdpd_bench::{BenchError, run_experiment};
use whdpd_core::model::ParamFile;
use whdpd_core::signal::ParamVector;

/// Exit codes: 0 ok, 1 runtime error, 2 config error, 3 divergence.
#[derive(Parser)]
#[command(name = "whdpd", version, about = "Timed optimizer experiments on the cascade Wiener-Hammerstein DPD model")]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment (or sweep) config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (dataset file for `generate`); overrides `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed (the dataset seed for `generate`).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for independent runs of `sweep` and `overfit`.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Verb {
    /// Write the synthetic dataset of a config to a file.
    Generate(Common),
    /// Run one experiment.
    Run(Common),
    /// Run every model variant of a sweep file.
    Sweep(Common),
    /// Train-fraction study with sequential splits.
    Overfit(Common),
    /// L-BFGS descents from random starts.
    Multistart(Common),
}

enum Outcome {
    Ok,
    Diverged,
}

fn load(c: &Common) -> Result<ExperimentConfig, BenchError> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.output_dir = Some(o.clone());
    }
    Ok(cfg)
}

fn out_dir(c: &Common, cfg: &ExperimentConfig) -> Result<PathBuf, BenchError> {
    c.out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .ok_or_else(|| BenchError::Config("no output directory: pass --out or set output_dir".into()))
}

fn generate(c: &Common) -> Result<Outcome, BenchError> {
    let mut cfg = ExperimentConfig::load(&c.config)?;
    if let (Some(s), DatasetSpec::Synthetic { seed, .. }) = (c.seed, &mut cfg.dataset) {
        *seed = s;
    }
    let path = c.out.clone().ok_or_else(|| BenchError::Config("generate needs --out <file>".into()))?;
    let d = runner::generate(&cfg.dataset, &path)?;
    eprintln!("wrote {} samples to {}", d.len(), path.display());
    Ok(Outcome::Ok)
}

fn run(c: &Common) -> Result<Outcome, BenchError> {
    let cfg = load(c)?;
    let out = run_experiment(&cfg)?;
    if cfg.output_dir.is_none() {
        report::write_summary_csv(std::io::stdout().lock(), &[&out.summary])?;
    }
    eprintln!("{}: {} after {} iterations", out.fingerprint, out.summary.status, out.summary.iterations);
    Ok(if out.diverged() { Outcome::Diverged } else { Outcome::Ok })
}

fn sweep(c: &Common) -> Result<Outcome, BenchError> {
    let mut s = SweepConfig::load(&c.config)?;
    if let Some(seed) = c.seed {
        s.base.seed = seed;
    }
    let dir = c.out.clone().or_else(|| s.base.output_dir.clone());
    let rows = report::config_sweep(&s, dir.as_deref(), c.threads)?;
    match &dir {
        Some(d) => report::write_sweep_csv(File::create(report::artifact_path(d, "sweep.csv")?)?, &s.checkpoints_s, &rows)?,
        None => report::write_sweep_csv(std::io::stdout().lock(), &s.checkpoints_s, &rows)?,
    }
    Ok(if rows.iter().any(|r| r.status == "diverged") { Outcome::Diverged } else { Outcome::Ok })
}

fn overfit(c: &Common) -> Result<Outcome, BenchError> {
    let cfg = load(c)?;
    let dir = out_dir(c, &cfg)?;
    let rows = report::overfitting_report(&cfg, &cfg.overfit_fractions, Some(&dir), c.threads)?;
    report::write_overfit_csv(File::create(report::artifact_path(&dir, "overfit.csv")?)?, &rows)?;
    Ok(if rows.iter().any(|r| r.status == "diverged") { Outcome::Diverged } else { Outcome::Ok })
}

fn multistart(c: &Common) -> Result<Outcome, BenchError> {
    let cfg = load(c)?;
    let dir = out_dir(c, &cfg)?;
    let fp = cfg.fingerprint();
    let (rows, best) = report::multistart_report(&cfg)?;
    report::write_multistart_csv(File::create(report::artifact_path(&dir, "multistart.csv")?)?, &fp, &rows)?;
    let doc = ParamsDocument {
        fingerprint: fp,
        param_file: ParamFile::new(cfg.model.clone(), &ParamVector::from_values(best)?)?,
    };
    std::fs::write(dir.join("best_params.json"), serde_json::to_string_pretty(&doc).expect("params serialize") + "\n")?;
    Ok(Outcome::Ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match &cli.verb {
        Verb::Generate(c) => generate(c),
        Verb::Run(c) => run(c),
        Verb::Sweep(c) => sweep(c),
        Verb::Overfit(c) => overfit(c),
        Verb::Multistart(c) => multistart(c),
    };
    match r {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Diverged) => {
            eprintln!("run diverged; trace persisted with status");
            ExitCode::from(3)
        }
        Err(e @ BenchError::Config(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
