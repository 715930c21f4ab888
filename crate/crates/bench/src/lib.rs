//! Experiment runner for the whdpd optimizers.
//!
//! A run is fully described by an [`ExperimentConfig`]; every artifact it
//! writes carries the config fingerprint, and all columns except the
//! wall-clock ones are reproducible from the config alone.

pub mod config;
pub mod report;
pub mod runner;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

pub use config::ExperimentConfig;
pub use report::time_to_threshold;
pub use runner::{run_experiment, RunOutcome};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    /// Invalid or unreadable configuration; maps to exit code 2.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] whdpd_core::Error),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl From<csv::Error> for BenchError {
    fn from(e: csv::Error) -> Self {
        Self::Io(std::io::Error::other(e))
    }
}

/// `f` over `items` on up to `threads` worker threads; results keep the
/// input order.
pub fn parallel_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    let threads = threads.clamp(1, items.len().max(1));
    if threads == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..threads {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(item) = items.get(i) else { break };
                let r = f(item);
                out.lock().expect("result slot lock")[i] = Some(r);
            });
        }
    });
    out.into_inner().expect("result slot lock").into_iter().map(|r| r.expect("every item ran")).collect()
}
