//! Configured, reproducible experiment runs over the parabola toolkit.

pub mod config;
pub mod experiments;
pub mod memory;
pub mod report;

pub use config::{Experiment, ExperimentConfig};
pub use experiments::run;
pub use report::{emit, Bundle, CriterionResult, Format, Report, Row};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("pre-flight: estimated peak memory {estimate_mb} MB exceeds the cap of {cap_mb} MB")]
    Memory { estimate_mb: u64, cap_mb: u64 },
    #[error(transparent)]
    Core(#[from] parabola_core::error::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CliError>;

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "PARABOLA_THREADS";

/// Worker threads: one in deterministic mode, otherwise `PARABOLA_THREADS` or the core count.
pub fn threads(deterministic: bool) -> usize {
    if deterministic {
        return 1;
    }
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Maps `f` over `items` on `threads` workers; results keep the input order.
pub fn par_map<T: Sync, U: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> U + Sync) -> Vec<U> {
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut out: Vec<(usize, U)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..threads.min(items.len()))
            .map(|_| {
                s.spawn(|| {
                    let mut local = Vec::new();
                    loop {
                        let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                        if i >= items.len() {
                            break;
                        }
                        local.push((i, f(&items[i])));
                    }
                    local
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    });
    out.sort_by_key(|(i, _)| *i);
    out.into_iter().map(|(_, u)| u).collect()
}
