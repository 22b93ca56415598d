//! Pre-flight peak memory estimate.

use parabola_core::torus::GridSpec;

use crate::config::{Experiment, ExperimentConfig};

const MB: u64 = 1 << 20;
/// Process baseline: binary, allocator arenas, FFT plans.
const BASE: u64 = 5 * MB;

/// Dominant allocations of one grid at model scale `R`.
fn per_grid(exp: Experiment, r: u64, cfg: &ExperimentConfig) -> u64 {
    let Ok(spec) = GridSpec::standard(r) else { return 0 };
    let m = spec.m as u64;
    // coarse square-function grid: spacing L/4 at the finest caps
    let mc = (r.max(8)).next_power_of_two().min(m);
    let scales = (r as f64).log(4.0).round() as u64 + 1;
    match exp {
        Experiment::KappaScan => {
            let explicit = if cfg.family == "constant" && r <= 256 { m * m * 48 } else { 0 };
            explicit + 64 * m
        }
        Experiment::SquareVerify | Experiment::EnvelopeVerify | Experiment::ExamplesSuite => {
            mc * mc * 8 * (scales + 4) + mc * mc * 16 + 64 * m
        }
        Experiment::BroadNarrow => {
            let fine = 2 * (r as f64).sqrt() as u64;
            cfg.points as u64 * fine * 16 * 2 + 32 * m
        }
        Experiment::Bilinear => {
            // pair fields on the doubled grid plus their FFT scratch
            let nb = 2 * r;
            nb * nb * 80
        }
        Experiment::SchrodingerFls => 0,
        Experiment::Certificates => {
            let n = (1.0 / cfg.resolution).round() as u64;
            n * n * 24 * 4
        }
    }
}

/// Estimated peak resident memory of a run, in bytes.
pub fn estimate_bytes(cfg: &ExperimentConfig) -> u64 {
    let workers = crate::threads(cfg.deterministic) as u64;
    let rs = match cfg.experiment {
        Experiment::ExamplesSuite if !cfg.r.is_empty() => crate::experiments::suite_grid(&cfg.r),
        _ => cfg.r.clone(),
    };
    let grids = rs.iter().map(|&r| per_grid(cfg.experiment, r, cfg)).max().unwrap_or(0);
    let line = match cfg.experiment {
        Experiment::SchrodingerFls => {
            // one line slice per scale
            let rmax = cfg.r.iter().copied().max().unwrap_or(0);
            rmax.next_power_of_two() * 16
        }
        _ => 0,
    };
    BASE + workers.min(cfg.r.len().max(1) as u64) * grids + line
}

/// Peak resident set size of this process, where the platform reports it.
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}
