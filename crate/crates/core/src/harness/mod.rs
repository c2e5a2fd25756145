//! Desk-scale measurement tools: read-latency curves against stream length,
//! budget ablation sweeps and a PCA export of memory tokens.

pub mod latency;
pub mod pca;
pub mod sweep;

pub use latency::{bench_latency, BenchMode, BenchOptions, BenchReport, BenchRow, KeepAllMemory};
pub use pca::{export_memory_pca, principal_axes, PcaExport, PcaPoint, PointLabel, PrincipalAxes};
pub use sweep::{sweep_ablation, write_sweep_csv, GridSpec, SweepOptions, SweepRow, DEFAULT_GRID};

/// Value at quantile `q` (0..=1) of `samples` by nearest rank. Sorts in place.
pub fn percentile(samples: &mut [u64], q: f64) -> u64 {
    if samples.is_empty() {
        return 0;
    }
    samples.sort_unstable();
    let rank = (q * samples.len() as f64).ceil() as usize;
    samples[rank.clamp(1, samples.len()) - 1]
}

/// Resident set size of this process, if the platform exposes it.
pub fn resident_bytes() -> Option<u64> {
    let statm = std::fs::read_to_string("/proc/self/statm").ok()?;
    let pages: u64 = statm.split_whitespace().nth(1)?.parse().ok()?;
    Some(pages * 4096)
}
