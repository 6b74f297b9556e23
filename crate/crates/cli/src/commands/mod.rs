//! Subcommand implementations. Each takes the resolved configuration,
//! performs its own path checks before any side effect, and writes data to
//! files while keeping diagnostics on standard error.

pub mod eval;
pub mod expand;
pub mod fixture;
pub mod perturb;
pub mod report;
pub mod supervise;

use anyhow::Result;

/// Builds the bounded worker pool; `jobs == 0` means one thread per core.
pub(crate) fn worker_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(Into::into)
}
