//! Deterministic parallel maps over path indices.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Environment variable holding the worker count.
pub const THREADS_ENV: &str = "STOCHHAM_THREADS";

/// Worker count from [`THREADS_ENV`], if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()?
        .trim()
        .parse()
        .ok()
        .filter(|&n: &usize| n > 0)
}

/// Runs closures over `0..n` on a pool and returns results in index order,
/// so any reduction over the output is independent of scheduling.
#[derive(Debug, Clone, Copy, Default)]
pub struct Ensemble {
    threads: Option<usize>,
}

impl Ensemble {
    /// `None` uses [`threads_from_env`], falling back to the available parallelism.
    pub fn new(threads: Option<usize>) -> Self {
        Self {
            threads: threads.or_else(threads_from_env),
        }
    }

    pub fn serial() -> Self {
        Self { threads: Some(1) }
    }

    pub fn threads(&self) -> usize {
        self.threads.unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
    }

    pub fn map<T: Send>(
        &self,
        n: usize,
        f: impl Fn(u64) -> Result<T> + Sync + Send,
    ) -> Result<Vec<T>> {
        let threads = self.threads();
        if threads == 1 {
            return (0..n as u64).map(f).collect();
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Argument(format!("cannot start {threads} workers: {e}")))?;
        pool.install(|| (0..n as u64).into_par_iter().map(f).collect())
    }
}
