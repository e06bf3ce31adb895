//! Data-parallel execution with a pinned worker count.

use std::sync::Arc;

use rayon::prelude::*;
use rayon::ThreadPool;

use crate::error::{Error, Result};

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "AUXMC_WORKERS";

/// Below this many items a parallel map runs inline.
const GRAIN: usize = 64;

/// Worker pool handle. Results never depend on the worker count: work is
/// split over fixed index ranges and reassembled in order.
#[derive(Clone, Default)]
pub struct Exec {
    pool: Option<Arc<ThreadPool>>,
}

impl std::fmt::Debug for Exec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Exec").field("workers", &self.workers()).finish()
    }
}

impl Exec {
    pub fn sequential() -> Self {
        Self { pool: None }
    }

    pub fn with_workers(workers: usize) -> Result<Self> {
        if workers <= 1 {
            return Ok(Self::sequential());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        Ok(Self {
            pool: Some(Arc::new(pool)),
        })
    }

    /// Worker count from [`WORKERS_ENV`] when set, `default` otherwise.
    pub fn from_env(default: usize) -> Result<Self> {
        let workers = match std::env::var(WORKERS_ENV) {
            Ok(v) => v
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("{WORKERS_ENV}={v} is not a worker count")))?,
            Err(_) => default,
        };
        Self::with_workers(workers)
    }

    pub fn workers(&self) -> usize {
        self.pool.as_ref().map_or(1, |p| p.current_num_threads())
    }

    pub fn is_parallel(&self) -> bool {
        self.pool.is_some()
    }

    /// Runs `f` inside the pool.
    pub fn install<T: Send>(&self, f: impl FnOnce() -> T + Send) -> T {
        match &self.pool {
            Some(p) => p.install(f),
            None => f(),
        }
    }

    pub fn join<A, B, RA, RB>(&self, a: A, b: B) -> (RA, RB)
    where
        A: FnOnce() -> RA + Send,
        B: FnOnce() -> RB + Send,
        RA: Send,
        RB: Send,
    {
        if self.is_parallel() {
            rayon::join(a, b)
        } else {
            (a(), b())
        }
    }

    /// Order-preserving map over `0..n`.
    pub fn map<U, F>(&self, n: usize, f: F) -> Vec<U>
    where
        U: Send,
        F: Fn(usize) -> U + Sync + Send,
    {
        if self.is_parallel() && n >= GRAIN {
            (0..n).into_par_iter().with_min_len(GRAIN / 4).map(f).collect()
        } else {
            (0..n).map(f).collect()
        }
    }
}
