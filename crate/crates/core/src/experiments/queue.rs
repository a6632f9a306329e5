use rayon::prelude::*;

use crate::error::{Error, Result};

/// Fixed-size pool that runs independent tasks and returns results in task
/// order. Tasks derive their own seeds, so the output does not depend on the
/// number of workers.
pub struct WorkQueue {
    pool: rayon::ThreadPool,
    workers: usize,
}

impl WorkQueue {
    pub fn new(workers: usize) -> Result<Self> {
        let workers = workers.max(1);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {workers} workers: {e}")))?;
        Ok(Self { pool, workers })
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    /// `f(0), …, f(n−1)` in parallel, collected in index order.
    pub fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool
            .install(|| (0..n).into_par_iter().map(&f).collect())
    }
}

impl std::fmt::Debug for WorkQueue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("WorkQueue")
            .field("workers", &self.workers)
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn order_and_results_do_not_depend_on_workers() {
        let task = |i: usize| rng::stream(9, "task", i as u64).random::<u64>();
        let one = WorkQueue::new(1).unwrap().map(100, task);
        let four = WorkQueue::new(4).unwrap().map(100, task);
        assert_eq!(one, four);
        assert_eq!(WorkQueue::new(0).unwrap().workers(), 1);
    }
}
