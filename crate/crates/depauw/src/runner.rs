//! Ordered fan-out over index ranges.
//!
//! Work is cut into chunks whose boundaries depend only on the problem size,
//! and partial results are merged strictly in chunk order. Floating-point sums
//! therefore come out bit-identical for any worker count.

use std::ops::Range;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Chunks processed between two sequential merge points; bounds the number of
/// partial results alive at once.
const WAVE: usize = 16;

#[derive(Debug)]
pub struct Runner {
    pool: rayon::ThreadPool,
}

impl Runner {
    /// `None` or `Some(0)` uses one worker per available core.
    pub fn new(workers: Option<usize>) -> Result<Self> {
        let n = workers.filter(|w| *w > 0).unwrap_or(0);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Usage(format!("cannot start {n} workers: {e}")))?;
        Ok(Runner { pool })
    }

    pub fn workers(&self) -> usize {
        self.pool.current_num_threads()
    }

    /// `f(0), .., f(n - 1)` in order.
    pub fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        self.pool.install(|| (0..n).into_par_iter().map(f).collect())
    }

    /// Like [`Runner::map`], stopping at the first error in index order.
    pub fn try_map<T, E, F>(&self, n: usize, f: F) -> std::result::Result<Vec<T>, E>
    where
        T: Send,
        E: Send,
        F: Fn(usize) -> std::result::Result<T, E> + Sync + Send,
    {
        self.map(n, f).into_iter().collect()
    }

    /// Folds `0..total` in chunks of `chunk` indices: `part` maps a chunk to a
    /// partial result and `merge` folds partials into the accumulator in
    /// chunk order.
    pub fn fold_chunks<A, E, P, M>(&self, total: u64, chunk: u64, init: A, part: P, mut merge: M) -> std::result::Result<A, E>
    where
        A: Send,
        E: Send,
        P: Fn(Range<u64>) -> std::result::Result<A, E> + Sync + Send,
        M: FnMut(&mut A, A),
    {
        let chunk = chunk.max(1);
        let chunks = total.div_ceil(chunk) as usize;
        let mut acc = init;
        let mut first = 0;
        while first < chunks {
            let last = (first + WAVE).min(chunks);
            let parts = self.try_map(last - first, |i| {
                let c = (first + i) as u64;
                part(c * chunk..((c + 1) * chunk).min(total))
            })?;
            for p in parts {
                merge(&mut acc, p);
            }
            first = last;
        }
        Ok(acc)
    }
}
