//! Execution policy for the data-parallel loops.
//!
//! Work is always split into the same fixed-size chunks and partial results
//! are combined in chunk order, so `Sequential` and `Parallel` produce
//! bit-identical output. Without the `parallel` feature, `Parallel` runs
//! sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Number of items per chunk in chunked reductions.
pub const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// Maps `f` over `0..n`, preserving order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self.is_parallel() && n > 1 {
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Folds `0..n` in chunks of [`CHUNK`] with `fold`, then merges the chunk
    /// results left to right with `merge`.
    pub fn chunked<T, F, M>(self, n: usize, fold: F, merge: M) -> Option<T>
    where
        T: Send,
        F: Fn(std::ops::Range<usize>) -> T + Sync + Send,
        M: FnMut(T, T) -> T,
    {
        let n_chunks = n.div_ceil(CHUNK);
        let ranges = |c: usize| c * CHUNK..((c + 1) * CHUNK).min(n);
        let parts = if n_chunks > 1 {
            self.map(n_chunks, |c| fold(ranges(c)))
        } else {
            (0..n_chunks).map(|c| fold(ranges(c))).collect()
        };
        parts.into_iter().reduce(merge)
    }
}
