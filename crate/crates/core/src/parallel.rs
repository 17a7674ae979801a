//! Deterministic data-parallel helpers.
//!
//! With the `parallel` feature (default), inner loops run on rayon; without
//! it everything is sequential. Results are identical either way: work items
//! are indexed, mapped independently, and reduced in index order.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n`, preserving index order in the output.
pub fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// Map `f` over `0..n` and sum the results in index order.
///
/// The reduction is performed sequentially over the materialized results so
/// that floating-point round-off does not depend on the thread count.
pub fn par_map_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(usize) -> f64 + Sync + Send,
{
    par_map(n, f).iter().sum()
}

/// Configure the global rayon pool to use `threads` workers.
///
/// No-op when the `parallel` feature is disabled or the pool was already
/// built (rayon only allows one global configuration).
pub fn init_threads(threads: usize) {
    #[cfg(feature = "parallel")]
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
    }
}
