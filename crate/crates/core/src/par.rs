//! Index-parallel map used by every per-pixel loop.
//!
//! With the `parallel` feature the work is spread over the current rayon pool;
//! without it the same closures run on the calling thread. Outputs are always
//! returned in index order, so results never depend on scheduling.

use crate::Result;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Evaluates `f(i)` for `i in 0..n` and returns the results in index order.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
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

/// Like [`map_indexed`], but the first error *in index order* is returned, not
/// whichever worker failed first.
pub fn try_map_indexed<T, F>(n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize) -> Result<T> + Sync + Send,
{
    map_indexed(n, f).into_iter().collect()
}

/// Folds `f(i)` for `i in 0..n` with an associative `combine`. `identity`
/// must be a neutral element; `combine` sees its arguments in index order.
pub fn reduce_indexed<T, F, I, C>(n: usize, f: F, identity: I, combine: C) -> T
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
    I: Fn() -> T + Sync + Send,
    C: Fn(T, T) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..n).into_par_iter().map(f).reduce(identity, combine)
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).fold(identity(), combine)
    }
}

/// Best of `f(i)` over `i in 0..n` under `better(a, b)` (true when `a` should
/// win). `better` must be a strict total order so the winner is the same for
/// any split of the work.
pub fn best_indexed<T, F, B>(n: usize, f: F, better: B) -> Option<T>
where
    T: Send,
    F: Fn(usize) -> Option<T> + Sync + Send,
    B: Fn(&T, &T) -> bool + Sync + Send,
{
    reduce_indexed(
        n,
        f,
        || None,
        |a, b| match (a, b) {
            (Some(a), Some(b)) => Some(if better(&b, &a) { b } else { a }),
            (a, None) => a,
            (None, b) => b,
        },
    )
}

/// Number of worker threads the parallel maps will use.
pub fn current_workers() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
