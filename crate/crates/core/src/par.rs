//! Data-parallel helpers. With the `parallel` feature the closures run on the
//! rayon pool; without it they run in order on the calling thread. Results
//! are always collected in index order, so any reduction done by the caller
//! is bit-identical between the two builds.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Evaluates `f(i)` for `i in 0..len` and returns the results in order.
pub fn map_indexed<T, F>(len: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        (0..len).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..len).map(f).collect()
    }
}

/// Maps over a slice, preserving order.
pub fn map_slice<S, T, F>(items: &[S], f: F) -> Vec<T>
where
    S: Sync,
    T: Send,
    F: Fn(&S) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Splits `total` Monte Carlo draws into fixed-size chunks. The chunking
/// depends only on `total`, never on the thread count.
pub(crate) fn chunks(total: usize) -> Vec<(usize, usize)> {
    const CHUNK: usize = 8192;
    (0..total)
        .step_by(CHUNK)
        .map(|start| (start, (start + CHUNK).min(total)))
        .collect()
}

pub fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}
