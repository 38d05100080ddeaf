//! Data-parallel helpers with a sequential fallback.
//!
//! With the `parallel` feature the helpers dispatch to rayon; without it they
//! run the same closures in a plain loop. Reductions always combine partial
//! results in a fixed chunk order, so results are bit-identical between the
//! two builds and independent of the worker count.

use std::ops::Range;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Block length used by [`chunked_sum`]. Fixed so the summation tree does not
/// depend on the thread count.
pub const SUM_BLOCK: usize = 1024;

/// Evaluates `f(i)` for `i in 0..n`, preserving index order.
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

/// Maps over a slice, preserving order.
pub fn map_slice<A, T, F>(items: &[A], f: F) -> Vec<T>
where
    A: Sync,
    T: Send,
    F: Fn(&A) -> T + Sync + Send,
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

/// Sums `f(block)` over consecutive index blocks of length [`SUM_BLOCK`],
/// adding the block partials left to right.
pub fn chunked_sum<F>(n: usize, f: F) -> f64
where
    F: Fn(Range<usize>) -> f64 + Sync + Send,
{
    let blocks = n.div_ceil(SUM_BLOCK);
    let partials = map_indexed(blocks, |b| {
        let start = b * SUM_BLOCK;
        f(start..(start + SUM_BLOCK).min(n))
    });
    partials.iter().sum()
}

/// Like [`chunked_sum`] but for vector-valued block results of length `dim`.
pub fn chunked_vec_sum<F>(n: usize, dim: usize, f: F) -> Vec<f64>
where
    F: Fn(Range<usize>) -> Vec<f64> + Sync + Send,
{
    let blocks = n.div_ceil(SUM_BLOCK);
    let partials = map_indexed(blocks, |b| {
        let start = b * SUM_BLOCK;
        f(start..(start + SUM_BLOCK).min(n))
    });
    let mut acc = vec![0.0; dim];
    for p in &partials {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    acc
}

/// Runs two closures, potentially concurrently.
pub fn join<A, B, RA, RB>(a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    #[cfg(feature = "parallel")]
    {
        rayon::join(a, b)
    }
    #[cfg(not(feature = "parallel"))]
    {
        (a(), b())
    }
}

/// Whether this build dispatches to rayon.
pub const fn is_parallel() -> bool {
    cfg!(feature = "parallel")
}

/// Runs `f` on a dedicated pool of `threads` workers, or on the global pool
/// when `threads` is `None`. Sequential builds ignore the count.
pub fn with_threads<R, F>(threads: Option<usize>, f: F) -> crate::Result<R>
where
    F: FnOnce() -> R + Send,
    R: Send,
{
    match threads {
        Some(0) => Err(crate::Error::param("thread count must be at least 1")),
        #[cfg(feature = "parallel")]
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| crate::Error::param(format!("thread pool: {e}"))),
        _ => Ok(f()),
    }
}
