//! Execution-mode switch for data-parallel loops.
//!
//! Every parallel section in the crate goes through these helpers. Work is
//! split into units whose randomness is seeded per unit, so `Sequential` and
//! `Parallel` produce identical results. Without the `parallel` feature,
//! `Parallel` silently runs sequentially.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

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
}

/// `(0..n).map(f).collect()`, in parallel when enabled. Output order is index order.
pub fn map_range<T, F>(exec: Exec, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = exec;
    (0..n).map(f).collect()
}

/// Apply `f(chunk_index, chunk)` to consecutive `chunk`-sized pieces of `data`.
pub fn for_chunks_mut<T, F>(exec: Exec, data: &mut [T], chunk: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(c, s)| f(c, s));
        return;
    }
    let _ = exec;
    data.chunks_mut(chunk).enumerate().for_each(|(c, s)| f(c, s));
}

/// Map over consecutive chunks of `data`, collecting one result per chunk.
pub fn map_chunks_mut<T, R, F>(exec: Exec, data: &mut [T], chunk: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, &mut [T]) -> R + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return data
            .par_chunks_mut(chunk)
            .enumerate()
            .map(|(c, s)| f(c, s))
            .collect();
    }
    let _ = exec;
    data.chunks_mut(chunk)
        .enumerate()
        .map(|(c, s)| f(c, s))
        .collect()
}
