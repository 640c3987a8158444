//! Data-parallel map over replicate indices.
//!
//! Results are collected in index order, so together with the counter-based
//! substreams of [`crate::rng`] the output is identical whether the work runs
//! on one thread or many, with or without the `parallel` feature.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `0..n`, producing results in index order.
#[cfg(feature = "parallel")]
pub fn map_indexed<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).into_par_iter().map(f).collect()
}

/// Map `f` over `0..n`, producing results in index order.
#[cfg(not(feature = "parallel"))]
pub fn map_indexed<T: Send>(n: usize, f: impl Fn(usize) -> T + Sync + Send) -> Vec<T> {
    (0..n).map(f).collect()
}

/// Sequential reference implementation, always available; the criterion bench
/// compares it against [`map_indexed`].
pub fn map_indexed_serial<T>(n: usize, f: impl Fn(usize) -> T) -> Vec<T> {
    (0..n).map(f).collect()
}
