//! Replica-parallel execution with derived streams.
//!
//! Replica `i` always gets `RandomStream::derive(seed, i, tag)` and results are
//! returned in replica order, so output does not depend on the thread count.

use rayon::prelude::*;

use crate::error::Result;
use crate::rng::RandomStream;

pub fn run_replicas<T, F>(seed: u64, tag: &str, n: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(usize, &mut RandomStream) -> Result<T> + Sync + Send,
{
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut s = RandomStream::derive(seed, i as u64, tag);
            f(i, &mut s)
        })
        .collect()
}
