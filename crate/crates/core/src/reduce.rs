//! Deterministic parallel reductions over sample indices.
//!
//! Samples are cut into fixed-size chunks; each chunk is folded sequentially
//! (possibly on a worker thread), and the per-chunk partials are combined by
//! a pairwise tree whose shape depends only on the sample count. Results are
//! therefore bit-identical for any thread count.

use std::ops::Range;

use rayon::prelude::*;

pub(crate) const CHUNK: usize = 256;

pub(crate) fn chunk_ranges(n: usize) -> Vec<Range<usize>> {
    (0..n.div_ceil(CHUNK))
        .map(|c| c * CHUNK..((c + 1) * CHUNK).min(n))
        .collect()
}

/// Maps every chunk, returning partials in chunk order.
pub(crate) fn map_chunks<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(Range<usize>) -> T + Sync + Send,
{
    chunk_ranges(n).into_par_iter().map(f).collect()
}

/// Pairwise combination `((p0+p1)+(p2+p3))+…` with a fixed shape.
pub(crate) fn tree_reduce<T>(mut parts: Vec<T>, add: impl Fn(T, T) -> T) -> Option<T> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(a) = it.next() {
            match it.next() {
                Some(b) => next.push(add(a, b)),
                None => next.push(a),
            }
        }
        parts = next;
    }
    parts.pop()
}
