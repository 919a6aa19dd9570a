//! Fixed-chunk fan-out. Chunk boundaries depend only on the input length, so
//! reductions over the returned vector are reproducible for any thread count.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maps `f(start_index, chunk)` over consecutive chunks, preserving order.
pub(crate) fn map_chunks<T, R, G>(items: &[T], chunk: usize, f: G) -> Vec<R>
where
    T: Sync,
    R: Send,
    G: Fn(usize, &[T]) -> R + Sync + Send,
{
    let chunk = chunk.max(1);
    #[cfg(feature = "parallel")]
    {
        items
            .par_chunks(chunk)
            .enumerate()
            .map(|(i, c)| f(i * chunk, c))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items
            .chunks(chunk)
            .enumerate()
            .map(|(i, c)| f(i * chunk, c))
            .collect()
    }
}
