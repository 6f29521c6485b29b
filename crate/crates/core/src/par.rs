//! Row-parallel helpers.
//!
//! With the `parallel` feature these dispatch to rayon, otherwise they run a
//! plain loop. Work is split by output row only, so the result never depends
//! on the number of threads.

/// Calls `f(y, row)` for every `width`-sized row of `buf`.
pub fn for_each_row<T, F>(buf: &mut [T], width: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Send + Sync,
{
    if width == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        buf.par_chunks_mut(width)
            .enumerate()
            .for_each(|(y, row)| f(y, row));
    }
    #[cfg(not(feature = "parallel"))]
    {
        buf.chunks_mut(width)
            .enumerate()
            .for_each(|(y, row)| f(y, row));
    }
}

/// Like [`for_each_row`] but each row also yields a value. The values come
/// back in row order so callers can reduce them deterministically.
pub fn map_rows<T, R, F>(buf: &mut [T], width: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, &mut [T]) -> R + Send + Sync,
{
    if width == 0 {
        return Vec::new();
    }
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        buf.par_chunks_mut(width)
            .enumerate()
            .map(|(y, row)| f(y, row))
            .collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        buf.chunks_mut(width)
            .enumerate()
            .map(|(y, row)| f(y, row))
            .collect()
    }
}

/// Runs two closures, concurrently when the `parallel` feature is enabled.
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
