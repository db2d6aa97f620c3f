//! Thin switch between rayon and sequential iteration.

/// Work below this many multiply-adds stays on the calling thread.
pub const MIN_PARALLEL_WORK: usize = 1 << 15;

pub fn enabled() -> bool {
    cfg!(feature = "parallel")
}

/// Applies `f(row_index, row)` to every `width`-sized chunk of `out`.
pub fn for_each_row<T, F>(out: &mut [T], width: usize, work: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if width == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if work >= MIN_PARALLEL_WORK {
        use rayon::prelude::*;
        out.par_chunks_mut(width).enumerate().for_each(|(i, row)| f(i, row));
        return;
    }
    let _ = work;
    out.chunks_mut(width).enumerate().for_each(|(i, row)| f(i, row));
}

/// Maps `f` over `items`, preserving input order in the output.
pub fn map_indexed<I, O, F>(items: &[I], f: F) -> Vec<O>
where
    I: Sync,
    O: Send,
    F: Fn(usize, &I) -> O + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().enumerate().map(|(i, x)| f(i, x)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().enumerate().map(|(i, x)| f(i, x)).collect()
    }
}
