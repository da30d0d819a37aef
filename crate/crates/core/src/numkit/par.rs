//! Data-parallel helpers.
//!
//! With the `parallel` feature the helpers fan out over rayon's pool;
//! without it (or after `set_parallel(false)`) they run sequentially.
//! Every helper writes each output slot from exactly one closure call, so
//! results are bitwise identical in both modes.

use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

static ENABLED: AtomicBool = AtomicBool::new(true);

/// Work (roughly multiply-adds) below which the sequential path is used.
pub const MIN_PARALLEL_WORK: usize = 1 << 14;

/// Runtime switch; has no effect when compiled without `parallel`.
pub fn set_parallel(enabled: bool) {
    ENABLED.store(enabled, Ordering::SeqCst);
}

pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel") && ENABLED.load(Ordering::Relaxed)
}

#[cfg(feature = "parallel")]
fn go_parallel(work: usize) -> bool {
    parallel_enabled() && work >= MIN_PARALLEL_WORK
}

/// `(0..n).map(f).collect()`, possibly in parallel.
pub fn map_range<R, F>(n: usize, work: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if go_parallel(work) {
        return (0..n).into_par_iter().map(f).collect();
    }
    let _ = work;
    (0..n).map(f).collect()
}

/// Applies `f(i, item)` to every element of `items`.
pub fn map_mut<T, R, F>(items: &mut [T], work: usize, f: F) -> Vec<R>
where
    T: Send,
    R: Send,
    F: Fn(usize, &mut T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if go_parallel(work) {
        return items
            .par_iter_mut()
            .enumerate()
            .map(|(i, t)| f(i, t))
            .collect();
    }
    let _ = work;
    items.iter_mut().enumerate().map(|(i, t)| f(i, t)).collect()
}

/// Calls `f(chunk_index, chunk)` over `chunk`-sized pieces of `data`.
pub fn for_chunks_mut<T, F>(data: &mut [T], chunk: usize, work: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync + Send,
{
    if chunk == 0 {
        return;
    }
    #[cfg(feature = "parallel")]
    if go_parallel(work) {
        data.par_chunks_mut(chunk)
            .enumerate()
            .for_each(|(i, c)| f(i, c));
        return;
    }
    let _ = work;
    data.chunks_mut(chunk).enumerate().for_each(|(i, c)| f(i, c));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn modes_agree() {
        let f = |i: usize| ((i as f64).sin() * 1e3).to_bits();
        set_parallel(true);
        let a = map_range(50_000, usize::MAX, f);
        set_parallel(false);
        let b = map_range(50_000, usize::MAX, f);
        set_parallel(true);
        assert_eq!(a, b);
    }
}
