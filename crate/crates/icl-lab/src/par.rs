//! Execution-mode switch for the data-parallel inner loops.
//!
//! Every parallel site in the crate writes to disjoint output chunks in a
//! fixed partition and never performs a parallel floating-point reduction,
//! so results are bit-identical whether work runs on one thread or many.
//! The `parallel` cargo feature removes rayon entirely; with the feature
//! enabled, [`set_parallel`] toggles between the two paths at runtime
//! (used by the benchmarks and the `--threads 1` CLI flag).

use std::sync::atomic::{AtomicBool, Ordering};

static PARALLEL: AtomicBool = AtomicBool::new(true);

/// Enable or disable the rayon path at runtime. No-op when the crate is
/// built without the `parallel` feature.
pub fn set_parallel(enabled: bool) {
    PARALLEL.store(enabled, Ordering::Relaxed);
}

pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel") && PARALLEL.load(Ordering::Relaxed)
}

/// Configure the rayon global pool size. Must be called before any parallel
/// work; later calls are ignored (rayon builds its global pool once).
/// `threads == 1` also flips the runtime switch to the sequential path.
#[cfg(feature = "parallel")]
pub fn configure_threads(threads: usize) {
    if threads == 1 {
        set_parallel(false);
        return;
    }
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global();
}

#[cfg(not(feature = "parallel"))]
pub fn configure_threads(_threads: usize) {}

/// Apply `f` to equally sized mutable chunks of `data`, in parallel when
/// enabled. `f` receives the chunk index and the chunk. The partition is a
/// pure function of `len` and `chunk_len`, never of the thread count.
pub fn for_chunks_mut<T, F>(data: &mut [T], chunk_len: usize, f: F)
where
    T: Send,
    F: Fn(usize, &mut [T]) + Sync,
{
    assert!(chunk_len > 0, "for_chunks_mut: chunk_len must be positive");
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        use rayon::prelude::*;
        data.par_chunks_mut(chunk_len)
            .enumerate()
            .for_each(|(i, chunk)| f(i, chunk));
        return;
    }
    for (i, chunk) in data.chunks_mut(chunk_len).enumerate() {
        f(i, chunk);
    }
}

/// Run `f` over indices 0..n, writing results into the returned vector.
/// Each slot is computed independently; ordering of the output is fixed.
pub fn map_indexed<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let mut out: Vec<Option<T>> = (0..n).map(|_| None).collect();
    for_chunks_mut(&mut out, 1, |i, slot| slot[0] = Some(f(i)));
    out.into_iter().map(|o| o.expect("map_indexed slot filled")).collect()
}

/// Two-way fork-join; sequential when parallelism is off.
pub fn join<A, B, RA, RB>(a: A, b: B) -> (RA, RB)
where
    A: FnOnce() -> RA + Send,
    B: FnOnce() -> RB + Send,
    RA: Send,
    RB: Send,
{
    #[cfg(feature = "parallel")]
    if parallel_enabled() {
        return rayon::join(a, b);
    }
    (a(), b())
}
