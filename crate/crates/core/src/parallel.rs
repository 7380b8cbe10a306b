//! Order-preserving fan-out over scoped threads. `DYNGEST_THREADS` caps the
//! worker count; results never depend on it.

use std::num::NonZeroUsize;

pub const THREADS_ENV: &str = "DYNGEST_THREADS";

/// Worker count: `DYNGEST_THREADS` if set to a positive integer, otherwise the
/// available parallelism.
pub fn worker_threads() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, NonZeroUsize::get))
}

/// `(0..n).map(f)` computed on up to `threads` workers, each taking a
/// contiguous range, returned in index order.
pub fn map_indexed<R: Send>(n: usize, threads: usize, f: impl Fn(usize) -> R + Sync) -> Vec<R> {
    let threads = threads.clamp(1, n.max(1));
    if threads == 1 {
        return (0..n).map(f).collect();
    }
    let per = n.div_ceil(threads);
    let f = &f;
    std::thread::scope(|scope| {
        let handles: Vec<_> = (0..n)
            .step_by(per)
            .map(|start| scope.spawn(move || (start..(start + per).min(n)).map(f).collect::<Vec<_>>()))
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}
