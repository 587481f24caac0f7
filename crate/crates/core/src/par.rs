//! Order-preserving parallel map with a sequential fallback.
//!
//! With the `parallel` feature and `workers > 1` the work runs on a scoped
//! rayon pool of that size; otherwise it runs in order on the calling thread.
//! Results come back in input order either way, so output never depends on
//! scheduling.

pub fn par_map<T, R, F>(items: &[T], workers: usize, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if workers > 1 && items.len() > 1 {
        use rayon::prelude::*;
        if let Ok(pool) = rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
            return pool.install(|| items.par_iter().map(&f).collect());
        }
    }
    let _ = workers;
    items.iter().map(f).collect()
}

/// Whether this build can actually run work concurrently.
pub fn parallel_enabled() -> bool {
    cfg!(feature = "parallel")
}
