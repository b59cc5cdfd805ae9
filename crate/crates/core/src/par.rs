//! Index-ordered map that runs on the current rayon pool, or sequentially
//! when the `parallel` feature is off. Output order never depends on the
//! number of threads.

#[cfg(feature = "parallel")]
pub(crate) fn map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
pub(crate) fn map<T, F>(n: usize, f: F) -> Vec<T>
where
    F: Fn(usize) -> T,
{
    (0..n).map(f).collect()
}

/// Run `f` with at most `threads` workers (0 = rayon default).
#[cfg(feature = "parallel")]
pub fn with_threads<T: Send, F: FnOnce() -> T + Send>(threads: usize, f: F) -> crate::Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| crate::Error::invalid(format!("cannot start thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(not(feature = "parallel"))]
pub fn with_threads<T: Send, F: FnOnce() -> T + Send>(_threads: usize, f: F) -> crate::Result<T> {
    Ok(f())
}
