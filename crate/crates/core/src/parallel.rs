//! Data-parallel execution with a sequential fallback.
//!
//! Every parallel loop in the crate goes through [`map_indices`], which always
//! returns results in index order. Callers reduce the returned vector
//! sequentially, so outputs are bit-identical for any worker count. With the
//! `parallel` feature disabled every policy runs on the calling thread.

/// How to execute an embarrassingly parallel loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Use the global rayon pool (all available cores).
    #[default]
    Parallel,
    /// Use a dedicated pool with this many workers.
    Workers(usize),
}

impl Execution {
    /// Maps a `--workers` style count onto a policy; `None` means all cores.
    pub fn from_workers(workers: Option<usize>) -> Self {
        match workers {
            None | Some(0) => Execution::Parallel,
            Some(1) => Execution::Sequential,
            Some(w) => Execution::Workers(w),
        }
    }
}

/// Evaluates `f(0), …, f(n-1)` and returns the results in index order.
pub fn map_indices<T, F>(n: usize, exec: Execution, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    match exec {
        Execution::Sequential => (0..n).map(f).collect(),
        Execution::Parallel => par_map(n, f),
        Execution::Workers(w) => with_pool(w, || par_map(n, f)),
    }
}

#[cfg(feature = "parallel")]
fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    use rayon::prelude::*;
    (0..n).into_par_iter().map(f).collect()
}

#[cfg(not(feature = "parallel"))]
fn par_map<T, F>(n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    (0..n).map(f).collect()
}

#[cfg(feature = "parallel")]
fn with_pool<R: Send>(workers: usize, op: impl FnOnce() -> R + Send) -> R {
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(op),
        Err(err) => {
            log::warn!("could not build a {workers}-thread pool ({err}); using the global pool");
            op()
        }
    }
}

#[cfg(not(feature = "parallel"))]
fn with_pool<R: Send>(_workers: usize, op: impl FnOnce() -> R + Send) -> R {
    op()
}

/// Number of worker threads the `Parallel` policy would use.
pub fn available_workers() -> usize {
    #[cfg(feature = "parallel")]
    {
        rayon::current_num_threads()
    }
    #[cfg(not(feature = "parallel"))]
    {
        1
    }
}
