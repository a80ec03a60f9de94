//! Switch between the rayon path and the plain iterator path.
//!
//! Without the `parallel` feature both variants run sequentially.

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Exec {
    Sequential,
    #[default]
    Parallel,
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }
}

/// Order-preserving map.
pub fn map_collect<T, R, F>(exec: Exec, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        use rayon::prelude::*;
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Runs `f` inside a pool of `jobs` threads (or inline when `jobs == 1`).
pub fn with_jobs<R: Send>(jobs: usize, f: impl FnOnce(Exec) -> R + Send) -> R {
    #[cfg(feature = "parallel")]
    if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .expect("thread pool");
        return pool.install(|| f(Exec::Parallel));
    }
    let _ = jobs;
    f(Exec::Sequential)
}
