//! Execution strategy for data-parallel loops.
//!
//! Coefficient tables and parameter sweeps are embarrassingly parallel. With
//! the `parallel` feature they run on rayon; without it every mode falls back
//! to a plain sequential loop, so results never depend on the feature set.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How to run an indexed map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    /// Use the global rayon pool (sequential without the `parallel` feature).
    #[default]
    Parallel,
    /// Use a dedicated pool with the given number of workers.
    Workers(usize),
}

impl Execution {
    /// `jobs == 1` means sequential, `0` means the global pool.
    pub fn from_jobs(jobs: usize) -> Self {
        match jobs {
            0 => Execution::Parallel,
            1 => Execution::Sequential,
            k => Execution::Workers(k),
        }
    }

    /// Map `f` over `0..len`, preserving order.
    pub fn map<T, F>(&self, len: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        match self {
            Execution::Sequential => (0..len).map(f).collect(),
            #[cfg(feature = "parallel")]
            Execution::Parallel => (0..len).into_par_iter().map(f).collect(),
            #[cfg(feature = "parallel")]
            Execution::Workers(k) => {
                match rayon::ThreadPoolBuilder::new().num_threads(*k).build() {
                    Ok(pool) => pool.install(|| (0..len).into_par_iter().map(&f).collect()),
                    Err(_) => (0..len).map(f).collect(),
                }
            }
            #[cfg(not(feature = "parallel"))]
            _ => (0..len).map(f).collect(),
        }
    }

    /// Map over a slice of inputs, preserving order.
    pub fn map_slice<I, T, F>(&self, items: &[I], f: F) -> Vec<T>
    where
        I: Sync,
        T: Send,
        F: Fn(&I) -> T + Sync + Send,
    {
        self.map(items.len(), |i| f(&items[i]))
    }

    pub fn is_parallel(&self) -> bool {
        cfg!(feature = "parallel") && !matches!(self, Execution::Sequential)
    }
}
