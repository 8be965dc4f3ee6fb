//! Data-parallel helpers with a sequential fallback.
//!
//! Every kernel routed through here computes each output element
//! independently, so the parallel and sequential paths produce identical
//! bits. With the `parallel` feature disabled, `Execution::Parallel` runs
//! sequentially.

/// How data-parallel loops are executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    Sequential,
    #[default]
    Parallel,
}

impl Execution {
    /// Whether this mode actually runs on the rayon pool in the current build.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

// Below this length the pool overhead outweighs the work.
#[cfg(feature = "parallel")]
const MIN_PAR_LEN: usize = 256;

pub(crate) fn map_indexed<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if exec.is_parallel() && n >= MIN_PAR_LEN {
            use rayon::prelude::*;
            return (0..n).into_par_iter().with_min_len(64).map(f).collect();
        }
    }
    let _ = exec;
    (0..n).map(f).collect()
}

pub(crate) fn map_indexed_unbounded<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if exec.is_parallel() && n > 1 {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    let _ = exec;
    (0..n).map(f).collect()
}
