//! Execution policy for the data-parallel inner loops.
//!
//! Kernel rows, grid-wise map evaluations and Monte-Carlo paths are
//! independent, so they can be evaluated with rayon. Without the `parallel`
//! feature every policy runs sequentially. Results are identical either way:
//! each output element is computed by the same closure regardless of order.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
}

impl Execution {
    /// True when work will actually be spread over the rayon pool.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Evaluate `f(i)` for `i in 0..n` and collect in index order.
pub(crate) fn map_range<T, F>(exec: Execution, n: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        if exec.is_parallel() {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
    }
    let _ = exec;
    (0..n).map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree() {
        let f = |i: usize| (i as f64).sqrt().sin();
        let a = map_range(Execution::Parallel, 1000, f);
        let b = map_range(Execution::Sequential, 1000, f);
        assert_eq!(a, b);
    }
}
