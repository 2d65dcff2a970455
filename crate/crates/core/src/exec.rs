//! Data-parallel execution with a sequential fallback.
//!
//! Hot loops (per-pair n-gram counting, batch preprocessing, word counting)
//! go through [`map_collect`] and [`map_reduce`]. With the `parallel` feature
//! (on by default) they run on the rayon pool; without it, or when a caller
//! asks for [`Execution::Sequential`], they run on the current thread.
//! Both paths must produce identical results, so reductions are only ever
//! applied to associative, commutative integer accumulators.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// How a data-parallel loop is executed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Execution {
    Sequential,
    /// Falls back to sequential when the crate is built without `parallel`.
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Execution::Parallel
        } else {
            Execution::Sequential
        }
    }
}

impl Execution {
    /// True when this mode will actually use more than one thread.
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Execution::Parallel
    }
}

/// Maps every item, preserving input order in the output.
pub fn map_collect<T, U, F>(exec: Execution, items: &[T], f: F) -> Vec<U>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_iter().map(f).collect();
    }
    let _ = exec;
    items.iter().map(f).collect()
}

/// Maps every item and folds the results with `combine`, starting from
/// `identity()`. `combine` must be associative and commutative.
pub fn map_reduce<T, A, F, I, C>(exec: Execution, items: &[T], map: F, identity: I, combine: C) -> A
where
    T: Sync,
    A: Send,
    F: Fn(&T) -> A + Sync + Send,
    I: Fn() -> A + Sync + Send,
    C: Fn(A, A) -> A + Sync + Send,
{
    #[cfg(feature = "parallel")]
    if exec.is_parallel() {
        return items.par_iter().map(map).reduce(&identity, &combine);
    }
    let _ = exec;
    items.iter().map(map).fold(identity(), combine)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn both_modes_agree() {
        let items: Vec<u64> = (0..10_000).collect();
        let seq = map_reduce(Execution::Sequential, &items, |x| x * x, || 0u64, |a, b| a + b);
        let par = map_reduce(Execution::Parallel, &items, |x| x * x, || 0u64, |a, b| a + b);
        assert_eq!(seq, par);

        let a = map_collect(Execution::Sequential, &items, |x| x + 1);
        let b = map_collect(Execution::Parallel, &items, |x| x + 1);
        assert_eq!(a, b);
    }

    #[test]
    fn empty_input() {
        let items: Vec<u32> = Vec::new();
        assert_eq!(map_reduce(Execution::Parallel, &items, |x| *x, || 7, |a, b| a + b), 7);
        assert!(map_collect(Execution::Parallel, &items, |x| *x).is_empty());
    }
}
