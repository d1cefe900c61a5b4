//! Execution strategy for the embarrassingly parallel sweeps.
//!
//! Three places in the pipeline map an expensive pure function over an
//! index set and merge results by order-independent reductions: the
//! assumption grid sweep, per-cluster aggregation-weight computations,
//! and the per-scale runs of a study. [`map_collect`] routes those
//! through rayon when the `parallel` feature is enabled and falls back
//! to a plain iterator otherwise. [`map_collect_seq`] is always
//! sequential; benches compare the two on identical workloads.
//!
//! Output order always matches input order, so results are identical
//! whichever path runs.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Map `f` over `items`, in parallel when the `parallel` feature is on.
#[cfg(feature = "parallel")]
pub fn map_collect<I, O, F>(items: &[I], f: F) -> Vec<O>
where
    I: Sync,
    O: Send,
    F: Fn(&I) -> O + Sync + Send,
{
    items.par_iter().map(f).collect()
}

/// Map `f` over `items`, in parallel when the `parallel` feature is on.
#[cfg(not(feature = "parallel"))]
pub fn map_collect<I, O, F>(items: &[I], f: F) -> Vec<O>
where
    F: Fn(&I) -> O,
{
    items.iter().map(f).collect()
}

/// Sequential reference implementation of [`map_collect`].
pub fn map_collect_seq<I, O, F>(items: &[I], f: F) -> Vec<O>
where
    F: Fn(&I) -> O,
{
    items.iter().map(f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parallel_and_sequential_agree_in_order() {
        let items: Vec<u64> = (0..1000).collect();
        let f = |x: &u64| x * x + 1;
        assert_eq!(map_collect(&items, f), map_collect_seq(&items, f));
    }
}
