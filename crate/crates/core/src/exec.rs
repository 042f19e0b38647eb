//! Execution strategy for data-parallel loops.
//!
//! Every parallel loop in the crate maps a closure over an index range and
//! collects results in index order, so the output never depends on how work
//! was scheduled. Reductions are performed over fixed-size index blocks and
//! merged left to right.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Exec {
    Sequential,
    /// Uses the global rayon pool. Without the `parallel` feature this
    /// behaves exactly like [`Exec::Sequential`].
    Parallel,
}

impl Default for Exec {
    fn default() -> Self {
        if cfg!(feature = "parallel") {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }
}

impl Exec {
    pub fn is_parallel(self) -> bool {
        cfg!(feature = "parallel") && self == Exec::Parallel
    }

    /// `(0..n).map(f).collect()`, possibly in parallel. Output order is index order.
    pub fn map<T, F>(self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        #[cfg(feature = "parallel")]
        if self == Exec::Parallel {
            use rayon::prelude::*;
            return (0..n).into_par_iter().map(f).collect();
        }
        (0..n).map(f).collect()
    }

    /// Maps `f` over items of a slice, preserving order.
    pub fn map_slice<I, T, F>(self, items: &[I], f: F) -> Vec<T>
    where
        I: Sync,
        T: Send,
        F: Fn(&I) -> T + Sync + Send,
    {
        self.map(items.len(), |i| f(&items[i]))
    }

    /// Splits `0..n` into blocks of `block` indices, folds each block with
    /// `fold` starting from `init()`, then merges block results in block
    /// order with `merge`. Deterministic for a fixed `block`.
    pub fn fold_blocks<A, I, F, M>(self, n: usize, block: usize, init: I, fold: F, merge: M) -> A
    where
        A: Send,
        I: Fn() -> A + Sync + Send,
        F: Fn(&mut A, usize) + Sync + Send,
        M: Fn(&mut A, A),
    {
        let block = block.max(1);
        let n_blocks = n.div_ceil(block);
        let partials = self.map(n_blocks, |b| {
            let mut acc = init();
            for i in b * block..((b + 1) * block).min(n) {
                fold(&mut acc, i);
            }
            acc
        });
        let mut out = init();
        for p in partials {
            merge(&mut out, p);
        }
        out
    }
}
