//! Execution strategy for the data-parallel inner loops (batch grading,
//! offline generation).
//!
//! With the `parallel` feature (default) work fans out over rayon; without
//! it everything runs sequentially. Output order always matches input
//! order, so results are independent of worker scheduling.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parallelism {
    Sequential,
    #[cfg(feature = "parallel")]
    Rayon,
}

// Not derivable: the default depends on whether the Rayon variant exists.
#[allow(clippy::derivable_impls)]
impl Default for Parallelism {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        {
            Parallelism::Rayon
        }
        #[cfg(not(feature = "parallel"))]
        {
            Parallelism::Sequential
        }
    }
}

/// Map `f` over `items`, preserving order.
pub fn map_slice<T, R, F>(mode: Parallelism, items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Send + Sync,
{
    match mode {
        Parallelism::Sequential => items.iter().map(f).collect(),
        #[cfg(feature = "parallel")]
        Parallelism::Rayon => items.par_iter().map(&f).collect(),
    }
}

/// Like [`map_slice`] but bounded to `workers` threads when given.
/// Falls back to the global pool (or sequential execution) if the pool
/// cannot be built.
pub fn map_slice_bounded<T, R, F>(
    mode: Parallelism,
    #[cfg_attr(not(feature = "parallel"), allow(unused_variables))] workers: Option<usize>,
    items: &[T],
    f: F,
) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Send + Sync,
{
    match mode {
        Parallelism::Sequential => items.iter().map(f).collect(),
        #[cfg(feature = "parallel")]
        Parallelism::Rayon => match workers {
            Some(n) if n > 0 => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
                Ok(pool) => pool.install(|| items.par_iter().map(&f).collect()),
                Err(e) => {
                    log::warn!("worker pool unavailable ({e}); running sequentially");
                    items.iter().map(f).collect()
                }
            },
            _ => items.par_iter().map(&f).collect(),
        },
    }
}
