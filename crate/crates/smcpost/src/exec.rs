//! Execution strategy for per-particle loops.
//!
//! All per-particle work goes through [`for_each_indexed`], which runs either
//! sequentially or on the rayon pool. Results must not depend on the choice:
//! each slot is written independently and reductions elsewhere are computed
//! in fixed index order over materialized buffers.

/// Whether per-particle loops run on the rayon pool or a plain loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExecMode {
    #[cfg_attr(not(feature = "parallel"), default)]
    Sequential,
    #[cfg(feature = "parallel")]
    #[cfg_attr(feature = "parallel", default)]
    Parallel,
}

/// Resolve the mode from the `SMCPOST_WORKERS` environment variable:
/// unset or >1 keeps the default (parallel when compiled in), `1` forces
/// the sequential path. Any explicit count sizes the rayon pool; this is
/// best-effort and silently ignored if a pool already exists.
pub fn mode_from_env() -> ExecMode {
    match std::env::var("SMCPOST_WORKERS").ok().and_then(|v| v.parse::<usize>().ok()) {
        Some(0) | Some(1) => ExecMode::Sequential,
        Some(_n) => {
            #[cfg(feature = "parallel")]
            {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(_n).build_global();
                ExecMode::Parallel
            }
            #[cfg(not(feature = "parallel"))]
            ExecMode::Sequential
        }
        None => ExecMode::default(),
    }
}

/// Apply `f` to every element with its index.
pub fn for_each_indexed<T, F>(mode: ExecMode, items: &mut [T], f: F)
where
    T: Send,
    F: Fn(usize, &mut T) + Sync,
{
    match mode {
        ExecMode::Sequential => {
            for (i, item) in items.iter_mut().enumerate() {
                f(i, item);
            }
        }
        #[cfg(feature = "parallel")]
        ExecMode::Parallel => {
            use rayon::prelude::*;
            items.par_iter_mut().enumerate().for_each(|(i, item)| f(i, item));
        }
    }
}

/// Fixed-order (sequential, left-to-right) summation. Used for every
/// reduction so totals are identical regardless of worker count.
pub fn sum_fixed_order(values: &[f64]) -> f64 {
    values.iter().sum()
}
