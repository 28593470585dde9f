//! Monte Carlo error studies.
//!
//! All estimators draw path `i` from noise derived from `(seed, i)` and reduce
//! per-path results in a fixed order, so results are bit-identical for any
//! number of worker threads.

mod fit;
mod local;
mod moments;
mod strong;

pub use fit::{fit_order, OrderFit};
pub use local::{estimate_local_orders, LocalOrderConfig, LocalOrderReport, LocalOrderRow, LocalReference};
pub use moments::{estimate_moments, MomentConfig, MomentEstimates};
pub use strong::{estimate_strong_error, ErrorRow, ErrorTable, Reference, StudyConfig};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Which error functional a strong-error study reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorMode {
    /// `(E|X(T) - Y_N|²)^{1/2}`.
    #[default]
    Terminal,
    /// `max_n (E|X(t_n) - Y_n|²)^{1/2}` over the coarse grid.
    Sup,
}

/// How non-finite paths enter Monte Carlo averages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverflowPolicy {
    /// An overflowed path contributes `+∞`, making divergence visible.
    #[default]
    Infinite,
    /// Overflowed paths are dropped from the average and only counted.
    Exclude,
}

/// Paths per reduction block; fixed so that the summation order does not
/// depend on the thread pool.
const CHUNK: usize = 64;

/// Maps `f` over `0..n` in parallel, folds each fixed block of `CHUNK`
/// indices sequentially and merges the block results in index order.
pub(crate) fn chunked_reduce<A, F, M>(n: usize, init: impl Fn() -> A + Sync, fold: F, merge: M) -> A
where
    A: Send,
    F: Fn(&mut A, usize) + Sync,
    M: Fn(&mut A, A),
{
    let blocks: Vec<A> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|b| {
            let mut acc = init();
            for i in b * CHUNK..((b + 1) * CHUNK).min(n) {
                fold(&mut acc, i);
            }
            acc
        })
        .collect();
    let mut total = init();
    for block in blocks {
        merge(&mut total, block);
    }
    total
}

/// Sample mean and the delta-method standard error of its square root.
pub(crate) fn rms_with_stderr(sum: f64, sum_sq: f64, count: usize) -> (f64, f64) {
    if count == 0 {
        return (f64::INFINITY, f64::INFINITY);
    }
    let n = count as f64;
    let mean = sum / n;
    let rms = mean.sqrt();
    if !mean.is_finite() {
        return (f64::INFINITY, f64::INFINITY);
    }
    if count < 2 {
        return (rms, f64::INFINITY);
    }
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    let se_mean = (var / n).sqrt();
    let se = if rms > 0.0 { se_mean / (2.0 * rms) } else { 0.0 };
    (rms, se)
}
