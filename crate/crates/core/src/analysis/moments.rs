use serde::{Deserialize, Serialize};

use super::{chunked_reduce, OverflowPolicy};
use crate::error::{ensure, Result};
use crate::noise::NoiseRealization;
use crate::problem::{norm, JumpDiffusionProblem};
use crate::schemes::{simulate_path, Scheme};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentConfig {
    /// Step size `h = 2^{-exponent} T`.
    pub exponent: u32,
    pub paths: usize,
    pub seed: u64,
    #[serde(default)]
    pub overflow_policy: OverflowPolicy,
}

/// Monte Carlo estimates of `E|Y_n|^p` on the grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentEstimates {
    pub p: u32,
    pub times: Vec<f64>,
    pub estimates: Vec<f64>,
    /// Paths whose state at `t_n` is not finite.
    pub overflow_counts: Vec<usize>,
    /// Paths that overflowed anywhere on the grid.
    pub overflowed_paths: usize,
    pub max: f64,
}

impl MomentEstimates {
    pub const CSV_HEADER: &'static str = "t,p,moment_estimate,overflow_count";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for ((t, e), o) in self.times.iter().zip(&self.estimates).zip(&self.overflow_counts) {
            out.push_str(&format!("{t},{},{e},{o}\n", self.p));
        }
        out
    }
}

struct Acc {
    sum: Vec<f64>,
    finite: Vec<usize>,
    overflow: Vec<usize>,
    overflowed_paths: usize,
}

/// `E|Y_n|^p` at each grid time for an even `p ≥ 2`.
pub fn estimate_moments(
    problem: &JumpDiffusionProblem,
    scheme: Scheme,
    p: u32,
    config: &MomentConfig,
) -> Result<MomentEstimates> {
    ensure!(
        p >= 2 && p.is_multiple_of(2),
        Argument,
        "moment order must be even and at least 2, got {p}"
    );
    ensure!(config.paths >= 1, Config, "need at least one path");
    ensure!(
        config.exponent <= 24,
        Config,
        "exponent {} is too fine",
        config.exponent
    );
    let steps = 1usize << config.exponent;
    let acc = chunked_reduce(
        config.paths,
        || Acc {
            sum: vec![0.0; steps + 1],
            finite: vec![0; steps + 1],
            overflow: vec![0; steps + 1],
            overflowed_paths: 0,
        },
        |acc, i| {
            let noise = NoiseRealization::generate(
                config.seed,
                i as u64,
                config.exponent,
                problem.horizon,
                problem.noise_dim(),
                &problem.measure,
            );
            let path = simulate_path(problem, &scheme, &noise, steps).expect("noise generated at the study level");
            acc.overflowed_paths += path.overflowed() as usize;
            for n in 0..=steps {
                let y = path.state(n);
                if y.iter().all(|v| v.is_finite()) {
                    acc.sum[n] += norm(y).powi(p as i32);
                    acc.finite[n] += 1;
                } else {
                    acc.overflow[n] += 1;
                }
            }
        },
        |a, b| {
            for n in 0..a.sum.len() {
                a.sum[n] += b.sum[n];
                a.finite[n] += b.finite[n];
                a.overflow[n] += b.overflow[n];
            }
            a.overflowed_paths += b.overflowed_paths;
        },
    );
    let estimates: Vec<f64> = (0..=steps)
        .map(|n| match config.overflow_policy {
            OverflowPolicy::Infinite if acc.overflow[n] > 0 => f64::INFINITY,
            _ if acc.finite[n] == 0 => f64::INFINITY,
            _ => acc.sum[n] / acc.finite[n] as f64,
        })
        .collect();
    let max = estimates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let h = problem.horizon / steps as f64;
    Ok(MomentEstimates {
        p,
        times: (0..=steps).map(|n| n as f64 * h).collect(),
        estimates,
        overflow_counts: acc.overflow,
        overflowed_paths: acc.overflowed_paths,
        max,
    })
}
