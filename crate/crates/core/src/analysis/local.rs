//! Empirical local orders of a one-step scheme.
//!
//! From a fixed `(t, x)` the scheme takes one step of size `h`; a reference
//! solution over `[t, t + h]` on the same noise gives the one-step error
//! `e = X_{t,x}(t+h) - Y_{t,x}(t+h)`. The weak local order `p₁` is the
//! log–log slope of `|E e|` and the strong local order `p₂` that of
//! `(E|e|²)^{1/2}`. Global mean-square order `p₂ - 1/2` follows when
//! `p₂ ≥ 1/2` and `p₁ ≥ p₂ + 1/2`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::fit::fit_log2;
use super::rms_with_stderr;
use crate::error::{ensure, Result};
use crate::noise::NoiseRealization;
use crate::problem::{norm, JumpDiffusionProblem};
use crate::schemes::{simulate_from, Scheme};

/// Reference for the one-step error.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum LocalReference {
    /// The problem's closed-form solution.
    Exact,
    /// `scheme` with `2^substeps_log2` steps across `[t, t + h]`.
    Scheme { scheme: Scheme, substeps_log2: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalOrderConfig {
    pub x: Vec<f64>,
    pub t: f64,
    pub step_sizes: Vec<f64>,
    pub paths: usize,
    pub seed: u64,
    pub reference: LocalReference,
    /// Slack on the order conditions.
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

fn default_tolerance() -> f64 {
    0.15
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalOrderRow {
    pub h: f64,
    pub weak_error: f64,
    pub weak_stderr: f64,
    pub strong_error: f64,
    pub strong_stderr: f64,
    /// Weak error below three standard errors; excluded from the weak fit.
    pub weak_flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalOrderReport {
    pub rows: Vec<LocalOrderRow>,
    pub p1_hat: Option<f64>,
    pub p2_hat: Option<f64>,
    /// Every one-step error vanished: the scheme reproduces the reference.
    pub exact: bool,
    /// `p₂ ≥ 1/2 - tol`.
    pub p2_condition: Option<bool>,
    /// `p₁ ≥ p₂ + 1/2 - tol`.
    pub p1_condition: Option<bool>,
    pub tolerance: f64,
}

impl LocalOrderReport {
    pub fn flagged_rows(&self) -> usize {
        self.rows.iter().filter(|r| r.weak_flagged).count()
    }
}

/// Estimates `(p₁, p₂)` of `scheme` at `(config.t, config.x)`.
pub fn estimate_local_orders(
    problem: &JumpDiffusionProblem,
    scheme: Scheme,
    config: &LocalOrderConfig,
) -> Result<LocalOrderReport> {
    let d = problem.state_dim();
    ensure!(
        config.x.len() == d,
        Argument,
        "state has dimension {}, expected {d}",
        config.x.len()
    );
    ensure!(config.paths >= 2, Config, "need at least 2 paths");
    ensure!(!config.step_sizes.is_empty(), Config, "no step sizes given");
    ensure!(
        config.step_sizes.iter().all(|&h| h > 0.0 && h.is_finite()),
        Config,
        "step sizes must be positive"
    );
    let max_h = config.step_sizes.iter().copied().fold(0.0, f64::max);
    ensure!(
        config.t >= 0.0 && config.t + max_h <= problem.horizon * (1.0 + 1e-12),
        Argument,
        "window [{}, {}] leaves [0, {}]",
        config.t,
        config.t + max_h,
        problem.horizon
    );
    let level = match config.reference {
        LocalReference::Exact => {
            ensure!(
                problem.exact.is_some(),
                Config,
                "model {} has no closed-form solution",
                problem.name
            );
            0
        }
        LocalReference::Scheme { substeps_log2, .. } => {
            ensure!(substeps_log2 <= 20, Config, "too many reference substeps");
            substeps_log2
        }
    };

    let mut rows = Vec::with_capacity(config.step_sizes.len());
    for (k, &h) in config.step_sizes.iter().enumerate() {
        // Coefficients are autonomous, so the window is simulated on [0, h].
        let streams = (16 + 2 * k as u64, 17 + 2 * k as u64);
        let errors: Vec<Vec<f64>> = (0..config.paths)
            .into_par_iter()
            .map(|i| {
                let noise = NoiseRealization::generate_streams(
                    config.seed,
                    i as u64,
                    streams,
                    level,
                    h,
                    problem.noise_dim(),
                    &problem.measure,
                );
                let y = simulate_from(problem, &scheme, &noise, 1, &config.x)
                    .expect("validated inputs")
                    .terminal()
                    .to_vec();
                let reference = match config.reference {
                    LocalReference::Exact => {
                        let w = noise.brownian.brownian_value(noise.brownian.steps());
                        let mut marks = noise
                            .jumps
                            .events()
                            .iter()
                            .map(|e| problem.measure.atom(e.atom).mark.as_slice());
                        problem
                            .exact
                            .as_ref()
                            .expect("checked above")
                            .evaluate(&config.x, h, &w, &mut marks)
                    }
                    LocalReference::Scheme {
                        scheme: s,
                        substeps_log2,
                    } => simulate_from(problem, &s, &noise, 1 << substeps_log2, &config.x)
                        .expect("validated inputs")
                        .terminal()
                        .to_vec(),
                };
                reference.iter().zip(&y).map(|(a, b)| a - b).collect()
            })
            .collect();

        let n = config.paths as f64;
        let mut mean = vec![0.0; d];
        let (mut sq_sum, mut sq_sq_sum) = (0.0, 0.0);
        for e in &errors {
            for (m, v) in mean.iter_mut().zip(e) {
                *m += v;
            }
            let sq = norm(e).powi(2);
            sq_sum += sq;
            sq_sq_sum += sq * sq;
        }
        for m in mean.iter_mut() {
            *m /= n;
        }
        let mut var = vec![0.0; d];
        for e in &errors {
            for ((v, x), m) in var.iter_mut().zip(e).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let weak_stderr = (var.iter().sum::<f64>() / (n - 1.0) / n).sqrt();
        let weak_error = norm(&mean);
        let (strong_error, strong_stderr) = rms_with_stderr(sq_sum, sq_sq_sum, config.paths);
        rows.push(LocalOrderRow {
            h,
            weak_error,
            weak_stderr,
            strong_error,
            strong_stderr,
            weak_flagged: weak_error.partial_cmp(&(3.0 * weak_stderr)) != Some(std::cmp::Ordering::Greater),
        });
    }

    let exact = rows.iter().all(|r| r.strong_error == 0.0);
    let p2_hat = fit_log2(rows.iter().map(|r| (r.h, r.strong_error)))
        .ok()
        .map(|f| f.slope);
    let p1_hat = fit_log2(rows.iter().filter(|r| !r.weak_flagged).map(|r| (r.h, r.weak_error)))
        .ok()
        .map(|f| f.slope);
    let tol = config.tolerance;
    let (p2_condition, p1_condition) = if exact {
        (Some(true), Some(true))
    } else {
        (
            p2_hat.map(|p2| p2 >= 0.5 - tol),
            p1_hat.zip(p2_hat).map(|(p1, p2)| p1 >= p2 + 0.5 - tol),
        )
    };
    Ok(LocalOrderReport {
        rows,
        p1_hat,
        p2_hat,
        exact,
        p2_condition,
        p1_condition,
        tolerance: tol,
    })
}
