use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{chunked_reduce, rms_with_stderr, ErrorMode, OverflowPolicy};
use crate::error::{ensure, Result};
use crate::noise::NoiseRealization;
use crate::problem::JumpDiffusionProblem;
use crate::schemes::{simulate_path, simulate_reference, Scheme};

/// What the coarse solutions are compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", content = "scheme")]
pub enum Reference {
    /// The studied scheme itself on the reference grid.
    #[default]
    SameScheme,
    /// Another scheme on the reference grid.
    Scheme(Scheme),
    /// The problem's closed-form solution.
    Exact,
}

/// A strong-error study: step sizes `h = 2^{-i} T`, a reference exponent,
/// `paths` Monte Carlo samples and a master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub coarse_exponents: Vec<u32>,
    pub reference_exponent: u32,
    pub paths: usize,
    pub seed: u64,
    #[serde(default)]
    pub error_mode: ErrorMode,
    #[serde(default)]
    pub reference: Reference,
    #[serde(default)]
    pub overflow_policy: OverflowPolicy,
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(!self.coarse_exponents.is_empty(), Config, "no step sizes given");
        ensure!(self.paths >= 2, Config, "need at least 2 paths, got {}", self.paths);
        ensure!(
            self.reference_exponent <= 24,
            Config,
            "reference exponent {} is too fine",
            self.reference_exponent
        );
        let max = *self.coarse_exponents.iter().max().unwrap();
        ensure!(
            max <= self.reference_exponent,
            Config,
            "step exponent {max} is finer than reference exponent {}",
            self.reference_exponent
        );
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub h: f64,
    pub rms_error: f64,
    pub stderr: f64,
    pub wall_seconds: f64,
    pub overflow_count: usize,
}

/// Rows sorted by decreasing `h`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorTable {
    pub rows: Vec<ErrorRow>,
}

impl ErrorTable {
    pub const CSV_HEADER: &'static str = "h,rms_error,stderr,wall_seconds,overflow_count";

    /// CSV with shortest round-trip number formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                r.h, r.rms_error, r.stderr, r.wall_seconds, r.overflow_count
            );
        }
        out
    }
}

#[derive(Clone)]
struct Accumulator {
    /// Per step size: per grid time sums of squared errors.
    sum: Vec<Vec<f64>>,
    sum_sq: Vec<Vec<f64>>,
    count: Vec<usize>,
    overflow: Vec<usize>,
    wall: Vec<f64>,
}

impl Accumulator {
    fn new(sizes: &[usize]) -> Self {
        Self {
            sum: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            sum_sq: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            count: vec![0; sizes.len()],
            overflow: vec![0; sizes.len()],
            wall: vec![0.0; sizes.len()],
        }
    }

    fn merge(&mut self, other: Accumulator) {
        for k in 0..self.count.len() {
            for (a, b) in self.sum[k].iter_mut().zip(&other.sum[k]) {
                *a += b;
            }
            for (a, b) in self.sum_sq[k].iter_mut().zip(&other.sum_sq[k]) {
                *a += b;
            }
            self.count[k] += other.count[k];
            self.overflow[k] += other.overflow[k];
            self.wall[k] += other.wall[k];
        }
    }
}

/// Reference values on the finest grid (or only at `T`).
struct ReferenceValues {
    dim: usize,
    /// Fine-grid index of each stored state.
    stride: usize,
    states: Vec<f64>,
    overflowed: bool,
}

impl ReferenceValues {
    fn at(&self, fine_index: usize) -> &[f64] {
        let k = fine_index / self.stride;
        &self.states[k * self.dim..(k + 1) * self.dim]
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Monte Carlo strong error of `scheme` at each configured step size.
///
/// Path `i` draws one noise realization at the reference level; the
/// reference solution and every coarse solution are computed from it.
pub fn estimate_strong_error(
    problem: &JumpDiffusionProblem,
    scheme: Scheme,
    config: &StudyConfig,
) -> Result<ErrorTable> {
    config.validate()?;
    if config.reference == Reference::Exact {
        ensure!(
            problem.exact.is_some(),
            Config,
            "model {} has no closed-form solution",
            problem.name
        );
    }
    let mut exponents = config.coarse_exponents.clone();
    exponents.sort_unstable();
    exponents.dedup();

    let ref_level = config.reference_exponent;
    let fine_steps = 1usize << ref_level;
    let sizes: Vec<usize> = exponents
        .iter()
        .map(|&e| match config.error_mode {
            ErrorMode::Terminal => 1,
            ErrorMode::Sup => (1usize << e) + 1,
        })
        .collect();

    // Fail fast on inconsistent inputs before the parallel loop.
    let probe = NoiseRealization::generate(
        config.seed,
        0,
        0,
        problem.horizon,
        problem.noise_dim(),
        &problem.measure,
    );
    simulate_path(problem, &scheme, &probe, 1)?;

    let acc = chunked_reduce(
        config.paths,
        || Accumulator::new(&sizes),
        |acc, i| {
            let noise = NoiseRealization::generate(
                config.seed,
                i as u64,
                ref_level,
                problem.horizon,
                problem.noise_dim(),
                &problem.measure,
            );
            let reference = reference_values(problem, scheme, config, &noise);
            for (k, &e) in exponents.iter().enumerate() {
                let start = Instant::now();
                let path = simulate_path(problem, &scheme, &noise, 1 << e)
                    .expect("step count validated against the reference level");
                let factor = fine_steps >> e;
                let overflowed = path.overflowed() || reference.overflowed;
                acc.wall[k] += start.elapsed().as_secs_f64();
                if overflowed {
                    acc.overflow[k] += 1;
                    if config.overflow_policy == OverflowPolicy::Exclude {
                        continue;
                    }
                }
                acc.count[k] += 1;
                match config.error_mode {
                    ErrorMode::Terminal => {
                        let err = if overflowed {
                            f64::INFINITY
                        } else {
                            squared_distance(reference.at(fine_steps), path.terminal())
                        };
                        acc.sum[k][0] += err;
                        acc.sum_sq[k][0] += err * err;
                    }
                    ErrorMode::Sup => {
                        for n in 0..=path.steps() {
                            let err = if overflowed {
                                f64::INFINITY
                            } else {
                                squared_distance(reference.at(n * factor), path.state(n))
                            };
                            acc.sum[k][n] += err;
                            acc.sum_sq[k][n] += err * err;
                        }
                    }
                }
            }
        },
        Accumulator::merge,
    );

    let horizon = problem.horizon;
    let rows = exponents
        .iter()
        .enumerate()
        .map(|(k, &e)| {
            let (rms_error, stderr) = if acc.count[k] == 0 {
                (f64::INFINITY, f64::INFINITY)
            } else {
                // sup mode reports the grid time with the largest mean
                let mut best = (f64::NEG_INFINITY, 0.0);
                for n in 0..acc.sum[k].len() {
                    let (rms, se) = rms_with_stderr(acc.sum[k][n], acc.sum_sq[k][n], acc.count[k]);
                    if rms > best.0 || (rms.is_nan() && !best.0.is_nan()) {
                        best = (rms, se);
                    }
                }
                best
            };
            ErrorRow {
                h: horizon / (1u64 << e) as f64,
                rms_error,
                stderr,
                wall_seconds: acc.wall[k],
                overflow_count: acc.overflow[k],
            }
        })
        .collect();
    Ok(ErrorTable { rows })
}

fn reference_values(
    problem: &JumpDiffusionProblem,
    scheme: Scheme,
    config: &StudyConfig,
    noise: &NoiseRealization,
) -> ReferenceValues {
    let d = problem.state_dim();
    let fine_steps = noise.brownian.steps();
    let simulated = |s: Scheme| {
        let path = simulate_reference(problem, noise, &s, config.reference_exponent)
            .expect("noise generated at the reference level");
        let overflowed = path.overflowed();
        let states = (0..=fine_steps).flat_map(|n| path.state(n).to_vec()).collect();
        ReferenceValues {
            dim: d,
            stride: 1,
            states,
            overflowed,
        }
    };
    match config.reference {
        Reference::SameScheme => simulated(scheme),
        Reference::Scheme(s) => simulated(s),
        Reference::Exact => {
            let exact = problem.exact.as_ref().expect("checked by caller");
            let x0 = problem.initial_state(noise.master_seed, noise.path_index);
            let h = problem.horizon / fine_steps as f64;
            let events = noise.jumps.events();
            let m = problem.noise_dim();
            let eval = |k: usize, w: &[f64]| {
                let t = k as f64 * h;
                let upto = events.partition_point(|e| e.time <= t);
                let mut marks = events[..upto]
                    .iter()
                    .map(|e| problem.measure.atom(e.atom).mark.as_slice());
                exact.evaluate(&x0, t, w, &mut marks)
            };
            let (stride, states) = match config.error_mode {
                ErrorMode::Terminal => (fine_steps, {
                    let w = noise.brownian.brownian_value(fine_steps);
                    let mut s = x0.clone();
                    s.extend(eval(fine_steps, &w));
                    s
                }),
                ErrorMode::Sup => {
                    let w = noise.brownian.brownian_path();
                    let states = (0..=fine_steps).flat_map(|k| eval(k, &w[k * m..(k + 1) * m])).collect();
                    (1, states)
                }
            };
            let overflowed = states.iter().any(|v: &f64| !v.is_finite());
            ReferenceValues {
                dim: d,
                stride,
                states,
                overflowed,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_merton_linear, build_three_half_jump};

    fn config(exps: Vec<u32>, reference: u32, paths: usize) -> StudyConfig {
        StudyConfig {
            coarse_exponents: exps,
            reference_exponent: reference,
            paths,
            seed: 2024,
            error_mode: ErrorMode::Terminal,
            reference: Reference::SameScheme,
            overflow_policy: OverflowPolicy::Infinite,
        }
    }

    #[test]
    fn self_comparison_is_exact() {
        let p = build_three_half_jump(3.0, 1.0, 0.5, 0.1, 1.0, 10.0, 1.0).unwrap();
        for mode in [ErrorMode::Terminal, ErrorMode::Sup] {
            let mut c = config(vec![6], 6, 20);
            c.error_mode = mode;
            let t = estimate_strong_error(&p, Scheme::Tamed, &c).unwrap();
            assert_eq!(t.rows[0].rms_error, 0.0);
            assert_eq!(t.rows[0].overflow_count, 0);
        }
    }

    #[test]
    fn rows_sorted_by_decreasing_h() {
        let p = build_merton_linear(0.05, 0.2, 0.5, 1.0, 1.0, 1.0).unwrap();
        let t = estimate_strong_error(&p, Scheme::Tamed, &config(vec![6, 4, 5, 4], 7, 10)).unwrap();
        let hs: Vec<f64> = t.rows.iter().map(|r| r.h).collect();
        assert_eq!(hs, vec![1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0]);
        assert!(t.rows.iter().all(|r| r.rms_error >= 0.0));
    }

    #[test]
    fn sup_mode_dominates_terminal() {
        let p = build_merton_linear(0.05, 0.2, 0.5, 1.0, 1.0, 1.0).unwrap();
        let mut c = config(vec![3, 5], 8, 200);
        let term = estimate_strong_error(&p, Scheme::EulerMaruyama, &c).unwrap();
        c.error_mode = ErrorMode::Sup;
        let sup = estimate_strong_error(&p, Scheme::EulerMaruyama, &c).unwrap();
        for (a, b) in term.rows.iter().zip(&sup.rows) {
            assert!(b.rms_error >= a.rms_error);
        }
    }

    #[test]
    fn exact_reference_requires_closed_form() {
        let p = build_three_half_jump(3.0, 1.0, 0.5, 0.1, 1.0, 10.0, 1.0).unwrap();
        let mut c = config(vec![3], 5, 4);
        c.reference = Reference::Exact;
        assert!(estimate_strong_error(&p, Scheme::Tamed, &c).is_err());
    }

    #[test]
    fn invalid_configs() {
        let p = build_merton_linear(0.05, 0.2, 0.5, 1.0, 1.0, 1.0).unwrap();
        assert!(estimate_strong_error(&p, Scheme::Tamed, &config(vec![6], 5, 10)).is_err());
        assert!(estimate_strong_error(&p, Scheme::Tamed, &config(vec![3], 5, 1)).is_err());
        assert!(estimate_strong_error(&p, Scheme::Tamed, &config(vec![], 5, 10)).is_err());
    }

    #[test]
    fn divergent_paths_are_counted() {
        let p = build_three_half_jump(3.0, 1.0, 0.5, 0.1, 1.0, 10.0, 1.0).unwrap();
        let mut c = config(vec![4, 5], 8, 100);
        c.reference = Reference::Scheme(Scheme::Tamed);
        let t = estimate_strong_error(&p, Scheme::EulerMaruyama, &c).unwrap();
        assert!(t.rows[0].overflow_count > 0);
        assert_eq!(t.rows[0].rms_error, f64::INFINITY);
        c.overflow_policy = OverflowPolicy::Exclude;
        let t = estimate_strong_error(&p, Scheme::EulerMaruyama, &c).unwrap();
        assert!(t.rows[0].overflow_count > 0 && t.rows[0].overflow_count < 100);
        assert!(t.rows[0].rms_error.is_finite());
    }

    #[test]
    fn csv_format() {
        let t = ErrorTable {
            rows: vec![ErrorRow {
                h: 0.25,
                rms_error: 0.1,
                stderr: 0.001,
                wall_seconds: 1.5,
                overflow_count: 0,
            }],
        };
        assert_eq!(
            t.to_csv(),
            "h,rms_error,stderr,wall_seconds,overflow_count\n0.25,0.1,0.001,1.5,0\n"
        );
    }
}
