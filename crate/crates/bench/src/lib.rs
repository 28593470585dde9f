//! Shared fixtures for the benchmarks.

use jsde_core::models::{build_cubic_additive, build_three_half_jump};
use jsde_core::{JumpDiffusionProblem, NoiseRealization};

pub const SEED: u64 = 7;

/// The two models of the timing table: `(label, problem)`.
pub fn models() -> Vec<(&'static str, JumpDiffusionProblem)> {
    vec![
        (
            "three-half-jump",
            build_three_half_jump(3.0, 1.0, 0.5, 0.1, 1.0, 10.0, 1.0).unwrap(),
        ),
        ("cubic-additive", build_cubic_additive(5.0, 1.0).unwrap()),
    ]
}

/// Noise for path `index` at `2^level` steps.
pub fn noise(problem: &JumpDiffusionProblem, level: u32, index: u64) -> NoiseRealization {
    NoiseRealization::generate(
        SEED,
        index,
        level,
        problem.horizon,
        problem.noise_dim(),
        &problem.measure,
    )
}
