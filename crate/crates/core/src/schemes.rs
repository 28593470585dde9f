//! One-step maps and the time-stepping driver.
//!
//! Every scheme here has the form
//!
//! ```text
//! Y_{n+1} = Y_n + F(f(Y_n)) + G(g(Y_n)) ΔW_n + Σ_jumps J(σ(Y_n, z_j)) - h ∫_Z J(σ(Y_n, z)) ν(dz)
//! ```
//!
//! with scheme-specific transforms `F`, `G`, `J` applied to the coefficient
//! values: the identity for Euler–Maruyama, `v ↦ v/(1+|v|h)` for tamed Euler
//! and an entrywise sine for sine Euler. The jump transform is evaluated once
//! per atom and step, so the compensator and the realized jumps share it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::noise::{JumpEvent, NoiseRealization};
use crate::problem::{add_matvec, norm, JumpDiffusionProblem};

/// Inputs of one step from `(t, x)` over `[t, t + h]`.
#[derive(Debug, Clone, Copy)]
pub struct StepInput<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub h: f64,
    pub dw: &'a [f64],
    /// Jumps realized in `(t, t + h]`.
    pub jumps: &'a [JumpEvent],
}

/// Scratch buffers reused across steps.
#[derive(Debug, Default, Clone)]
pub struct StepWorkspace {
    drift: Vec<f64>,
    diffusion: Vec<f64>,
    jump: Vec<f64>,
    /// Transformed jump coefficient per atom, `n_atoms × d`.
    atom_jumps: Vec<f64>,
}

/// A one-step approximation `Y_{n+1} = Y_n + Ψ(t_n, Y_n, h, ΔW_n, jumps)`.
pub trait OneStepScheme: Send + Sync {
    fn name(&self) -> &str;

    /// Writes `Y_{n+1}` into `next`. Non-finite coefficient values propagate.
    fn step(&self, problem: &JumpDiffusionProblem, input: StepInput<'_>, ws: &mut StepWorkspace, next: &mut [f64]);

    /// A priori bound on `|Y_{n+1}|` implied by the scheme's construction.
    fn norm_bound(&self, _problem: &JumpDiffusionProblem, _input: StepInput<'_>) -> Option<f64> {
        None
    }
}

/// The built-in explicit schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    EulerMaruyama,
    Tamed,
    Sine,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::EulerMaruyama, Scheme::Tamed, Scheme::Sine];

    pub fn id(self) -> &'static str {
        match self {
            Scheme::EulerMaruyama => "euler-maruyama",
            Scheme::Tamed => "tamed",
            Scheme::Sine => "sine",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler-maruyama" | "em" | "euler" => Ok(Scheme::EulerMaruyama),
            "tamed" | "tamed-euler" => Ok(Scheme::Tamed),
            "sine" | "sine-euler" => Ok(Scheme::Sine),
            other => Err(Error::Argument(format!(
                "unknown scheme '{other}' (expected euler-maruyama, tamed or sine)"
            ))),
        }
    }
}

impl OneStepScheme for Scheme {
    fn name(&self) -> &str {
        self.id()
    }

    fn step(&self, problem: &JumpDiffusionProblem, input: StepInput<'_>, ws: &mut StepWorkspace, next: &mut [f64]) {
        let coeffs = &problem.coefficients;
        let d = problem.state_dim();
        let h = input.h;
        let x = input.x;
        debug_assert_eq!(x.len(), d);
        debug_assert_eq!(next.len(), d);
        next.copy_from_slice(x);

        coeffs.drift(x, &mut ws.drift);
        match self {
            Scheme::EulerMaruyama => {
                for (y, f) in next.iter_mut().zip(&ws.drift) {
                    *y += f * h;
                }
            }
            Scheme::Tamed => {
                let denom = 1.0 + norm(&ws.drift) * h;
                for (y, f) in next.iter_mut().zip(&ws.drift) {
                    *y += f * h / denom;
                }
            }
            Scheme::Sine => {
                for (y, f) in next.iter_mut().zip(&ws.drift) {
                    *y += (f * h).sin();
                }
            }
        }

        coeffs.diffusion(x, &mut ws.diffusion);
        match self {
            Scheme::EulerMaruyama => add_matvec(next, &ws.diffusion, input.dw, 1.0),
            Scheme::Tamed => {
                let denom = 1.0 + norm(&ws.diffusion) * h;
                add_matvec(next, &ws.diffusion, input.dw, 1.0 / denom);
            }
            Scheme::Sine => {
                for g in ws.diffusion.iter_mut() {
                    *g = (*g * h).sin() / h;
                }
                add_matvec(next, &ws.diffusion, input.dw, 1.0);
            }
        }

        let atoms = problem.measure.atoms();
        ws.atom_jumps.clear();
        for atom in atoms {
            coeffs.jump(x, &atom.mark, &mut ws.jump);
            match self {
                Scheme::EulerMaruyama => {}
                Scheme::Tamed => {
                    let denom = 1.0 + norm(&ws.jump) * h;
                    for s in ws.jump.iter_mut() {
                        *s /= denom;
                    }
                }
                Scheme::Sine => {
                    for s in ws.jump.iter_mut() {
                        *s = (*s * h).sin() / h;
                    }
                }
            }
            ws.atom_jumps.extend_from_slice(&ws.jump);
        }
        for event in input.jumps {
            let j = &ws.atom_jumps[event.atom * d..(event.atom + 1) * d];
            for (y, s) in next.iter_mut().zip(j) {
                *y += s;
            }
        }
        for (i, atom) in atoms.iter().enumerate() {
            let j = &ws.atom_jumps[i * d..(i + 1) * d];
            for (y, s) in next.iter_mut().zip(j) {
                *y -= h * atom.weight * s;
            }
        }
    }

    fn norm_bound(&self, problem: &JumpDiffusionProblem, input: StepInput<'_>) -> Option<f64> {
        let h = input.h;
        let lambda = problem.measure.total_mass();
        let jumps = input.jumps.len() as f64;
        let x = norm(input.x);
        let dw = norm(input.dw);
        match self {
            Scheme::EulerMaruyama => None,
            Scheme::Tamed => Some(x + 1.0 + dw / h + lambda + jumps / h),
            Scheme::Sine => {
                let d = problem.state_dim() as f64;
                let m = problem.noise_dim() as f64;
                let sd = d.sqrt();
                Some(x + sd + (m * d).sqrt() * dw / h + sd * lambda + sd * jumps / h)
            }
        }
    }
}

fn one_step(scheme: Scheme, problem: &JumpDiffusionProblem, input: StepInput<'_>) -> Vec<f64> {
    let mut next = vec![0.0; problem.state_dim()];
    scheme.step(problem, input, &mut StepWorkspace::default(), &mut next);
    next
}

/// `x + f h + g ΔW + Σ σ(x, z_j) - h ∫ σ(x, z) ν(dz)`.
pub fn euler_maruyama_step(problem: &JumpDiffusionProblem, input: StepInput<'_>) -> Vec<f64> {
    one_step(Scheme::EulerMaruyama, problem, input)
}

/// Tamed Euler: each coefficient `v` enters as `v / (1 + |v| h)`, jumps
/// tamed per mark.
pub fn tamed_euler_step(problem: &JumpDiffusionProblem, input: StepInput<'_>) -> Vec<f64> {
    one_step(Scheme::Tamed, problem, input)
}

/// Sine Euler: `x + sin(f h) + sin(g h)/h ΔW + Σ sin(σ_j h)/h - h ∫ sin(σ h)/h dν`.
pub fn sine_euler_step(problem: &JumpDiffusionProblem, input: StepInput<'_>) -> Vec<f64> {
    one_step(Scheme::Sine, problem, input)
}

/// States `Y_0 … Y_N` on the uniform grid `t_n = n T / N`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePath {
    step_size: f64,
    dim: usize,
    /// Row-major `(N + 1) × d`.
    states: Vec<f64>,
    /// First index whose state is not finite.
    pub first_overflow: Option<usize>,
}

impl DiscretePath {
    pub fn steps(&self) -> usize {
        self.states.len() / self.dim - 1
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.step_size
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps()).map(|n| self.time(n)).collect()
    }

    #[inline]
    pub fn state(&self, n: usize) -> &[f64] {
        &self.states[n * self.dim..(n + 1) * self.dim]
    }

    pub fn terminal(&self) -> &[f64] {
        self.state(self.steps())
    }

    pub fn overflowed(&self) -> bool {
        self.first_overflow.is_some()
    }

    /// The path restricted to every `factor`-th grid time.
    pub fn subsample(&self, factor: usize) -> Result<DiscretePath> {
        ensure!(
            factor >= 1 && self.steps().is_multiple_of(factor),
            Argument,
            "subsampling factor {factor} does not divide {} steps",
            self.steps()
        );
        let coarse_steps = self.steps() / factor;
        let mut states = Vec::with_capacity((coarse_steps + 1) * self.dim);
        for k in 0..=coarse_steps {
            states.extend_from_slice(self.state(k * factor));
        }
        let first_overflow = self.first_overflow.map(|n| n.div_ceil(factor));
        Ok(DiscretePath {
            step_size: self.step_size * factor as f64,
            dim: self.dim,
            states,
            first_overflow: first_overflow.filter(|&k| k <= coarse_steps),
        })
    }
}

/// Runs `scheme` with `steps` uniform steps on `noise`, coarsening its
/// Brownian increments as needed. `steps` must be a power of two dividing
/// `2^level`.
pub fn simulate_path<S: OneStepScheme + ?Sized>(
    problem: &JumpDiffusionProblem,
    scheme: &S,
    noise: &NoiseRealization,
    steps: usize,
) -> Result<DiscretePath> {
    let x0 = problem.initial_state(noise.master_seed, noise.path_index);
    simulate_from(problem, scheme, noise, steps, &x0)
}

/// As [`simulate_path`] but started from an explicit state.
pub fn simulate_from<S: OneStepScheme + ?Sized>(
    problem: &JumpDiffusionProblem,
    scheme: &S,
    noise: &NoiseRealization,
    steps: usize,
    x0: &[f64],
) -> Result<DiscretePath> {
    let fine_steps = noise.brownian.steps();
    ensure!(
        steps >= 1 && steps.is_power_of_two() && steps <= fine_steps,
        Argument,
        "{steps} steps incompatible with noise of {fine_steps} steps"
    );
    ensure!(
        noise.brownian.dim() == problem.noise_dim(),
        Argument,
        "noise has {} Brownian components, problem needs {}",
        noise.brownian.dim(),
        problem.noise_dim()
    );
    ensure!(
        x0.len() == problem.state_dim(),
        Argument,
        "initial state has dimension {}, expected {}",
        x0.len(),
        problem.state_dim()
    );
    let coarse;
    let grid = if steps == fine_steps {
        &noise.brownian
    } else {
        coarse = noise.brownian.coarsen(fine_steps / steps)?;
        &coarse
    };

    let d = problem.state_dim();
    let h = noise.horizon() / steps as f64;
    let mut states = vec![0.0; (steps + 1) * d];
    states[..d].copy_from_slice(x0);
    let mut first_overflow = x0.iter().any(|v| !v.is_finite()).then_some(0);
    let mut ws = StepWorkspace::default();

    for n in 0..steps {
        let (done, rest) = states.split_at_mut((n + 1) * d);
        let x = &done[n * d..];
        let next = &mut rest[..d];
        let t = n as f64 * h;
        let input = StepInput {
            t,
            x,
            h,
            dw: grid.increment(n),
            jumps: noise.jumps.window(t, (n + 1) as f64 * h),
        };
        scheme.step(problem, input, &mut ws, next);

        let finite = next.iter().all(|v| v.is_finite());
        if !finite && first_overflow.is_none() {
            first_overflow = Some(n + 1);
        }
        if cfg!(debug_assertions) && finite {
            if let Some(bound) = scheme.norm_bound(problem, input) {
                let y = norm(next);
                debug_assert!(
                    y <= bound * (1.0 + 1e-12) + 1e-12,
                    "{} step {n}: |Y| = {y} exceeds a priori bound {bound}",
                    scheme.name()
                );
            }
        }
    }

    Ok(DiscretePath {
        step_size: h,
        dim: d,
        states,
        first_overflow,
    })
}

/// Solution on the finest grid of `noise`, used as the "exact" solution of
/// a strong-error study.
pub fn simulate_reference<S: OneStepScheme + ?Sized>(
    problem: &JumpDiffusionProblem,
    noise: &NoiseRealization,
    reference_scheme: &S,
    level: u32,
) -> Result<DiscretePath> {
    ensure!(
        level == noise.level(),
        Argument,
        "reference level {level} differs from noise level {}",
        noise.level()
    );
    simulate_path(problem, reference_scheme, noise, 1 << level)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::MarkMeasure;
    use crate::noise::{BrownianGrid, JumpStream};
    use crate::problem::{FnCoefficients, InitialState};
    use std::sync::Arc;

    fn problem(coeffs: FnCoefficients, rate: f64, x0: f64) -> JumpDiffusionProblem {
        JumpDiffusionProblem::new(
            "t",
            Arc::new(coeffs),
            MarkMeasure::poisson(rate).unwrap(),
            InitialState::Fixed(vec![x0]),
            1.0,
        )
        .unwrap()
    }

    fn input<'a>(x: &'a [f64], h: f64, dw: &'a [f64], jumps: &'a [JumpEvent]) -> StepInput<'a> {
        StepInput {
            t: 0.0,
            x,
            h,
            dw,
            jumps,
        }
    }

    const ONE_JUMP: [JumpEvent; 1] = [JumpEvent { time: 0.05, atom: 0 }];

    #[test]
    fn zero_coefficients_are_identity() {
        let p = problem(FnCoefficients::zero(1, 1), 1.0, 0.0);
        for s in Scheme::ALL {
            let y = one_step(s, &p, input(&[3.5], 0.1, &[0.7], &ONE_JUMP));
            assert_eq!(y, vec![3.5], "{s}");
        }
    }

    #[test]
    fn euler_maruyama_examples() {
        let cubic = problem(
            FnCoefficients::new(1, 1, |x| vec![-x[0].powi(3)], |_| vec![0.0], |_, _| vec![0.0]),
            1.0,
            2.0,
        );
        assert_eq!(euler_maruyama_step(&cubic, input(&[2.0], 0.25, &[0.0], &[])), vec![0.0]);

        let linear = problem(
            FnCoefficients::new(1, 1, |_| vec![0.0], |x| vec![x[0]], |x, z| vec![x[0] * z[0]]),
            1.0,
            1.0,
        );
        let y = euler_maruyama_step(&linear, input(&[1.0], 0.1, &[0.5], &ONE_JUMP));
        assert!((y[0] - 2.4).abs() < 1e-15, "{y:?}");
    }

    #[test]
    fn tamed_example_and_drift_bound() {
        let cubic = problem(
            FnCoefficients::new(1, 1, |x| vec![-x[0].powi(3)], |_| vec![0.0], |_, _| vec![0.0]),
            1.0,
            2.0,
        );
        let y = tamed_euler_step(&cubic, input(&[2.0], 0.5, &[0.0], &[]));
        assert!((y[0] - 1.2).abs() < 1e-15);
        for x in [-1e6, -30.0, 0.3, 7.0, 1e8] {
            for h in [1e-4, 0.01, 0.5, 2.0] {
                let y = tamed_euler_step(&cubic, input(&[x], h, &[0.0], &[]));
                assert!((y[0] - x).abs() <= 1.0 * (1.0 + 1e-15), "x={x} h={h}");
            }
        }
    }

    #[test]
    fn sine_example() {
        let p = problem(
            FnCoefficients::new(1, 1, |_| vec![-8.0], |_| vec![0.0], |_, _| vec![0.0]),
            1.0,
            2.0,
        );
        let y = sine_euler_step(&p, input(&[2.0], 0.5, &[0.0], &[]));
        assert!((y[0] - 2.756_802_495).abs() < 1e-9, "{y:?}");
    }

    #[test]
    fn sine_approaches_euler_maruyama_at_third_order() {
        let p = problem(
            FnCoefficients::new(
                1,
                1,
                |x| vec![x[0] - x[0].powi(3)],
                |x| vec![x[0] * x[0]],
                |x, z| vec![x[0] * z[0]],
            ),
            2.0,
            1.5,
        );
        let x = [1.5];
        let (f, g, s): (f64, f64, f64) = (1.5 - 1.5f64.powi(3), 2.25, 1.5);
        for h in [0.1f64, 0.01, 0.001] {
            let dw = [0.3 * h.sqrt()];
            let a = sine_euler_step(&p, input(&x, h, &dw, &ONE_JUMP));
            let b = euler_maruyama_step(&p, input(&x, h, &dw, &ONE_JUMP));
            // |u - sin u| ≤ |u|³/6 summed over every sine argument
            let bound = (f * h).abs().powi(3) / 6.0
                + (g * h).abs().powi(3) / 6.0 / h * dw[0].abs()
                + (s * h).abs().powi(3) / 6.0 / h * (1.0 + 2.0 * h);
            assert!((a[0] - b[0]).abs() <= bound * (1.0 + 1e-9) + 1e-15, "h={h}");
        }
    }

    #[test]
    fn tamed_minus_em_drift_identity() {
        let p = problem(
            FnCoefficients::new(1, 1, |x| vec![x[0] - x[0].powi(3)], |_| vec![0.0], |_, _| vec![0.0]),
            1.0,
            0.0,
        );
        for x in [-4.0f64, 0.5, 3.0] {
            let f = x - x.powi(3);
            for h in [0.1, 0.01, 0.001] {
                let a = tamed_euler_step(&p, input(&[x], h, &[0.0], &[]));
                let b = euler_maruyama_step(&p, input(&[x], h, &[0.0], &[]));
                let exact = f * f * h * h / (1.0 + f.abs() * h);
                assert!(
                    ((b[0] - a[0]).abs() - exact).abs() <= 1e-12 * (1.0 + x.abs()),
                    "x={x} h={h}"
                );
            }
        }
    }

    #[test]
    fn multidimensional_tamed_uses_frobenius_norm() {
        let coeffs = FnCoefficients::new(
            2,
            2,
            |_| vec![3.0, 4.0],
            |_| vec![1.0, 2.0, 2.0, 4.0],
            |_, z| vec![z[0], 0.0],
        );
        let p = JumpDiffusionProblem::new(
            "2d",
            Arc::new(coeffs),
            MarkMeasure::new(vec![crate::measure::Atom {
                mark: vec![2.0, 1.0],
                weight: 0.5,
            }])
            .unwrap(),
            InitialState::Fixed(vec![0.0, 0.0]),
            1.0,
        )
        .unwrap();
        let h = 0.1;
        let y = tamed_euler_step(&p, input(&[0.0, 0.0], h, &[1.0, 0.0], &ONE_JUMP));
        let fd = 1.0 + 5.0 * h;
        let gd = 1.0 + 5.0 * h;
        let sd = 1.0 + 2.0 * h;
        let expected = [
            3.0 * h / fd + 1.0 / gd + 2.0 / sd - h * 0.5 * 2.0 / sd,
            4.0 * h / fd + 2.0 / gd,
        ];
        for k in 0..2 {
            assert!((y[k] - expected[k]).abs() < 1e-14, "{y:?} vs {expected:?}");
        }
    }

    #[test]
    fn single_step_path_with_zero_coefficients() {
        let p = problem(FnCoefficients::zero(1, 1), 1.0, 4.0);
        let noise = NoiseRealization::generate(1, 0, 0, 1.0, 1, &p.measure);
        let path = simulate_path(&p, &Scheme::Tamed, &noise, 1).unwrap();
        assert_eq!(path.steps(), 1);
        assert_eq!(path.state(0), &[4.0]);
        assert_eq!(path.state(1), &[4.0]);
    }

    #[test]
    fn incompatible_step_counts_are_rejected() {
        let p = problem(FnCoefficients::zero(1, 1), 1.0, 0.0);
        let noise = NoiseRealization::generate(1, 0, 3, 1.0, 1, &p.measure);
        assert!(simulate_path(&p, &Scheme::Tamed, &noise, 3).is_err());
        assert!(simulate_path(&p, &Scheme::Tamed, &noise, 16).is_err());
        assert!(simulate_path(&p, &Scheme::Tamed, &noise, 0).is_err());
        assert!(simulate_reference(&p, &noise, &Scheme::Tamed, 2).is_err());
    }

    #[test]
    fn coarse_run_uses_coarsened_increments() {
        // drift-free, jump-free EM integrates dW exactly: Y_N = X_0 + W(T)
        let p = problem(
            FnCoefficients::new(1, 1, |_| vec![0.0], |_| vec![1.0], |_, _| vec![0.0]),
            1.0,
            0.0,
        );
        let grid = BrownianGrid::from_increments(2, 1.0, 1, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let noise = NoiseRealization {
            brownian: grid,
            jumps: JumpStream::empty(),
            master_seed: 0,
            path_index: 0,
        };
        let path = simulate_path(&p, &Scheme::EulerMaruyama, &noise, 2).unwrap();
        assert_eq!(path.state(1), &[0.1 + 0.2]);
        assert_eq!(path.state(2), &[(0.1 + 0.2) + (0.3 + 0.4)]);
    }

    #[test]
    fn subsampling() {
        let p = problem(
            FnCoefficients::new(1, 1, |x| vec![-x[0]], |_| vec![1.0], |_, _| vec![1.0]),
            1.0,
            1.0,
        );
        let noise = NoiseRealization::generate(3, 0, 4, 1.0, 1, &p.measure);
        let r = simulate_reference(&p, &noise, &Scheme::Tamed, 4).unwrap();
        assert_eq!(r.subsample(1).unwrap(), r);
        let s2 = r.subsample(2).unwrap();
        let s4 = r.subsample(4).unwrap();
        assert_eq!(s2.state(2), s4.state(1));
        assert_eq!(s4.state(4), r.terminal());
        assert!(r.subsample(3).is_err());
    }

    #[test]
    fn overflow_is_recorded_not_fatal() {
        let p = problem(
            FnCoefficients::new(1, 1, |x| vec![x[0].powi(5)], |_| vec![0.0], |_, _| vec![0.0]),
            1.0,
            10.0,
        );
        let noise = NoiseRealization::generate(3, 0, 4, 1.0, 1, &p.measure);
        let em = simulate_path(&p, &Scheme::EulerMaruyama, &noise, 16).unwrap();
        assert!(em.overflowed());
        let k = em.first_overflow.unwrap();
        assert!(em.state(k - 1)[0].is_finite());
        assert!(!em.terminal()[0].is_finite());
        let tamed = simulate_path(&p, &Scheme::Tamed, &noise, 16).unwrap();
        assert!(!tamed.overflowed());
    }

    #[test]
    fn parse_scheme_ids() {
        for s in Scheme::ALL {
            assert_eq!(s.id().parse::<Scheme>().unwrap(), s);
        }
        assert!("milstein".parse::<Scheme>().is_err());
    }
}
