//! Jump-diffusion problem definitions.
//!
//! A problem is the SDE
//!
//! ```text
//! dX(t) = f(X(t-)) dt + g(X(t-)) dW(t) + ∫_Z σ(X(t-), z) N̄(dt, dz),  X(0) = X₀
//! ```
//!
//! on `[0, T]` with `X ∈ R^d`, an `m`-dimensional Wiener process `W` and a
//! compensated Poisson random measure `N̄` whose mark measure is finite.

use std::fmt;
use std::sync::Arc;

use rand::RngCore;
use serde::Serialize;

use crate::error::{ensure, Result};
use crate::measure::MarkMeasure;
use crate::noise::{derive_path_rng, INITIAL_STREAM};

/// Drift, diffusion and jump coefficients of a jump-diffusion SDE.
///
/// Every method clears `out` and writes the value into it: `d` entries for
/// `drift` and `jump`, `d * m` row-major entries for `diffusion`. Reusing the
/// output buffer keeps time stepping allocation-free.
///
/// Implementations must be pure and re-entrant: the same input always gives
/// bit-identical output, from any thread.
pub trait Coefficients: Send + Sync {
    fn state_dim(&self) -> usize;
    fn noise_dim(&self) -> usize;
    fn drift(&self, x: &[f64], out: &mut Vec<f64>);
    fn diffusion(&self, x: &[f64], out: &mut Vec<f64>);
    fn jump(&self, x: &[f64], mark: &[f64], out: &mut Vec<f64>);

    /// Analytic drift Jacobian `∂fᵢ/∂xⱼ`, row-major `d × d`, when registered.
    fn drift_jacobian(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Analytic second drift derivatives `∂²fᵢ/∂xⱼ∂xₖ`, laid out `[i][j][k]`.
    fn drift_hessian(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }
}

type VecFn = dyn Fn(&[f64]) -> Vec<f64> + Send + Sync;
type JumpFn = dyn Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync;

/// Coefficients assembled from user-registered closures.
#[derive(Clone)]
pub struct FnCoefficients {
    state_dim: usize,
    noise_dim: usize,
    drift: Arc<VecFn>,
    diffusion: Arc<VecFn>,
    jump: Arc<JumpFn>,
    jacobian: Option<Arc<VecFn>>,
    hessian: Option<Arc<VecFn>>,
}

impl FnCoefficients {
    pub fn new<F, G, S>(state_dim: usize, noise_dim: usize, drift: F, diffusion: G, jump: S) -> Self
    where
        F: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        G: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        S: Fn(&[f64], &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        Self {
            state_dim,
            noise_dim,
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            jump: Arc::new(jump),
            jacobian: None,
            hessian: None,
        }
    }

    /// All-zero coefficients in dimensions `d`, `m`.
    pub fn zero(state_dim: usize, noise_dim: usize) -> Self {
        Self::new(
            state_dim,
            noise_dim,
            move |_| vec![0.0; state_dim],
            move |_| vec![0.0; state_dim * noise_dim],
            move |_, _| vec![0.0; state_dim],
        )
    }

    pub fn with_jacobian<J>(mut self, jacobian: J) -> Self
    where
        J: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.jacobian = Some(Arc::new(jacobian));
        self
    }

    pub fn with_hessian<H>(mut self, hessian: H) -> Self
    where
        H: Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.hessian = Some(Arc::new(hessian));
        self
    }
}

impl Coefficients for FnCoefficients {
    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    fn drift(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend((self.drift)(x));
    }

    fn diffusion(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend((self.diffusion)(x));
    }

    fn jump(&self, x: &[f64], mark: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend((self.jump)(x, mark));
    }

    fn drift_jacobian(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.jacobian.as_ref().map(|j| j(x))
    }

    fn drift_hessian(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.hessian.as_ref().map(|h| h(x))
    }
}

/// Closed-form pathwise solution used as an error oracle.
pub trait ExactSolution: Send + Sync {
    /// `X(t)` started from `x0` at time 0, given the Brownian value `W(t)` and
    /// the marks of all jumps in `(0, t]`.
    fn evaluate(&self, x0: &[f64], t: f64, brownian: &[f64], marks: &mut dyn Iterator<Item = &[f64]>) -> Vec<f64>;
}

/// Draws a random initial state.
pub trait InitialSampler: Send + Sync {
    fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64>;
}

/// Deterministic or per-path random initial data.
#[derive(Clone)]
pub enum InitialState {
    Fixed(Vec<f64>),
    Sampled(Arc<dyn InitialSampler>),
}

impl fmt::Debug for InitialState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialState::Fixed(x) => f.debug_tuple("Fixed").field(x).finish(),
            InitialState::Sampled(_) => f.write_str("Sampled(..)"),
        }
    }
}

/// A jump-diffusion SDE on a finite horizon.
#[derive(Clone)]
pub struct JumpDiffusionProblem {
    pub name: String,
    pub coefficients: Arc<dyn Coefficients>,
    pub measure: MarkMeasure,
    pub initial: InitialState,
    pub horizon: f64,
    pub exact: Option<Arc<dyn ExactSolution>>,
}

impl fmt::Debug for JumpDiffusionProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("JumpDiffusionProblem")
            .field("name", &self.name)
            .field("state_dim", &self.state_dim())
            .field("noise_dim", &self.noise_dim())
            .field("measure", &self.measure)
            .field("initial", &self.initial)
            .field("horizon", &self.horizon)
            .field("exact", &self.exact.is_some())
            .finish()
    }
}

impl JumpDiffusionProblem {
    pub fn new(
        name: impl Into<String>,
        coefficients: Arc<dyn Coefficients>,
        measure: MarkMeasure,
        initial: InitialState,
        horizon: f64,
    ) -> Result<Self> {
        ensure!(
            horizon.is_finite() && horizon > 0.0,
            Problem,
            "horizon must be positive, got {horizon}"
        );
        ensure!(
            coefficients.state_dim() >= 1 && coefficients.noise_dim() >= 1,
            Problem,
            "dimensions must be at least 1"
        );
        if let InitialState::Fixed(x0) = &initial {
            ensure!(
                x0.len() == coefficients.state_dim(),
                Problem,
                "initial state has dimension {}, expected {}",
                x0.len(),
                coefficients.state_dim()
            );
        }
        Ok(Self {
            name: name.into(),
            coefficients,
            measure,
            initial,
            horizon,
            exact: None,
        })
    }

    pub fn with_exact(mut self, exact: Arc<dyn ExactSolution>) -> Self {
        self.exact = Some(exact);
        self
    }

    pub fn state_dim(&self) -> usize {
        self.coefficients.state_dim()
    }

    pub fn noise_dim(&self) -> usize {
        self.coefficients.noise_dim()
    }

    /// Initial state of path `path_index`; fixed data ignores the indices.
    pub fn initial_state(&self, master_seed: u64, path_index: u64) -> Vec<f64> {
        match &self.initial {
            InitialState::Fixed(x0) => x0.clone(),
            InitialState::Sampled(sampler) => {
                let mut rng = derive_path_rng(master_seed, path_index, INITIAL_STREAM);
                sampler.sample(&mut rng)
            }
        }
    }
}

/// Outcome of [`validate_problem`].
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub probes: usize,
    pub failures: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Probes the coefficients at `X₀` and a few perturbed points and collects
/// every dimension mismatch, non-finite output and measure violation.
pub fn validate_problem(problem: &JumpDiffusionProblem) -> ValidationReport {
    let mut report = ValidationReport::default();
    let d = problem.state_dim();
    let m = problem.noise_dim();
    let coeffs = &problem.coefficients;

    if !(problem.horizon.is_finite() && problem.horizon > 0.0) {
        report
            .failures
            .push(format!("horizon must be positive, got {}", problem.horizon));
    }
    for failure in MarkMeasure::invariant_failures(problem.measure.atoms()) {
        report.failures.push(format!("measure: {failure}"));
    }

    let x0 = problem.initial_state(0, 0);
    if x0.len() != d {
        report
            .failures
            .push(format!("initial state has dimension {}, expected {d}", x0.len()));
        return report;
    }

    let mut probes = vec![x0.clone()];
    for shift in [-1.0, -0.5, 0.5, 1.0] {
        probes.push(x0.iter().map(|v| v + shift).collect());
    }
    probes.push(x0.iter().map(|v| 2.0 * v).collect());
    probes.push(vec![0.0; d]);

    let mut buf = Vec::new();
    for x in &probes {
        report.probes += 1;
        coeffs.drift(x, &mut buf);
        check_output(&mut report, "drift", x, &buf, d);
        coeffs.diffusion(x, &mut buf);
        check_output(&mut report, "diffusion", x, &buf, d * m);
        for atom in problem.measure.atoms() {
            coeffs.jump(x, &atom.mark, &mut buf);
            check_output(&mut report, "jump", x, &buf, d);
        }
        if let Some(jac) = coeffs.drift_jacobian(x) {
            check_output(&mut report, "drift jacobian", x, &jac, d * d);
        }
        if let Some(hess) = coeffs.drift_hessian(x) {
            check_output(&mut report, "drift hessian", x, &hess, d * d * d);
        }
    }
    report
}

fn check_output(report: &mut ValidationReport, what: &str, x: &[f64], out: &[f64], len: usize) {
    if out.len() != len {
        report
            .failures
            .push(format!("{what} at {x:?}: {} components, expected {len}", out.len()));
    } else if out.iter().any(|v| !v.is_finite()) {
        report
            .failures
            .push(format!("{what} at {x:?}: non-finite output {out:?}"));
    }
}

/// Euclidean norm of a vector, Frobenius (trace) norm of a matrix.
#[inline]
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out += scale * A v` for a row-major `d × m` matrix `A`.
#[inline]
pub(crate) fn add_matvec(out: &mut [f64], a: &[f64], v: &[f64], scale: f64) {
    let m = v.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o += scale * dot(&a[i * m..(i + 1) * m], v);
    }
}
