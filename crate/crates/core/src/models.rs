//! Built-in test equations and the model registry.
//!
//! - `three-half-jump`: `dX = μX(ν-|X|)dt + ξ|X|^{3/2}dW + ηX ln(1+X²) dN̄`
//! - `cubic-additive`: `dX = (X - X³)dt + dW + dN̄`
//! - `merton-linear`: `dX = X(a dt + b dW + c dN̄)`, which has a closed-form
//!   solution and serves as an oracle for the whole error pipeline.
//!
//! All three are scalar and driven by a compensated Poisson process,
//! represented as the single atom `(mark 1, weight λ)`.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{ensure, Error, Result};
use crate::measure::MarkMeasure;
use crate::problem::{Coefficients, ExactSolution, InitialState, JumpDiffusionProblem};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThreeHalfJump {
    pub mu: f64,
    pub nu: f64,
    pub xi: f64,
    pub eta: f64,
}

impl Coefficients for ThreeHalfJump {
    fn state_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn drift(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.push(self.mu * x[0] * (self.nu - x[0].abs()));
    }
    fn diffusion(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.push(self.xi * x[0].abs().powf(1.5));
    }
    fn jump(&self, x: &[f64], mark: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.push(self.eta * x[0] * (x[0] * x[0]).ln_1p() * mark[0]);
    }
    fn drift_jacobian(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(vec![self.mu * self.nu - 2.0 * self.mu * x[0].abs()])
    }
    fn drift_hessian(&self, x: &[f64]) -> Option<Vec<f64>> {
        // f'' = -2μ sgn(x); the kink at 0 is assigned 0
        let s = if x[0] > 0.0 {
            1.0
        } else if x[0] < 0.0 {
            -1.0
        } else {
            0.0
        };
        Some(vec![-2.0 * self.mu * s])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CubicAdditive;

impl Coefficients for CubicAdditive {
    fn state_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn drift(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.push(x[0] - x[0] * x[0] * x[0]);
    }
    fn diffusion(&self, _x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.push(1.0);
    }
    fn jump(&self, _x: &[f64], mark: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.push(mark[0]);
    }
    fn drift_jacobian(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(vec![1.0 - 3.0 * x[0] * x[0]])
    }
    fn drift_hessian(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(vec![-6.0 * x[0]])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MertonLinear {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl Coefficients for MertonLinear {
    fn state_dim(&self) -> usize {
        1
    }
    fn noise_dim(&self) -> usize {
        1
    }
    fn drift(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.push(self.a * x[0]);
    }
    fn diffusion(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.push(self.b * x[0]);
    }
    fn jump(&self, x: &[f64], mark: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.push(self.c * x[0] * mark[0]);
    }
    fn drift_jacobian(&self, _x: &[f64]) -> Option<Vec<f64>> {
        Some(vec![self.a])
    }
    fn drift_hessian(&self, _x: &[f64]) -> Option<Vec<f64>> {
        Some(vec![0.0])
    }
}

/// `X(t) = X₀ exp((a - c∫z dν - b²/2) t + b W(t)) Π_j (1 + c z_j)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MertonExact {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// `∫_Z z ν(dz)`.
    pub mark_mean_mass: f64,
}

impl ExactSolution for MertonExact {
    fn evaluate(&self, x0: &[f64], t: f64, brownian: &[f64], marks: &mut dyn Iterator<Item = &[f64]>) -> Vec<f64> {
        let exponent = (self.a - self.c * self.mark_mean_mass - 0.5 * self.b * self.b) * t + self.b * brownian[0];
        let jumps: f64 = marks.map(|z| 1.0 + self.c * z[0]).product();
        vec![x0[0] * exponent.exp() * jumps]
    }
}

fn positive(name: &str, value: f64) -> Result<()> {
    ensure!(
        value.is_finite() && value > 0.0,
        Argument,
        "parameter {name} must be positive, got {value}"
    );
    Ok(())
}

pub fn build_three_half_jump(
    mu: f64,
    nu: f64,
    xi: f64,
    eta: f64,
    lambda: f64,
    x0: f64,
    horizon: f64,
) -> Result<JumpDiffusionProblem> {
    for (name, v) in [("mu", mu), ("nu", nu), ("xi", xi), ("eta", eta), ("lambda", lambda)] {
        positive(name, v)?;
    }
    JumpDiffusionProblem::new(
        "three-half-jump",
        Arc::new(ThreeHalfJump { mu, nu, xi, eta }),
        MarkMeasure::poisson(lambda)?,
        InitialState::Fixed(vec![x0]),
        horizon,
    )
}

pub fn build_cubic_additive(x0: f64, horizon: f64) -> Result<JumpDiffusionProblem> {
    JumpDiffusionProblem::new(
        "cubic-additive",
        Arc::new(CubicAdditive),
        MarkMeasure::poisson(1.0)?,
        InitialState::Fixed(vec![x0]),
        horizon,
    )
}

pub fn build_merton_linear(a: f64, b: f64, c: f64, lambda: f64, x0: f64, horizon: f64) -> Result<JumpDiffusionProblem> {
    ensure!(c > -1.0, Argument, "jump size c must exceed -1, got {c}");
    ensure!(
        a.is_finite() && b.is_finite() && c.is_finite(),
        Argument,
        "parameters must be finite"
    );
    let measure = MarkMeasure::poisson(lambda)?;
    let mark_mean_mass = measure.atoms().iter().map(|atom| atom.weight * atom.mark[0]).sum();
    Ok(JumpDiffusionProblem::new(
        "merton-linear",
        Arc::new(MertonLinear { a, b, c }),
        measure,
        InitialState::Fixed(vec![x0]),
        horizon,
    )?
    .with_exact(Arc::new(MertonExact {
        a,
        b,
        c,
        mark_mean_mass,
    })))
}

pub type Params = BTreeMap<String, f64>;

type Builder = fn(&Params) -> Result<JumpDiffusionProblem>;

/// A registered model: id, defaults and constructor.
#[derive(Clone, Serialize)]
pub struct ModelEntry {
    pub id: &'static str,
    pub description: &'static str,
    pub defaults: Vec<(&'static str, f64)>,
    #[serde(skip)]
    builder: Builder,
}

impl ModelEntry {
    /// Defaults overridden by `overrides`; unknown names are rejected.
    pub fn resolve(&self, overrides: &Params) -> Result<Params> {
        let mut params: Params = self.defaults.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        for (k, v) in overrides {
            ensure!(
                params.contains_key(k),
                Argument,
                "model {} has no parameter '{k}' (known: {})",
                self.id,
                self.defaults.iter().map(|(k, _)| *k).collect::<Vec<_>>().join(", ")
            );
            params.insert(k.clone(), *v);
        }
        Ok(params)
    }

    pub fn build(&self, overrides: &Params) -> Result<JumpDiffusionProblem> {
        (self.builder)(&self.resolve(overrides)?)
    }
}

/// Read-only map from model id to constructor.
pub struct ModelRegistry {
    entries: Vec<ModelEntry>,
}

impl Default for ModelRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl ModelRegistry {
    pub fn builtin() -> Self {
        Self {
            entries: vec![
                ModelEntry {
                    id: "three-half-jump",
                    description:
                        "jump-extended 3/2-volatility model: mu x (nu - |x|) dt + xi |x|^1.5 dW + eta x ln(1+x^2) dN",
                    defaults: vec![
                        ("mu", 3.0),
                        ("nu", 1.0),
                        ("xi", 0.5),
                        ("eta", 0.1),
                        ("lambda", 1.0),
                        ("x0", 10.0),
                        ("horizon", 1.0),
                    ],
                    builder: |p| {
                        build_three_half_jump(p["mu"], p["nu"], p["xi"], p["eta"], p["lambda"], p["x0"], p["horizon"])
                    },
                },
                ModelEntry {
                    id: "cubic-additive",
                    description: "additive-noise cubic drift: (x - x^3) dt + dW + dN, intensity 1",
                    defaults: vec![("x0", 5.0), ("horizon", 1.0)],
                    builder: |p| build_cubic_additive(p["x0"], p["horizon"]),
                },
                ModelEntry {
                    id: "merton-linear",
                    description: "linear jump-diffusion x (a dt + b dW + c dN) with closed-form solution",
                    defaults: vec![
                        ("a", 0.05),
                        ("b", 0.2),
                        ("c", 0.5),
                        ("lambda", 1.0),
                        ("x0", 1.0),
                        ("horizon", 1.0),
                    ],
                    builder: |p| build_merton_linear(p["a"], p["b"], p["c"], p["lambda"], p["x0"], p["horizon"]),
                },
            ],
        }
    }

    pub fn entries(&self) -> &[ModelEntry] {
        &self.entries
    }

    pub fn get(&self, id: &str) -> Result<&ModelEntry> {
        self.entries.iter().find(|e| e.id == id).ok_or_else(|| {
            Error::Argument(format!(
                "unknown model '{id}' (available: {})",
                self.entries.iter().map(|e| e.id).collect::<Vec<_>>().join(", ")
            ))
        })
    }

    pub fn build(&self, id: &str, overrides: &Params) -> Result<JumpDiffusionProblem> {
        self.get(id)?.build(overrides)
    }
}
