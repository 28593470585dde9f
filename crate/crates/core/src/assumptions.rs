//! Sampling-based estimates of the structural constants of a problem.
//!
//! Each check evaluates one inequality of the form `LHS ≤ K · RHS` on a
//! finite sample of points (or pairs of points) and reports the smallest
//! constant `K̂` consistent with the sample. A finite sample can falsify an
//! inequality but never certify it, so a report only says that no violation
//! was found for constants at least `K̂`.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::noise::derive_path_rng;
use crate::problem::{dot, norm, JumpDiffusionProblem};

/// Growth exponent `log₂(K̂(box) / K̂(box/2))` above which a polynomial
/// growth rate is reported as unstable.
pub const GROWTH_EXPONENT_LIMIT: f64 = 0.5;

/// Finite-difference step used when analytic derivatives are missing.
pub const FINITE_DIFFERENCE_STEP: f64 = 1e-5;

const POINT_STREAM: u64 = 0x5eed_0001;
const PAIR_STREAM: u64 = 0x5eed_0002;

/// Sampling grid over a box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Lattice points per dimension.
    pub points_per_dim: usize,
    /// Uniform random points added to the lattice.
    pub random_points: usize,
    /// Random pairs for two-point conditions, half of them near-diagonal.
    pub pairs: usize,
    pub seed: u64,
}

impl GridSpec {
    /// The cube `[lo, hi]^dim` with default sampling densities.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Self {
        Self {
            lower: vec![lo; dim],
            upper: vec![hi; dim],
            points_per_dim: if dim == 1 { 2001 } else { 41 },
            random_points: 2_000,
            pairs: 10_000,
            seed: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.lower.is_empty(), Config, "grid has no dimensions");
        ensure!(self.lower.len() == self.upper.len(), Config, "bound dimensions differ");
        for (lo, hi) in self.lower.iter().zip(&self.upper) {
            ensure!(
                lo.is_finite() && hi.is_finite() && lo < hi,
                Config,
                "invalid bounds [{lo}, {hi}]"
            );
        }
        ensure!(
            self.points_per_dim >= 2,
            Config,
            "need at least 2 lattice points per dimension"
        );
        ensure!(self.pairs >= 2, Config, "need at least 2 pairs");
        Ok(())
    }

    /// The box scaled about its centre.
    pub fn scaled(&self, factor: f64) -> GridSpec {
        let mut g = self.clone();
        for (lo, hi) in g.lower.iter_mut().zip(g.upper.iter_mut()) {
            let c = 0.5 * (*lo + *hi);
            let r = 0.5 * (*hi - *lo) * factor;
            *lo = c - r;
            *hi = c + r;
        }
        g
    }

    fn random_point<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
            .collect()
    }

    /// Lattice points followed by seeded random points. Raising
    /// `random_points` only appends.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let d = self.dim();
        let n = self.points_per_dim;
        let total = n.pow(d as u32);
        let mut pts = Vec::with_capacity(total + self.random_points);
        for idx in 0..total {
            let mut rest = idx;
            let p = (0..d)
                .map(|k| {
                    let i = rest % n;
                    rest /= n;
                    self.lower[k] + (self.upper[k] - self.lower[k]) * i as f64 / (n - 1) as f64
                })
                .collect();
            pts.push(p);
        }
        for i in 0..self.random_points {
            let mut rng = derive_path_rng(self.seed, i as u64, POINT_STREAM);
            pts.push(self.random_point(&mut rng));
        }
        pts
    }

    /// Adjacent lattice pairs along each axis, then seeded random pairs
    /// alternating between uniform and near-diagonal (`|x - y|` down to
    /// `1e-6` of the box width). Raising `pairs` only appends.
    pub fn pairs(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        let d = self.dim();
        let n = self.points_per_dim;
        let lattice = self.points();
        let mut out = Vec::new();
        for idx in 0..n.pow(d as u32) {
            let mut stride = 1;
            for _ in 0..d {
                if (idx / stride) % n + 1 < n {
                    out.push((lattice[idx].clone(), lattice[idx + stride].clone()));
                }
                stride *= n;
            }
        }
        for i in 0..self.pairs {
            let mut rng = derive_path_rng(self.seed, i as u64, PAIR_STREAM);
            let x = self.random_point(&mut rng);
            let y = if i % 2 == 0 {
                self.random_point(&mut rng)
            } else {
                let scale = 10f64.powf(-6.0 + 5.0 * rng.random::<f64>());
                x.iter()
                    .enumerate()
                    .map(|(k, &v)| {
                        let width = self.upper[k] - self.lower[k];
                        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                        let step = width * scale * sign;
                        let y = v + step;
                        if y < self.lower[k] || y > self.upper[k] {
                            v - step
                        } else {
                            y
                        }
                    })
                    .collect()
            };
            out.push((x, y));
        }
        out
    }
}

/// Which inequality a report concerns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    Monotone,
    Coercivity,
    MomentBound,
    PolynomialGrowth,
    DerivativeGrowth,
}

impl Condition {
    pub fn id(self) -> &'static str {
        match self {
            Condition::Monotone => "monotone",
            Condition::Coercivity => "coercivity",
            Condition::MomentBound => "moment-bound",
            Condition::PolynomialGrowth => "polynomial-growth",
            Condition::DerivativeGrowth => "derivative-growth",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub condition: Condition,
    /// Smallest constant consistent with every sampled point, floored at 0.
    pub k_hat: f64,
    /// Point or pair attaining `k_hat`.
    pub worst: Vec<Vec<f64>>,
    pub samples: usize,
    /// Points skipped because the functional was not finite.
    pub flagged_points: usize,
    pub parameters: BTreeMap<String, f64>,
    /// User constant, if supplied.
    pub constant: Option<f64>,
    /// `k_hat ≤ constant` when a constant was supplied.
    pub satisfied: Option<bool>,
    /// Growth conditions: `K̂` stays bounded as the box doubles.
    pub growth_stable: Option<bool>,
    /// Growth conditions: smallest stable rate on the ladder `0, 1, …, 8`.
    pub fitted_q: Option<u32>,
    pub notes: Vec<String>,
}

impl AssumptionReport {
    fn new(condition: Condition, best: Best, samples: usize) -> Self {
        Self {
            condition,
            k_hat: best.value.max(0.0),
            worst: best.at,
            samples,
            flagged_points: best.flagged,
            parameters: BTreeMap::new(),
            constant: None,
            satisfied: None,
            growth_stable: None,
            fitted_q: None,
            notes: Vec::new(),
        }
    }

    /// Compares `k_hat` against a user-supplied constant.
    pub fn with_constant(mut self, constant: Option<f64>) -> Self {
        self.constant = constant;
        self.satisfied = constant.map(|k| self.k_hat <= k);
        self
    }

    /// A supplied constant is exceeded or a growth rate is unstable.
    pub fn violated(&self) -> bool {
        self.satisfied == Some(false) || self.growth_stable == Some(false)
    }

    pub fn summary(&self) -> String {
        let verdict = if self.violated() {
            "VIOLATION"
        } else {
            "no violation found"
        };
        format!("{}: {verdict}, K̂ = {}", self.condition.id(), self.k_hat)
    }
}

#[derive(Debug, Clone)]
struct Best {
    value: f64,
    index: usize,
    at: Vec<Vec<f64>>,
    flagged: usize,
}

impl Best {
    fn empty() -> Self {
        Best {
            value: f64::NEG_INFINITY,
            index: usize::MAX,
            at: Vec::new(),
            flagged: 0,
        }
    }

    /// Deterministic max: ties go to the lowest index.
    fn merge(a: Best, b: Best) -> Best {
        let flagged = a.flagged + b.flagged;
        let mut win = if b.value > a.value || (b.value == a.value && b.index < a.index) {
            b
        } else {
            a
        };
        win.flagged = flagged;
        win
    }
}

fn max_over<T, F>(items: &[T], at: impl Fn(&T) -> Vec<Vec<f64>> + Sync, f: F) -> Best
where
    T: Sync,
    F: Fn(&T) -> Option<f64> + Sync,
{
    items
        .par_iter()
        .enumerate()
        .map(|(index, item)| match f(item) {
            Some(v) if v.is_finite() => Best {
                value: v,
                index,
                at: at(item),
                flagged: 0,
            },
            _ => Best {
                flagged: 1,
                ..Best::empty()
            },
        })
        .reduce(Best::empty, Best::merge)
}

struct Eval<'a> {
    problem: &'a JumpDiffusionProblem,
}

impl Eval<'_> {
    fn drift(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        self.problem.coefficients.drift(x, &mut out);
        out
    }

    fn diffusion(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::new();
        self.problem.coefficients.diffusion(x, &mut out);
        out
    }

    /// `(weight, σ(x, z))` per atom.
    fn jumps(&self, x: &[f64]) -> Vec<(f64, Vec<f64>)> {
        self.problem
            .measure
            .atoms()
            .iter()
            .map(|a| {
                let mut out = Vec::new();
                self.problem.coefficients.jump(x, &a.mark, &mut out);
                (a.weight, out)
            })
            .collect()
    }
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// `2⟨x-y, f(x)-f(y)⟩ + |g(x)-g(y)|² + ∫|σ(x,z)-σ(y,z)|² ν(dz)` over `|x-y|²`.
pub fn monotone_functional(problem: &JumpDiffusionProblem, x: &[f64], y: &[f64]) -> Option<f64> {
    let e = Eval { problem };
    let dx = diff(x, y);
    let dist2 = dot(&dx, &dx);
    if dist2 == 0.0 {
        return None;
    }
    let df = diff(&e.drift(x), &e.drift(y));
    let dg = diff(&e.diffusion(x), &e.diffusion(y));
    let jx = e.jumps(x);
    let jy = e.jumps(y);
    let jump: f64 = jx
        .iter()
        .zip(&jy)
        .map(|((w, sx), (_, sy))| w * norm(&diff(sx, sy)).powi(2))
        .sum();
    Some((2.0 * dot(&dx, &df) + dot(&dg, &dg) + jump) / dist2)
}

pub fn check_monotone(problem: &JumpDiffusionProblem, grid: &GridSpec) -> Result<AssumptionReport> {
    check_dims(problem, grid)?;
    let pairs = grid.pairs();
    let best = max_over(
        &pairs,
        |(x, y)| vec![x.clone(), y.clone()],
        |(x, y)| monotone_functional(problem, x, y),
    );
    Ok(AssumptionReport::new(Condition::Monotone, best, pairs.len()))
}

fn coercivity_functional(problem: &JumpDiffusionProblem, x: &[f64]) -> f64 {
    let e = Eval { problem };
    let f = e.drift(x);
    let g = e.diffusion(x);
    let jump: f64 = e.jumps(x).iter().map(|(w, s)| w * dot(s, s)).sum();
    (2.0 * dot(x, &f) + dot(&g, &g) + jump) / (1.0 + dot(x, x))
}

pub fn check_coercivity(problem: &JumpDiffusionProblem, grid: &GridSpec) -> Result<AssumptionReport> {
    check_dims(problem, grid)?;
    let points = grid.points();
    let best = max_over(
        &points,
        |x| vec![x.clone()],
        |x| Some(coercivity_functional(problem, x)),
    );
    Ok(AssumptionReport::new(Condition::Coercivity, best, points.len()))
}

/// `p̄|x|^{p̄-2}⟨x,f⟩ + p̄(p̄-1)/2 |x|^{p̄-2}|g|² + (1+(p̄-2)ε)∫|σ|^{p̄} dν` over
/// `1 + |x|^{p̄}`; for `|x| > 1` numerator and denominator are divided by
/// `|x|^{p̄}` first so that large boxes do not overflow.
pub fn moment_functional(problem: &JumpDiffusionProblem, x: &[f64], p_bar: u32, epsilon: f64) -> f64 {
    let e = Eval { problem };
    let p = p_bar as f64;
    let f = e.drift(x);
    let g = e.diffusion(x);
    let r = norm(x);
    let jump_factor = 1.0 + (p - 2.0) * epsilon;
    let jumps = e.jumps(x);
    if r <= 1.0 {
        let rp2 = r.powi(p_bar as i32 - 2);
        let jump: f64 = jumps.iter().map(|(w, s)| w * norm(s).powi(p_bar as i32)).sum();
        (p * rp2 * dot(x, &f) + 0.5 * p * (p - 1.0) * rp2 * dot(&g, &g) + jump_factor * jump)
            / (1.0 + r.powi(p_bar as i32))
    } else {
        let r2 = r * r;
        let jump: f64 = jumps.iter().map(|(w, s)| w * (p * (norm(s).ln() - r.ln())).exp()).sum();
        (p * dot(x, &f) / r2 + 0.5 * p * (p - 1.0) * dot(&g, &g) / r2 + jump_factor * jump)
            / ((-p * r.ln()).exp() + 1.0)
    }
}

pub fn check_pbar_moment_condition(
    problem: &JumpDiffusionProblem,
    grid: &GridSpec,
    p_bar: u32,
    epsilon: f64,
) -> Result<AssumptionReport> {
    check_dims(problem, grid)?;
    ensure!(
        p_bar >= 2 && p_bar.is_multiple_of(2),
        Argument,
        "p̄ must be an even integer ≥ 2, got {p_bar}"
    );
    ensure!(epsilon > 0.0, Argument, "ε must be positive, got {epsilon}");
    let points = grid.points();
    let best = max_over(
        &points,
        |x| vec![x.clone()],
        |x| Some(moment_functional(problem, x, p_bar, epsilon)),
    );
    let mut report = AssumptionReport::new(Condition::MomentBound, best, points.len());
    report.parameters.insert("p_bar".into(), p_bar as f64);
    report.parameters.insert("epsilon".into(), epsilon);
    if report.flagged_points > 0 {
        report
            .notes
            .push(format!("{} points overflowed and were skipped", report.flagged_points));
    }
    Ok(report)
}

fn growth_ratio(a: &[f64], b: &[f64], x: &[f64], y: &[f64], q: f64) -> Option<f64> {
    let dx = diff(x, y);
    let dist2 = dot(&dx, &dx);
    if dist2 == 0.0 {
        return None;
    }
    let da = diff(a, b);
    Some(dot(&da, &da) / ((1.0 + norm(x).powf(q) + norm(y).powf(q)) * dist2))
}

/// Max of the growth functional for one scalar/vector field `a` over pairs.
fn growth_k_hat<A>(pairs: &[(Vec<f64>, Vec<f64>)], q: f64, field: &A) -> Best
where
    A: Fn(&[f64]) -> Vec<Vec<f64>> + Sync,
{
    max_over(
        pairs,
        |(x, y)| vec![x.clone(), y.clone()],
        |(x, y)| {
            let fx = field(x);
            let fy = field(y);
            fx.iter()
                .zip(&fy)
                .map(|(a, b)| growth_ratio(a, b, x, y, q))
                .try_fold(0.0f64, |m, v| v.map(|v| m.max(v)))
        },
    )
}

fn growth_stable<A>(grid: &GridSpec, q: f64, field: &A) -> bool
where
    A: Fn(&[f64]) -> Vec<Vec<f64>> + Sync,
{
    let full = growth_k_hat(&grid.pairs(), q, field).value.max(0.0);
    let half = growth_k_hat(&grid.scaled(0.5).pairs(), q, field).value.max(0.0);
    if full <= 1e-12 {
        return true;
    }
    if half <= 1e-12 {
        return false;
    }
    (full / half).log2() <= GROWTH_EXPONENT_LIMIT
}

fn growth_report<A>(condition: Condition, grid: &GridSpec, q: f64, field: A) -> AssumptionReport
where
    A: Fn(&[f64]) -> Vec<Vec<f64>> + Sync,
{
    let pairs = grid.pairs();
    let best = growth_k_hat(&pairs, q, &field);
    let mut report = AssumptionReport::new(condition, best, pairs.len());
    report.parameters.insert("q".into(), q);
    let stable = growth_stable(grid, q, &field);
    report.growth_stable = Some(stable);
    report.fitted_q = (0..=8u32).find(|&c| growth_stable(grid, c as f64, &field));
    if !stable {
        report.notes.push(format!(
            "K̂ grows faster than 2^{GROWTH_EXPONENT_LIMIT} when the box doubles; q = {q} looks insufficient"
        ));
    }
    report
}

/// `|f(x)-f(y)|² ≤ K (1 + |x|^q + |y|^q) |x-y|²`.
pub fn check_polynomial_growth(problem: &JumpDiffusionProblem, grid: &GridSpec, q: f64) -> Result<AssumptionReport> {
    check_dims(problem, grid)?;
    ensure!(q >= 0.0, Argument, "q must be non-negative, got {q}");
    let e = Eval { problem };
    Ok(growth_report(
        Condition::PolynomialGrowth,
        grid,
        q,
        |x| vec![e.drift(x)],
    ))
}

/// Source of drift derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DerivativeSource {
    /// Registered derivatives, finite differences where missing.
    #[default]
    Auto,
    /// Registered derivatives only.
    Analytic,
    /// Always finite differences.
    FiniteDifference,
}

/// Central-difference drift Jacobian, row-major `d × d`.
pub fn finite_difference_jacobian(problem: &JumpDiffusionProblem, x: &[f64], step: f64) -> Vec<f64> {
    let e = Eval { problem };
    let d = x.len();
    let mut jac = vec![0.0; d * d];
    for j in 0..d {
        let mut up = x.to_vec();
        let mut down = x.to_vec();
        up[j] += step;
        down[j] -= step;
        let (fu, fd) = (e.drift(&up), e.drift(&down));
        for i in 0..d {
            jac[i * d + j] = (fu[i] - fd[i]) / (2.0 * step);
        }
    }
    jac
}

fn jacobian(problem: &JumpDiffusionProblem, x: &[f64], source: DerivativeSource) -> Vec<f64> {
    match source {
        DerivativeSource::FiniteDifference => finite_difference_jacobian(problem, x, FINITE_DIFFERENCE_STEP),
        _ => problem
            .coefficients
            .drift_jacobian(x)
            .unwrap_or_else(|| finite_difference_jacobian(problem, x, FINITE_DIFFERENCE_STEP)),
    }
}

/// Central differences of the Jacobian, laid out `[i][j][k]`.
pub fn finite_difference_hessian(
    problem: &JumpDiffusionProblem,
    x: &[f64],
    step: f64,
    source: DerivativeSource,
) -> Vec<f64> {
    let d = x.len();
    let mut hess = vec![0.0; d * d * d];
    for k in 0..d {
        let mut up = x.to_vec();
        let mut down = x.to_vec();
        up[k] += step;
        down[k] -= step;
        let (ju, jd) = (jacobian(problem, &up, source), jacobian(problem, &down, source));
        for ij in 0..d * d {
            hess[ij * d + k] = (ju[ij] - jd[ij]) / (2.0 * step);
        }
    }
    hess
}

/// Applies the polynomial growth functional to every first and second drift
/// derivative and reports the worst entry.
pub fn check_derivative_growth(
    problem: &JumpDiffusionProblem,
    grid: &GridSpec,
    q: f64,
    source: DerivativeSource,
) -> Result<AssumptionReport> {
    check_dims(problem, grid)?;
    ensure!(q >= 0.0, Argument, "q must be non-negative, got {q}");
    let probe = grid.points()[0].clone();
    let coeffs = &problem.coefficients;
    let has_jac = coeffs.drift_jacobian(&probe).is_some();
    let has_hess = coeffs.drift_hessian(&probe).is_some();
    let mut notes = Vec::new();
    match source {
        DerivativeSource::Analytic => ensure!(
            has_jac && has_hess,
            Config,
            "model {} does not register analytic drift derivatives and finite differences are disabled",
            problem.name
        ),
        DerivativeSource::Auto if !(has_jac && has_hess) => notes.push(format!(
            "warning: drift derivatives not registered, using central finite differences with step {FINITE_DIFFERENCE_STEP}"
        )),
        DerivativeSource::FiniteDifference => notes.push(format!(
            "central finite differences with step {FINITE_DIFFERENCE_STEP}"
        )),
        _ => {}
    }
    let field = |x: &[f64]| -> Vec<Vec<f64>> {
        let jac = jacobian(problem, x, source);
        let hess = match source {
            DerivativeSource::FiniteDifference => None,
            _ => coeffs.drift_hessian(x),
        }
        .unwrap_or_else(|| finite_difference_hessian(problem, x, FINITE_DIFFERENCE_STEP, source));
        jac.into_iter().chain(hess).map(|v| vec![v]).collect()
    };
    let mut report = growth_report(Condition::DerivativeGrowth, grid, q, field);
    report.notes.extend(notes);
    Ok(report)
}

fn check_dims(problem: &JumpDiffusionProblem, grid: &GridSpec) -> Result<()> {
    grid.validate()?;
    ensure!(
        grid.dim() == problem.state_dim(),
        Config,
        "grid has dimension {}, problem has {}",
        grid.dim(),
        problem.state_dim()
    );
    Ok(())
}
