//! Finite atomic mark measures and exact integration against them.
//!
//! A compensated Poisson random measure `N(dt, dz) - ν(dz) dt` with a finite
//! mark measure `ν` is fully described by its atoms: jumps arrive at rate
//! `λ = ν(Z)` and carry mark `zᵢ` with probability `wᵢ / λ`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};

/// One atom of a mark measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub mark: Vec<f64>,
    pub weight: f64,
}

/// A finite measure on the mark space given by weighted atoms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkMeasure {
    atoms: Vec<Atom>,
    total_mass: f64,
    mark_dim: usize,
}

impl MarkMeasure {
    /// Builds a measure, rejecting zero marks, non-positive weights and
    /// ragged mark dimensions.
    pub fn new(atoms: Vec<Atom>) -> Result<Self> {
        let report = Self::invariant_failures(&atoms);
        if let Some(first) = report.into_iter().next() {
            return Err(Error::Problem(first));
        }
        let total_mass = atoms.iter().map(|a| a.weight).sum();
        let mark_dim = atoms[0].mark.len();
        Ok(Self {
            atoms,
            total_mass,
            mark_dim,
        })
    }

    /// Builds a measure without validation so that malformed inputs can be
    /// handed to [`crate::problem::validate_problem`].
    pub fn new_unchecked(atoms: Vec<Atom>) -> Self {
        let total_mass = atoms.iter().map(|a| a.weight).sum();
        let mark_dim = atoms.first().map_or(0, |a| a.mark.len());
        Self {
            atoms,
            total_mass,
            mark_dim,
        }
    }

    /// The compensated Poisson process of intensity `rate`: one atom at mark 1.
    pub fn poisson(rate: f64) -> Result<Self> {
        ensure!(
            rate.is_finite() && rate > 0.0,
            Argument,
            "jump intensity must be positive and finite, got {rate}"
        );
        Self::new(vec![Atom {
            mark: vec![1.0],
            weight: rate,
        }])
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn atom(&self, index: usize) -> &Atom {
        &self.atoms[index]
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// `λ = ν(Z)`.
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn mark_dim(&self) -> usize {
        self.mark_dim
    }

    /// Atom probabilities `wᵢ / λ` of the jump-mark law.
    pub fn normalized_weights(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.weight / self.total_mass).collect()
    }

    /// Human-readable list of violated invariants; empty when valid.
    pub fn invariant_failures(atoms: &[Atom]) -> Vec<String> {
        let mut failures = Vec::new();
        if atoms.is_empty() {
            failures.push("mark measure has no atoms".to_string());
            return failures;
        }
        let dim = atoms[0].mark.len();
        for (i, atom) in atoms.iter().enumerate() {
            if atom.mark.is_empty() || atom.mark.len() != dim {
                failures.push(format!(
                    "atom {i}: mark dimension {} differs from {dim}",
                    atom.mark.len()
                ));
            }
            if atom.mark.iter().all(|&v| v == 0.0) {
                failures.push(format!("atom {i}: zero mark is not allowed"));
            }
            if atom.mark.iter().any(|v| !v.is_finite()) {
                failures.push(format!("atom {i}: non-finite mark"));
            }
            if !(atom.weight.is_finite() && atom.weight > 0.0) {
                failures.push(format!(
                    "atom {i}: weight must be positive and finite, got {}",
                    atom.weight
                ));
            }
        }
        let total: f64 = atoms.iter().map(|a| a.weight).sum();
        if failures.is_empty() {
            let normalized: f64 = atoms.iter().map(|a| a.weight / total).sum();
            if (normalized - 1.0).abs() > 1e-12 {
                failures.push(format!("normalized weights sum to {normalized}"));
            }
        }
        failures
    }

    /// Union of two measures with disjoint atoms.
    pub fn union(&self, other: &MarkMeasure) -> Result<MarkMeasure> {
        let mut atoms = self.atoms.clone();
        atoms.extend(other.atoms.iter().cloned());
        MarkMeasure::new(atoms)
    }
}

/// `∫_Z φ(z) ν(dz) = Σᵢ wᵢ φ(zᵢ)` for an atomic measure.
///
/// Every evaluation of `phi` must return a vector of length `dim`.
pub fn integrate_against_measure<F>(mut phi: F, measure: &MarkMeasure, dim: usize) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let mut total = vec![0.0; dim];
    for (i, atom) in measure.atoms().iter().enumerate() {
        let value = phi(&atom.mark);
        ensure!(
            value.len() == dim,
            Problem,
            "integrand returned {} components at atom {i}, expected {dim}",
            value.len()
        );
        for (acc, v) in total.iter_mut().zip(&value) {
            *acc += atom.weight * v;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_atoms() -> MarkMeasure {
        MarkMeasure::new(vec![
            Atom {
                mark: vec![1.0],
                weight: 0.4,
            },
            Atom {
                mark: vec![-2.0],
                weight: 0.6,
            },
        ])
        .unwrap()
    }

    #[test]
    fn zero_integrand() {
        let m = two_atoms();
        assert_eq!(
            integrate_against_measure(|_| vec![0.0, 0.0], &m, 2).unwrap(),
            vec![0.0, 0.0]
        );
    }

    #[test]
    fn constant_integrand_gives_total_mass() {
        let m = MarkMeasure::poisson(2.5).unwrap();
        let v = integrate_against_measure(|_| vec![1.0; 3], &m, 3).unwrap();
        assert_eq!(v, vec![2.5; 3]);
    }

    #[test]
    fn squared_mark() {
        let v = integrate_against_measure(|z| vec![z[0] * z[0]], &two_atoms(), 1).unwrap();
        assert!((v[0] - 2.8).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch_is_problem_error() {
        let err = integrate_against_measure(|_| vec![1.0, 2.0], &two_atoms(), 1).unwrap_err();
        assert!(matches!(err, Error::Problem(_)));
    }

    #[test]
    fn rejects_zero_mark_and_bad_weight() {
        assert!(MarkMeasure::new(vec![Atom {
            mark: vec![0.0],
            weight: 1.0
        }])
        .is_err());
        assert!(MarkMeasure::new(vec![Atom {
            mark: vec![1.0],
            weight: 0.0
        }])
        .is_err());
        assert!(MarkMeasure::new(vec![]).is_err());
        assert!(MarkMeasure::poisson(-1.0).is_err());
    }

    #[test]
    fn normalized_weights_sum_to_one() {
        let s: f64 = two_atoms().normalized_weights().iter().sum();
        assert!((s - 1.0).abs() < 1e-12);
    }

    fn atoms_strategy(offset: f64) -> impl Strategy<Value = Vec<Atom>> {
        prop::collection::vec((0.1f64..5.0, 0.01f64..3.0), 1..5).prop_map(move |v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (m, w))| Atom {
                    mark: vec![offset + m + 10.0 * i as f64],
                    weight: w,
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn additive_over_disjoint_unions(a in atoms_strategy(0.0), b in atoms_strategy(100.0)) {
            let ma = MarkMeasure::new(a).unwrap();
            let mb = MarkMeasure::new(b).unwrap();
            let phi = |z: &[f64]| vec![z[0].sin(), z[0] * z[0]];
            let whole = integrate_against_measure(phi, &ma.union(&mb).unwrap(), 2).unwrap();
            let ia = integrate_against_measure(phi, &ma, 2).unwrap();
            let ib = integrate_against_measure(phi, &mb, 2).unwrap();
            for k in 0..2 {
                let sum = ia[k] + ib[k];
                prop_assert!((whole[k] - sum).abs() <= 1e-12 * (1.0 + sum.abs()));
            }
        }

        #[test]
        fn linear_in_integrand(a in atoms_strategy(0.0), alpha in -5.0f64..5.0, beta in -5.0f64..5.0) {
            let m = MarkMeasure::new(a).unwrap();
            let phi1 = |z: &[f64]| vec![z[0].cos()];
            let phi2 = |z: &[f64]| vec![z[0].powi(3)];
            let combo = integrate_against_measure(|z| vec![alpha * phi1(z)[0] + beta * phi2(z)[0]], &m, 1).unwrap()[0];
            let a1 = alpha * integrate_against_measure(phi1, &m, 1).unwrap()[0];
            let b2 = beta * integrate_against_measure(phi2, &m, 1).unwrap()[0];
            let scale = 1.0 + a1.abs() + b2.abs();
            prop_assert!((combo - (a1 + b2)).abs() <= 1e-12 * scale);
        }
    }
}
