use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use jsde_core::{ErrorMode, OverflowPolicy, Reference, Scheme};
use serde::{Deserialize, Serialize};

pub const SEED_ENV: &str = "JSDE_SEED";
pub const DEFAULT_SEED: u64 = 20240917;

/// Everything a run depends on. Written next to every output so that
/// `--config run_config.toml` repeats the run exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    pub model: String,
    pub params: BTreeMap<String, f64>,
    pub schemes: Vec<Scheme>,
    pub coarse_exponents: Vec<u32>,
    pub reference_exponent: u32,
    pub paths: usize,
    pub seed: u64,
    pub error_mode: ErrorMode,
    /// `same-scheme`, `exact` or a scheme id.
    pub reference: String,
    pub overflow_policy: OverflowPolicy,
    /// Worker threads; 0 means available parallelism.
    pub threads: usize,
    pub out: PathBuf,
    pub moments: MomentsSection,
    pub local_order: LocalOrderSection,
    pub assumptions: AssumptionsSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MomentsSection {
    pub exponent: u32,
    pub p: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalOrderSection {
    /// Starting state; empty means the model's initial value.
    pub x: Vec<f64>,
    pub t: f64,
    pub step_exponents: Vec<u32>,
    pub substeps_log2: u32,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssumptionsSection {
    pub lower: f64,
    pub upper: f64,
    pub points_per_dim: usize,
    pub random_points: usize,
    pub pairs: usize,
    pub q: f64,
    pub p_bar: u32,
    pub epsilon: f64,
    pub derivatives: bool,
    pub finite_differences: bool,
    /// User constants keyed by condition id.
    pub constants: BTreeMap<String, f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: String::new(),
            model: "three-half-jump".into(),
            params: BTreeMap::new(),
            schemes: vec![Scheme::Tamed, Scheme::Sine],
            coarse_exponents: (8..=12).collect(),
            reference_exponent: 13,
            paths: 5000,
            seed: DEFAULT_SEED,
            error_mode: ErrorMode::Terminal,
            reference: "same-scheme".into(),
            overflow_policy: OverflowPolicy::Infinite,
            threads: 0,
            out: PathBuf::from("out"),
            moments: MomentsSection::default(),
            local_order: LocalOrderSection::default(),
            assumptions: AssumptionsSection::default(),
        }
    }
}

impl Default for MomentsSection {
    fn default() -> Self {
        Self { exponent: 8, p: 2 }
    }
}

impl Default for LocalOrderSection {
    fn default() -> Self {
        Self {
            x: Vec::new(),
            t: 0.0,
            step_exponents: (4..=8).collect(),
            substeps_log2: 6,
            tolerance: 0.15,
        }
    }
}

impl Default for AssumptionsSection {
    fn default() -> Self {
        Self {
            lower: -5.0,
            upper: 5.0,
            points_per_dim: 2001,
            random_points: 2000,
            pairs: 10_000,
            q: 2.0,
            p_bar: 20,
            epsilon: 1.0,
            derivatives: false,
            finite_differences: true,
            constants: BTreeMap::new(),
        }
    }
}

impl RunConfig {
    /// Reads a TOML config file. Keys left out keep their defaults.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is plain data")
    }

    pub fn reference(&self) -> Result<Reference> {
        Ok(match self.reference.as_str() {
            "same-scheme" | "same" => Reference::SameScheme,
            "exact" => Reference::Exact,
            other => Reference::Scheme(
                other
                    .parse()
                    .map_err(|_| anyhow::anyhow!("unknown reference '{other}' (same-scheme, exact or a scheme id)"))?,
            ),
        })
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.schemes.is_empty(), "no scheme selected");
        ensure!(self.paths >= 1, "paths must be positive");
        self.reference()?;
        let a = &self.assumptions;
        ensure!(
            a.lower < a.upper,
            "assumption box lower bound {} must be below upper bound {}",
            a.lower,
            a.upper
        );
        for key in a.constants.keys() {
            if !CONDITION_IDS.contains(&key.as_str()) {
                bail!(
                    "unknown condition '{key}' in constants (known: {})",
                    CONDITION_IDS.join(", ")
                );
            }
        }
        Ok(())
    }
}

pub const CONDITION_IDS: [&str; 5] = [
    "monotone",
    "coercivity",
    "moment-bound",
    "polynomial-growth",
    "derivative-growth",
];

/// Parses `name=value`.
pub fn parse_key_value(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected name=value, got '{s}'"))?;
    let v: f64 = v.trim().parse().map_err(|e| format!("bad value in '{s}': {e}"))?;
    Ok((k.trim().to_string(), v))
}

/// Seed precedence: flag, config file, environment, built-in default.
pub fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => Ok(Some(
            v.trim()
                .parse()
                .with_context(|| format!("{SEED_ENV}='{v}' is not an integer"))?,
        )),
        Err(_) => Ok(None),
    }
}
