use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use jsde_core::assumptions::{
    check_coercivity, check_derivative_growth, check_monotone, check_pbar_moment_condition, check_polynomial_growth,
};
use jsde_core::noise::NOISE_ALGORITHM_VERSION;
use jsde_core::schemes::simulate_path;
use jsde_core::{
    estimate_local_orders, estimate_moments, estimate_strong_error, fit_order, AssumptionReport, DerivativeSource,
    GridSpec, JumpDiffusionProblem, LocalOrderConfig, LocalReference, ModelRegistry, MomentConfig, NoiseRealization,
    Reference, Scheme, StudyConfig,
};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::RunConfig;

const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const EXIT_VIOLATION: u8 = 2;

fn problem(config: &RunConfig) -> Result<JumpDiffusionProblem> {
    Ok(ModelRegistry::builtin().build(&config.model, &config.params)?)
}

fn provenance(config: &RunConfig) -> Value {
    json!({
        "version": VERSION,
        "noise_algorithm_version": NOISE_ALGORITHM_VERSION,
        "config": config,
    })
}

fn prepare_out(config: &RunConfig) -> Result<&Path> {
    let out = config.out.as_path();
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write(out, "run_config.toml", &config.to_toml())?;
    Ok(out)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json(dir: &Path, name: &str, value: &Value) -> Result<()> {
    write(dir, name, &(serde_json::to_string_pretty(value)? + "\n"))
}

pub fn list_models() -> String {
    let mut s = String::new();
    for e in ModelRegistry::builtin().entries() {
        let params: Vec<String> = e.defaults.iter().map(|(k, v)| format!("{k}={v}")).collect();
        let _ = writeln!(s, "{}\n    {}\n    defaults: {}", e.id, e.description, params.join(" "));
    }
    s
}

pub fn convergence(config: &RunConfig) -> Result<u8> {
    let p = problem(config)?;
    let out = prepare_out(config)?;
    let study = StudyConfig {
        coarse_exponents: config.coarse_exponents.clone(),
        reference_exponent: config.reference_exponent,
        paths: config.paths,
        seed: config.seed,
        error_mode: config.error_mode,
        reference: config.reference()?,
        overflow_policy: config.overflow_policy,
    };
    let mut results = Vec::new();
    let mut csvs = Vec::new();
    for &scheme in &config.schemes {
        let table = estimate_strong_error(&p, scheme, &study)?;
        let name = format!("errors_{}_{}.csv", scheme.id(), config.model);
        write(out, &name, &table.to_csv())?;
        let fit = match fit_order(&table) {
            Ok(f) => {
                println!(
                    "{scheme}: slope {:.4}, intercept {:.4}, r² {:.4}",
                    f.slope, f.intercept, f.r_squared
                );
                json!(f)
            }
            Err(e) => {
                eprintln!("warning: {scheme}: no order fit: {e}");
                Value::Null
            }
        };
        results.push(json!({ "scheme": scheme, "csv": name, "fit": fit, "rows": table.rows }));
        csvs.push(name);
    }
    let mut summary = provenance(config);
    summary["results"] = Value::Array(results);
    write_json(out, "summary.json", &summary)?;
    write(out, "plot_convergence.py", &plot_script(config, &csvs))?;
    Ok(0)
}

fn plot_script(config: &RunConfig, csvs: &[String]) -> String {
    let mut s = String::from("#!/usr/bin/env python3\n# Log-log strong error plot with reference slopes 1/2 and 1.\n# Resolved run configuration:\n");
    for line in config.to_toml().lines() {
        let _ = writeln!(s, "#   {line}");
    }
    let files: Vec<String> = csvs.iter().map(|c| format!("{c:?}")).collect();
    let _ = write!(
        s,
        r#"
import csv
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))
FILES = [{}]

fig, ax = plt.subplots(figsize=(5, 4))
anchor = None
for name in FILES:
    with open(os.path.join(HERE, name)) as fh:
        rows = [r for r in csv.DictReader(fh) if float(r["rms_error"]) < float("inf")]
    h = [float(r["h"]) for r in rows]
    e = [float(r["rms_error"]) for r in rows]
    ax.loglog(h, e, "o-", label=name[len("errors_"):-len(".csv")])
    if anchor is None and h:
        anchor = (h[0], e[0], h)
if anchor is not None:
    h0, e0, hs = anchor
    for order, style in ((0.5, "--"), (1.0, ":")):
        ax.loglog(hs, [e0 * (x / h0) ** order for x in hs], "k" + style, label=f"slope {{order:g}}")
ax.set_xlabel("h")
ax.set_ylabel("rms error")
ax.legend()
fig.tight_layout()
fig.savefig(os.path.join(HERE, "convergence.png"), dpi=150)
"#,
        files.join(", ")
    );
    s
}

pub fn moments(config: &RunConfig) -> Result<u8> {
    let p = problem(config)?;
    let out = prepare_out(config)?;
    let cfg = MomentConfig {
        exponent: config.moments.exponent,
        paths: config.paths,
        seed: config.seed,
        overflow_policy: config.overflow_policy,
    };
    let mut results = Vec::new();
    for &scheme in &config.schemes {
        let m = estimate_moments(&p, scheme, config.moments.p, &cfg)?;
        let name = format!("moments_{}_{}.csv", scheme.id(), config.model);
        write(out, &name, &m.to_csv())?;
        println!(
            "{scheme}: max E|Y|^{} = {}, {} paths overflowed",
            m.p, m.max, m.overflowed_paths
        );
        results.push(json!({
            "scheme": scheme,
            "csv": name,
            "max": m.max,
            "overflowed_paths": m.overflowed_paths,
        }));
    }
    let mut summary = provenance(config);
    summary["results"] = Value::Array(results);
    write_json(out, "summary.json", &summary)?;
    Ok(0)
}

pub fn local_order(config: &RunConfig) -> Result<u8> {
    let p = problem(config)?;
    let out = prepare_out(config)?;
    let lo = &config.local_order;
    let x = if lo.x.is_empty() {
        p.initial_state(config.seed, 0)
    } else {
        lo.x.clone()
    };
    let step_sizes: Vec<f64> = lo
        .step_exponents
        .iter()
        .map(|&e| p.horizon * 2f64.powi(-(e as i32)))
        .collect();
    for &scheme in &config.schemes {
        let reference = match config.reference()? {
            Reference::Exact => LocalReference::Exact,
            Reference::SameScheme => LocalReference::Scheme {
                scheme,
                substeps_log2: lo.substeps_log2,
            },
            Reference::Scheme(s) => LocalReference::Scheme {
                scheme: s,
                substeps_log2: lo.substeps_log2,
            },
        };
        let cfg = LocalOrderConfig {
            x: x.clone(),
            t: lo.t,
            step_sizes: step_sizes.clone(),
            paths: config.paths,
            seed: config.seed,
            reference,
            tolerance: lo.tolerance,
        };
        let report = estimate_local_orders(&p, scheme, &cfg)?;
        let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
        println!(
            "{scheme}: p1_hat {}, p2_hat {}, p2 ≥ 1/2: {:?}, p1 ≥ p2 + 1/2: {:?}{}",
            fmt(report.p1_hat),
            fmt(report.p2_hat),
            report.p2_condition,
            report.p1_condition,
            if report.exact {
                " (scheme reproduces the reference)"
            } else {
                ""
            }
        );
        if report.flagged_rows() > 0 && !report.exact {
            eprintln!(
                "warning: {scheme}: {} of {} weak errors are below 3 standard errors and were left out of the p1 fit",
                report.flagged_rows(),
                report.rows.len()
            );
        }
        let mut doc = provenance(config);
        doc["scheme"] = json!(scheme);
        doc["x"] = json!(x);
        doc["report"] = json!(report);
        write_json(out, &format!("local_order_{}_{}.json", scheme.id(), config.model), &doc)?;
    }
    Ok(0)
}

pub fn check_assumptions(config: &RunConfig) -> Result<u8> {
    let p = problem(config)?;
    let out = prepare_out(config)?;
    let a = &config.assumptions;
    let d = p.state_dim();
    let grid = GridSpec {
        lower: vec![a.lower; d],
        upper: vec![a.upper; d],
        points_per_dim: if d == 1 {
            a.points_per_dim
        } else {
            a.points_per_dim.min(41)
        },
        random_points: a.random_points,
        pairs: a.pairs,
        seed: config.seed,
    };
    let mut checks: Vec<AssumptionReport> = vec![
        check_monotone(&p, &grid)?,
        check_coercivity(&p, &grid)?,
        check_pbar_moment_condition(&p, &grid, a.p_bar, a.epsilon)?,
        check_polynomial_growth(&p, &grid, a.q)?,
    ];
    if a.derivatives {
        let source = if a.finite_differences {
            DerivativeSource::Auto
        } else {
            DerivativeSource::Analytic
        };
        checks.push(check_derivative_growth(&p, &grid, a.q, source)?);
    }
    let checks: Vec<AssumptionReport> = checks
        .into_iter()
        .map(|r| {
            let k = a.constants.get(r.condition.id()).copied();
            r.with_constant(k)
        })
        .collect();
    let violations = checks.iter().filter(|r| r.violated()).count();
    for r in &checks {
        println!("{}", r.summary());
        for note in &r.notes {
            println!("    {note}");
        }
    }
    let mut doc = provenance(config);
    doc["box"] = json!([a.lower, a.upper]);
    doc["checks"] = json!(checks);
    doc["violations"] = json!(violations);
    write_json(out, "assumptions.json", &doc)?;
    Ok(if violations > 0 { EXIT_VIOLATION } else { 0 })
}

pub fn bench(config: &RunConfig) -> Result<u8> {
    let p = problem(config)?;
    let out = prepare_out(config)?;
    let mut csv = String::from("h,scheme,wall_seconds\n");
    let mut times: Vec<(u32, Scheme, f64)> = Vec::new();
    for &e in &config.coarse_exponents {
        for &scheme in &config.schemes {
            let steps = 1usize << e;
            let start = Instant::now();
            let checksum: f64 = (0..config.paths)
                .into_par_iter()
                .map(|i| {
                    let noise =
                        NoiseRealization::generate(config.seed, i as u64, e, p.horizon, p.noise_dim(), &p.measure);
                    simulate_path(&p, &scheme, &noise, steps)
                        .map(|path| path.terminal()[0])
                        .unwrap_or(f64::NAN)
                })
                .sum();
            let wall = start.elapsed().as_secs_f64();
            std::hint::black_box(checksum);
            let h = p.horizon / steps as f64;
            let _ = writeln!(csv, "{h},{},{wall}", scheme.id());
            times.push((e, scheme, wall));
        }
    }
    write(out, "bench.csv", &csv)?;
    let lookup = |e: u32, s: Scheme| times.iter().find(|t| t.0 == e && t.1 == s).map(|t| t.2);
    let mut compared = 0;
    let mut sine_faster = 0;
    for &e in &config.coarse_exponents {
        if let (Some(t), Some(s)) = (lookup(e, Scheme::Tamed), lookup(e, Scheme::Sine)) {
            compared += 1;
            sine_faster += (s <= t) as usize;
            println!("h = 2^-{e}: tamed {t:.4}s, sine {s:.4}s, sine/tamed {:.3}", s / t);
        }
    }
    if compared > 0 {
        println!("sine no slower than tamed in {sine_faster} of {compared} rows");
    }
    Ok(0)
}
