//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::process::{Command, ExitCode};
use std::time::Instant;

use jsde_core::models::{build_cubic_additive, build_merton_linear, build_three_half_jump};
use jsde_core::noise::{derive_path_rng, sample_brownian, sample_jump_stream, JUMP_STREAM};
use jsde_core::schemes::{sine_euler_step, tamed_euler_step, StepInput};
use jsde_core::{
    estimate_local_orders, estimate_moments, estimate_strong_error, fit_order, ErrorMode, ErrorTable,
    JumpDiffusionProblem, JumpEvent, LocalOrderConfig, LocalReference, MarkMeasure, MomentConfig, OverflowPolicy,
    Reference, Scheme, StudyConfig,
};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ChiSquared, ContinuousCDF, Discrete, Poisson};

const SEED: u64 = 20240917;

fn three_half() -> JumpDiffusionProblem {
    build_three_half_jump(3.0, 1.0, 0.5, 0.1, 1.0, 10.0, 1.0).unwrap()
}

fn cubic() -> JumpDiffusionProblem {
    build_cubic_additive(5.0, 1.0).unwrap()
}

fn merton() -> JumpDiffusionProblem {
    build_merton_linear(0.05, 0.2, 0.5, 1.0, 1.0, 1.0).unwrap()
}

fn study(
    exps: std::ops::RangeInclusive<u32>,
    reference_exponent: u32,
    paths: usize,
    reference: Reference,
) -> StudyConfig {
    StudyConfig {
        coarse_exponents: exps.collect(),
        reference_exponent,
        paths,
        seed: SEED,
        error_mode: ErrorMode::Terminal,
        reference,
        overflow_policy: OverflowPolicy::Infinite,
    }
}

fn describe(table: &ErrorTable) -> String {
    table
        .rows
        .iter()
        .map(|r| format!("{:.3e}±{:.1e}", r.rms_error, r.stderr))
        .collect::<Vec<_>>()
        .join(" ")
}

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn slope_check(problem: &JumpDiffusionProblem, lo: f64, hi: f64) -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for scheme in [Scheme::Tamed, Scheme::Sine] {
        let table = estimate_strong_error(problem, scheme, &study(8..=12, 13, 5000, Reference::SameScheme)).unwrap();
        let fit = fit_order(&table).unwrap();
        let ok = fit.slope >= lo && fit.slope <= hi && fit.r_squared >= 0.95;
        pass &= ok;
        detail.push(format!(
            "{scheme}: slope {:.3}, r² {:.4} [{}]",
            fit.slope,
            fit.r_squared,
            describe(&table)
        ));
    }
    Outcome {
        pass,
        detail: detail.join("; "),
    }
}

fn criterion_1() -> Outcome {
    slope_check(&three_half(), 0.35, 0.65)
}

fn criterion_2() -> Outcome {
    slope_check(&cubic(), 0.85, 1.15)
}

fn criterion_3() -> Outcome {
    let p = merton();
    let oracle = estimate_strong_error(&p, Scheme::Tamed, &study(8..=12, 12, 5000, Reference::Exact)).unwrap();
    let numeric = estimate_strong_error(&p, Scheme::Tamed, &study(8..=12, 18, 5000, Reference::SameScheme)).unwrap();
    let fit = fit_order(&oracle).unwrap();
    let slope_ok = (0.35..=0.65).contains(&fit.slope);
    let mut agree = true;
    let mut gaps = Vec::new();
    for (a, b) in oracle.rows.iter().zip(&numeric.rows) {
        let combined = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
        let z = (a.rms_error - b.rms_error).abs() / combined;
        agree &= z <= 3.0;
        gaps.push(format!("{z:.2}"));
    }
    Outcome {
        pass: slope_ok && agree,
        detail: format!(
            "oracle slope {:.3} (r² {:.4}); |oracle - numeric| / combined SE per h: {}; oracle [{}] numeric [{}]",
            fit.slope,
            fit.r_squared,
            gaps.join(" "),
            describe(&oracle),
            describe(&numeric)
        ),
    }
}

fn criterion_4() -> Outcome {
    let p = three_half();
    let moments = |scheme, exponent| {
        let cfg = MomentConfig {
            exponent,
            paths: 1000,
            seed: SEED,
            overflow_policy: OverflowPolicy::Infinite,
        };
        estimate_moments(&p, scheme, 2, &cfg).unwrap()
    };
    let mut pass = true;
    let mut detail = Vec::new();
    for scheme in [Scheme::Tamed, Scheme::Sine] {
        let coarse = moments(scheme, 8).max;
        let fine = moments(scheme, 10).max;
        let ratio = coarse.max(fine) / coarse.min(fine);
        pass &= coarse.is_finite() && fine.is_finite() && ratio < 2.0;
        detail.push(format!(
            "{scheme}: max E|Y|² {coarse:.4} (2^-8) {fine:.4} (2^-10), ratio {ratio:.4}"
        ));
    }
    let em = moments(Scheme::EulerMaruyama, 4);
    pass &= em.overflowed_paths >= 1 || em.max > 1e10;
    detail.push(format!(
        "euler-maruyama 2^-4: {} non-finite paths, max {:e}",
        em.overflowed_paths, em.max
    ));
    Outcome {
        pass,
        detail: detail.join("; "),
    }
}

fn criterion_5() -> Outcome {
    let problems = [three_half(), cubic(), merton()];
    let mut violations = [0usize; 2];
    let mut rng = derive_path_rng(SEED, 0, 99);
    let n = 1_000_000;
    for i in 0..n {
        let p = &problems[i % problems.len()];
        let d = p.state_dim();
        let m = p.noise_dim();
        let lambda = p.measure.total_mass();
        let scale = 10f64.powf(rng.random_range(-3.0..6.0));
        let x: Vec<f64> = (0..d).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let h = 10f64.powf(rng.random_range(-6.0..0.0));
        let dw: Vec<f64> = (0..m)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * h.sqrt() * rng.random_range(0.0..10.0)
            })
            .collect();
        let count = rng.random_range(0..4usize);
        let jumps: Vec<JumpEvent> = (0..count)
            .map(|k| JumpEvent {
                time: h * (k + 1) as f64 / (count + 1) as f64,
                atom: rng.random_range(0..p.measure.len()),
            })
            .collect();
        let input = StepInput {
            t: 0.0,
            x: &x,
            h,
            dw: &dw,
            jumps: &jumps,
        };
        let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
        let dw_norm = norm(&dw);
        let jumps_n = count as f64;
        let tamed_bound = norm(&x) + 1.0 + dw_norm / h + lambda + jumps_n / h;
        let sd = (d as f64).sqrt();
        let sine_bound = norm(&x) + sd + ((m * d) as f64).sqrt() * dw_norm / h + sd * lambda + sd * jumps_n / h;
        for (k, (next, bound)) in [
            (tamed_euler_step(p, input), tamed_bound),
            (sine_euler_step(p, input), sine_bound),
        ]
        .into_iter()
        .enumerate()
        {
            let within = norm(&next) <= bound + 1e-12 * (1.0 + bound);
            if !within {
                violations[k] += 1;
            }
        }
    }
    Outcome {
        pass: violations == [0, 0] && cfg!(debug_assertions),
        detail: format!(
            "{n} random steps each; violations tamed {}, sine {}; debug assertions {}",
            violations[0],
            violations[1],
            if cfg!(debug_assertions) { "on" } else { "off" }
        ),
    }
}

fn criterion_6() -> Outcome {
    let streams = 100_000u64;
    let measure = MarkMeasure::poisson(1.0).unwrap();
    let mut counts = vec![0u64; 64];
    for i in 0..streams {
        let n = sample_jump_stream(&mut derive_path_rng(SEED, i, JUMP_STREAM), &measure, 1.0).len();
        counts[n.min(63)] += 1;
    }
    // Bins 0..=6 and a tail bin, each with expected count ≥ 5.
    let law = Poisson::new(1.0).unwrap();
    let mut stat = 0.0;
    let mut tail_expected = 1.0;
    let mut tail_observed = streams;
    for k in 0..=6u64 {
        let expected = streams as f64 * law.pmf(k);
        stat += (counts[k as usize] as f64 - expected).powi(2) / expected;
        tail_expected -= law.pmf(k);
        tail_observed -= counts[k as usize];
    }
    let tail_expected = streams as f64 * tail_expected;
    stat += (tail_observed as f64 - tail_expected).powi(2) / tail_expected;
    let critical = ChiSquared::new(7.0).unwrap().inverse_cdf(0.999);
    let gof = stat < critical;

    let mut bit_exact = true;
    for i in 0..200 {
        let fine = sample_brownian(&mut derive_path_rng(SEED, i, 0), 1.0, 12, 2);
        let direct = fine.coarsen(32).unwrap();
        bit_exact &= direct == fine.coarsen(2).unwrap().coarsen(16).unwrap();
        bit_exact &= direct == fine.coarsen(16).unwrap().coarsen(2).unwrap();
        let fine_path = fine.brownian_path();
        let coarse_path = direct.brownian_path();
        for k in 0..=direct.steps() {
            bit_exact &= coarse_path[2 * k..2 * k + 2] == fine_path[2 * 32 * k..2 * 32 * k + 2];
        }
    }

    // Compensated increment Σ σ(x, z_j) - h ∫ σ dν over one step of the 3/2 model.
    let p = three_half();
    let x = [10.0];
    let h = 1.0 / 16.0;
    let sigma = |z: &[f64]| {
        let mut out = Vec::new();
        p.coefficients.jump(&x, z, &mut out);
        out[0]
    };
    let compensator: f64 = p.measure.atoms().iter().map(|a| a.weight * sigma(&a.mark)).sum::<f64>() * h;
    let samples = 100_000u64;
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for i in 0..samples {
        let jumps = sample_jump_stream(&mut derive_path_rng(SEED ^ 0xabc, i, JUMP_STREAM), &p.measure, 1.0);
        let v: f64 = jumps
            .jumps_in_window(0.0, h)
            .unwrap()
            .iter()
            .map(|e| sigma(&p.measure.atom(e.atom).mark))
            .sum::<f64>()
            - compensator;
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / samples as f64;
    let se = ((sum_sq / samples as f64 - mean * mean) / (samples as f64 - 1.0)).sqrt();
    let centred = mean.abs() <= 4.0 * se;

    Outcome {
        pass: gof && bit_exact && centred,
        detail: format!(
            "chi-square {stat:.3} vs critical {critical:.3}; coarsening bit-exact {bit_exact}; compensated increment mean {mean:.3e} (SE {se:.3e})"
        ),
    }
}

fn criterion_7() -> Outcome {
    let local = |p: &JumpDiffusionProblem, x: f64, exps: std::ops::RangeInclusive<i32>, paths: usize| {
        let cfg = LocalOrderConfig {
            x: vec![x],
            t: 0.0,
            step_sizes: exps.map(|e| 2f64.powi(-e)).collect(),
            paths,
            seed: SEED,
            reference: LocalReference::Scheme {
                scheme: Scheme::Tamed,
                substeps_log2: 6,
            },
            tolerance: 0.15,
        };
        estimate_local_orders(p, Scheme::Tamed, &cfg).unwrap()
    };
    let c = local(&cubic(), 1.0, 4..=8, 100_000);
    let (c1, c2) = (c.p1_hat.unwrap_or(f64::NAN), c.p2_hat.unwrap_or(f64::NAN));
    let t = local(&three_half(), 10.0, 10..=14, 20_000);
    let t2 = t.p2_hat.unwrap_or(f64::NAN);
    Outcome {
        pass: c2 >= 1.3 && c1 >= c2 + 0.35 && t2 >= 0.6,
        detail: format!(
            "cubic: p1 {c1:.3}, p2 {c2:.3} ({} weak rows flagged); 3/2 model: p2 {t2:.3}",
            c.flagged_rows()
        ),
    }
}

fn criterion_8() -> Outcome {
    let bin = env!("CARGO_BIN_EXE_jsde");
    let dir = tempfile::tempdir().unwrap();
    let run = |model: &str, extra: &[&str]| {
        let out = dir.path().join(model);
        let status = Command::new(bin)
            .args([
                "check-assumptions",
                "--model",
                model,
                "--lower=-5",
                "--upper=5",
                "--out",
            ])
            .arg(&out)
            .args(extra)
            .output()
            .unwrap();
        let report: serde_json::Value =
            serde_json::from_slice(&std::fs::read(out.join("assumptions.json")).unwrap_or_default())
                .unwrap_or(serde_json::Value::Null);
        (status.status.code(), report)
    };
    let (code, report) = run("three-half-jump", &["--q", "2", "--p-bar", "20", "--epsilon", "1"]);
    let limits = [
        ("monotone", 6.08),
        ("coercivity", 6.0),
        ("polynomial-growth", 27.0),
        ("moment-bound", 60.0),
    ];
    let mut pass = code == Some(0);
    let mut detail = vec![format!("three-half-jump exit {code:?}")];
    for (id, limit) in limits {
        let k = report["checks"]
            .as_array()
            .and_then(|c| c.iter().find(|r| r["condition"] == id))
            .and_then(|r| r["k_hat"].as_f64())
            .unwrap_or(f64::NAN);
        pass &= k <= 1.1 * limit;
        detail.push(format!("{id} K̂ {k:.4} (limit {:.3})", 1.1 * limit));
    }
    let (code, report) = run("cubic-additive", &["--q", "4", "--derivatives"]);
    let violations = report["violations"].as_u64();
    pass &= code == Some(0) && violations == Some(0);
    detail.push(format!(
        "cubic-additive q=4 with derivatives: exit {code:?}, violations {violations:?}"
    ));
    Outcome {
        pass,
        detail: detail.join("; "),
    }
}

fn criterion_9() -> Outcome {
    let p = three_half();
    let cfg = study(4..=8, 10, 2000, Reference::SameScheme);
    let numeric = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        let table = pool.install(|| estimate_strong_error(&p, Scheme::Sine, &cfg).unwrap());
        table
            .rows
            .iter()
            .map(|r| {
                (
                    r.h.to_bits(),
                    r.rms_error.to_bits(),
                    r.stderr.to_bits(),
                    r.overflow_count,
                )
            })
            .collect::<Vec<_>>()
    };
    let library = numeric(1) == numeric(4) && numeric(1) == numeric(3);

    let bin = env!("CARGO_BIN_EXE_jsde");
    let dir = tempfile::tempdir().unwrap();
    let csv = |threads: &str| {
        let out = dir.path().join(threads);
        let status = Command::new(bin)
            .args([
                "convergence",
                "--model",
                "three-half-jump",
                "--scheme",
                "tamed",
                "--paths",
                "500",
                "--coarse-exponents",
                "4,5,6",
                "--reference-exponent",
                "8",
                "--seed",
                "7",
                "--threads",
                threads,
                "--out",
            ])
            .arg(&out)
            .status()
            .unwrap();
        let text = std::fs::read_to_string(out.join("errors_tamed_three-half-jump.csv")).unwrap_or_default();
        let fields: Vec<Vec<String>> = text
            .lines()
            .map(|l| {
                l.split(',')
                    .enumerate()
                    .filter(|(i, _)| *i != 3)
                    .map(|(_, f)| f.to_string())
                    .collect()
            })
            .collect();
        (status.success(), fields)
    };
    let (ok1, a) = csv("1");
    let (ok4, b) = csv("4");
    let cli = ok1 && ok4 && a.len() == 4 && a == b;
    Outcome {
        pass: library && cli,
        detail: format!("library tables bit-identical across 1/3/4 threads: {library}; CLI CSV numeric fields identical across 1/4 threads: {cli}"),
    }
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("3/2 model strong order (tamed, sine)", criterion_1),
        ("cubic additive strong order (tamed, sine)", criterion_2),
        ("Merton oracle pipeline", criterion_3),
        ("moment boundedness vs Euler-Maruyama divergence", criterion_4),
        ("per-step a priori bounds", criterion_5),
        ("noise laws", criterion_6),
        ("local-order conditions", criterion_7),
        ("assumption checks", criterion_8),
        ("thread-count determinism", criterion_9),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let id = (i + 1).to_string();
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        failed += !outcome.pass as usize;
        println!(
            "{} criterion {id} ({name}) [{:.1}s]: {}",
            if outcome.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            outcome.detail
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    }
}
