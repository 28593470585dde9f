//! `jsde`: convergence studies for tamed and sine Euler on jump-diffusion SDEs.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use jsde_core::{ErrorMode, OverflowPolicy, Scheme};

use config::{env_seed, parse_key_value, RunConfig};

#[derive(Parser, Debug)]
#[command(
    name = "jsde",
    version,
    about = "Strong-convergence studies for explicit jump-diffusion schemes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Strong error against a reference at several step sizes.
    Convergence(StudyArgs),
    /// Moment estimates E|Y_n|^p along the grid.
    Moments(MomentArgs),
    /// Empirical one-step weak and strong orders.
    LocalOrder(LocalArgs),
    /// Sampled estimates of the monotonicity, coercivity and growth constants.
    CheckAssumptions(AssumptionArgs),
    /// Wall-clock time per step size for each scheme.
    Bench(StudyArgs),
    /// Registered models and their default parameters.
    ListModels,
}

#[derive(Args, Debug, Default, Clone)]
struct Common {
    /// TOML config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Model id (see list-models).
    #[arg(long)]
    model: Option<String>,
    /// Model parameter override, repeatable.
    #[arg(long = "param", value_parser = parse_key_value)]
    params: Vec<(String, f64)>,
    /// Master seed [env: JSDE_SEED].
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo paths.
    #[arg(long)]
    paths: Option<usize>,
    /// Worker threads (default: available parallelism).
    #[arg(long)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct StudyArgs {
    #[command(flatten)]
    common: Common,
    /// Schemes to run, comma separated.
    #[arg(long, value_delimiter = ',')]
    scheme: Vec<Scheme>,
    /// Coarse step exponents i (h = 2^-i T), comma separated.
    #[arg(long, value_delimiter = ',')]
    coarse_exponents: Vec<u32>,
    #[arg(long)]
    reference_exponent: Option<u32>,
    /// same-scheme, exact or a scheme id.
    #[arg(long)]
    reference: Option<String>,
    #[arg(long, value_enum)]
    error_mode: Option<ModeArg>,
    #[arg(long, value_enum)]
    overflow_policy: Option<PolicyArg>,
}

#[derive(Args, Debug)]
struct MomentArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',')]
    scheme: Vec<Scheme>,
    /// Step exponent i (h = 2^-i T).
    #[arg(long)]
    exponent: Option<u32>,
    /// Even moment order.
    #[arg(long)]
    p: Option<u32>,
    #[arg(long, value_enum)]
    overflow_policy: Option<PolicyArg>,
}

#[derive(Args, Debug)]
struct LocalArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_delimiter = ',')]
    scheme: Vec<Scheme>,
    /// Starting state, comma separated (default: the model's initial value).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x: Vec<f64>,
    #[arg(long)]
    t: Option<f64>,
    /// One-step sizes h = 2^-i T, comma separated.
    #[arg(long, value_delimiter = ',')]
    step_exponents: Vec<u32>,
    /// exact or a scheme id.
    #[arg(long)]
    reference: Option<String>,
    /// Reference substeps per step, as a power of two.
    #[arg(long)]
    substeps_log2: Option<u32>,
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Args, Debug)]
struct AssumptionArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, allow_hyphen_values = true)]
    lower: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    upper: Option<f64>,
    #[arg(long)]
    points_per_dim: Option<usize>,
    #[arg(long)]
    random_points: Option<usize>,
    #[arg(long)]
    pairs: Option<usize>,
    /// Polynomial growth rate.
    #[arg(long)]
    q: Option<f64>,
    #[arg(long)]
    p_bar: Option<u32>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Also check growth of the first and second drift derivatives.
    #[arg(long)]
    derivatives: bool,
    /// Fail instead of using finite differences for missing derivatives.
    #[arg(long)]
    no_finite_differences: bool,
    /// User constant for a condition, e.g. monotone=6.08; repeatable.
    #[arg(long = "constant", value_parser = parse_key_value)]
    constants: Vec<(String, f64)>,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum ModeArg {
    Terminal,
    Sup,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum PolicyArg {
    Infinite,
    Exclude,
}

impl From<ModeArg> for ErrorMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Terminal => ErrorMode::Terminal,
            ModeArg::Sup => ErrorMode::Sup,
        }
    }
}

impl From<PolicyArg> for OverflowPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Infinite => OverflowPolicy::Infinite,
            PolicyArg::Exclude => OverflowPolicy::Exclude,
        }
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_vec<T>(slot: &mut Vec<T>, value: Vec<T>) {
    if !value.is_empty() {
        *slot = value;
    }
}

fn base_config(command: &str, common: Common) -> Result<RunConfig> {
    let from_file = common.config.is_some();
    let mut c = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    c.command = command.to_string();
    if !from_file {
        if let Some(seed) = env_seed()? {
            c.seed = seed;
        }
    }
    set(&mut c.model, common.model);
    c.params.extend(common.params);
    set(&mut c.seed, common.seed);
    set(&mut c.paths, common.paths);
    set(&mut c.threads, common.threads);
    set(&mut c.out, common.out);
    Ok(c)
}

fn resolve(command: &Command) -> Result<Option<RunConfig>> {
    let c = match command {
        Command::ListModels => return Ok(None),
        Command::Convergence(a) | Command::Bench(a) => {
            let name = if matches!(command, Command::Bench(_)) {
                "bench"
            } else {
                "convergence"
            };
            let mut c = base_config(name, a.common.clone())?;
            set_vec(&mut c.schemes, a.scheme.clone());
            set_vec(&mut c.coarse_exponents, a.coarse_exponents.clone());
            set(&mut c.reference_exponent, a.reference_exponent);
            set(&mut c.reference, a.reference.clone());
            set(&mut c.error_mode, a.error_mode.map(Into::into));
            set(&mut c.overflow_policy, a.overflow_policy.map(Into::into));
            c
        }
        Command::Moments(a) => {
            let mut c = base_config("moments", a.common.clone())?;
            set_vec(&mut c.schemes, a.scheme.clone());
            set(&mut c.moments.exponent, a.exponent);
            set(&mut c.moments.p, a.p);
            set(&mut c.overflow_policy, a.overflow_policy.map(Into::into));
            c
        }
        Command::LocalOrder(a) => {
            let mut c = base_config("local-order", a.common.clone())?;
            set_vec(&mut c.schemes, a.scheme.clone());
            set_vec(&mut c.local_order.x, a.x.clone());
            set(&mut c.local_order.t, a.t);
            set_vec(&mut c.local_order.step_exponents, a.step_exponents.clone());
            set(&mut c.reference, a.reference.clone());
            set(&mut c.local_order.substeps_log2, a.substeps_log2);
            set(&mut c.local_order.tolerance, a.tolerance);
            c
        }
        Command::CheckAssumptions(a) => {
            let mut c = base_config("check-assumptions", a.common.clone())?;
            let s = &mut c.assumptions;
            set(&mut s.lower, a.lower);
            set(&mut s.upper, a.upper);
            set(&mut s.points_per_dim, a.points_per_dim);
            set(&mut s.random_points, a.random_points);
            set(&mut s.pairs, a.pairs);
            set(&mut s.q, a.q);
            set(&mut s.p_bar, a.p_bar);
            set(&mut s.epsilon, a.epsilon);
            s.derivatives |= a.derivatives;
            if a.no_finite_differences {
                s.finite_differences = false;
            }
            s.constants.extend(a.constants.iter().cloned());
            c
        }
    };
    c.validate()?;
    Ok(Some(c))
}

fn run(cli: Cli) -> Result<ExitCode> {
    let Some(config) = resolve(&cli.command)? else {
        print!("{}", commands::list_models());
        return Ok(ExitCode::SUCCESS);
    };
    if config.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build_global()?;
    }
    let code = match cli.command {
        Command::Convergence(_) => commands::convergence(&config)?,
        Command::Moments(_) => commands::moments(&config)?,
        Command::LocalOrder(_) => commands::local_order(&config)?,
        Command::CheckAssumptions(_) => commands::check_assumptions(&config)?,
        Command::Bench(_) => commands::bench(&config)?,
        Command::ListModels => unreachable!("handled above"),
    };
    Ok(ExitCode::from(code))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
