// Comparisons such as `!(x > 0.0)` are written that way on purpose: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;
mod config;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chctl::dynamics::DynamicsError;
use chctl::linear_null::LinearNullError;
use chctl::nonlinear_null::NonlinearNullError;
use chctl::steering::SteeringError;
use clap::{Parser, Subcommand};

use commands::Suite;
use config::{ConfigError, ExperimentConfig};
use manifest::Artifacts;

const EXIT_CONFIG: u8 = 2;
const EXIT_VERIFICATION: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser)]
#[command(name = "chctl", version, about = "Cahn-Hilliard simulation and control experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (JSON); defaults apply to every missing field.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Random seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve the initial state, optionally shifted and forced.
    Simulate,
    /// Steer the initial state towards the target with control-space forcing.
    Steer,
    /// Null control of the truncated linearized system.
    NullLinear,
    /// Free smoothing, steering towards zero and local nonlinear null control.
    NullGlobal,
    /// Generation plans for the listed modes.
    SaturationPlan,
    /// Run an invariant suite.
    Verify {
        #[arg(value_enum)]
        suite: Suite,
    },
}

impl Command {
    fn name(&self) -> String {
        match self {
            Command::Simulate => "simulate".into(),
            Command::Steer => "steer".into(),
            Command::NullLinear => "null-linear".into(),
            Command::NullGlobal => "null-global".into(),
            Command::SaturationPlan => "saturation-plan".into(),
            Command::Verify { suite } => format!("verify {}", format!("{suite:?}").to_lowercase()),
        }
    }
}

/// Failures caused by the numerics (blow-up, ill-conditioning, divergence).
fn is_numerical(err: &anyhow::Error) -> bool {
    fn dynamics(e: &DynamicsError) -> bool {
        !matches!(e, DynamicsError::InvalidProblem(_))
    }
    fn linear(e: &LinearNullError) -> bool {
        matches!(e, LinearNullError::GramianIllConditioned { .. } | LinearNullError::WeightOverflow { .. })
    }
    fn steering(e: &SteeringError) -> bool {
        match e {
            SteeringError::Dynamics(d) => dynamics(d),
            _ => false,
        }
    }
    if let Some(e) = err.downcast_ref::<DynamicsError>() {
        return dynamics(e);
    }
    if let Some(e) = err.downcast_ref::<LinearNullError>() {
        return linear(e);
    }
    if let Some(e) = err.downcast_ref::<SteeringError>() {
        return steering(e);
    }
    if let Some(e) = err.downcast_ref::<NonlinearNullError>() {
        return match e {
            NonlinearNullError::NoContraction { .. } | NonlinearNullError::ZeroRadius => true,
            NonlinearNullError::Linear(l) => linear(l),
            NonlinearNullError::Dynamics(d) => dynamics(d),
            NonlinearNullError::Steering(s) => steering(s),
            _ => false,
        };
    }
    false
}

/// Failures where a run completed but missed its target.
fn is_verification(err: &anyhow::Error) -> bool {
    matches!(
        err.downcast_ref::<NonlinearNullError>(),
        Some(NonlinearNullError::SteeringFailed { .. })
            | Some(NonlinearNullError::Steering(SteeringError::BudgetExhausted { .. }))
            | Some(NonlinearNullError::Steering(SteeringError::HorizonExceeded { .. }))
    ) || matches!(err.downcast_ref::<SteeringError>(), Some(SteeringError::HorizonExceeded { .. }))
}

fn load_config(cli: &Cli) -> Result<(ExperimentConfig, PathBuf), ConfigError> {
    let (mut cfg, base) = match &cli.config {
        Some(path) => {
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            (ExperimentConfig::load(path)?, base)
        }
        None => (ExperimentConfig::default(), PathBuf::new()),
    };
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok((cfg, base))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cfg, base) = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: invalid `--threads`: must be at least 1");
            return ExitCode::from(EXIT_CONFIG);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::FAILURE;
        }
    }
    let mut art = match Artifacts::create(&cfg.out) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::FAILURE;
        }
    };
    let result = match &cli.command {
        Command::Simulate => commands::simulate(&cfg, &base, &mut art),
        Command::Steer => commands::steer(&cfg, &base, &mut art),
        Command::NullLinear => commands::null_linear(&cfg, &base, &mut art),
        Command::NullGlobal => commands::null_global(&cfg, &base, &mut art),
        Command::SaturationPlan => commands::saturation_plan(&cfg, &mut art),
        Command::Verify { suite } => commands::verify_suite(&cfg, *suite, &mut art),
    };
    let name = cli.command.name();
    let (status, message, summary, code) = match result {
        Ok(f) if f.passed => ("pass", f.message, f.summary, ExitCode::SUCCESS),
        Ok(f) => ("fail", f.message, f.summary, ExitCode::from(EXIT_VERIFICATION)),
        Err(e) => {
            let code = if e.downcast_ref::<ConfigError>().is_some() {
                EXIT_CONFIG
            } else if is_numerical(&e) {
                EXIT_NUMERICAL
            } else if is_verification(&e) {
                EXIT_VERIFICATION
            } else {
                1
            };
            ("error", format!("{e:#}"), serde_json::Value::Null, ExitCode::from(code))
        }
    };
    match art.finish(&name, cli.threads, &cfg, status, Some(&message), &summary) {
        Ok(path) => println!("{name}: {status}: {message}\nmanifest: {}", path.display()),
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::FAILURE;
        }
    }
    if status == "error" {
        eprintln!("error: {message}");
    }
    code
}
