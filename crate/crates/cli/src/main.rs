//! `dogs`: seeded optimization runs, ensembles, the Lorenz comparison and
//! uncertainty fits.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dogs_core::Tolerance;

use config::{parse_tolerance, AlgorithmName, ProblemName, RunConfig};

/// Output directory used when neither `--out`, the config file nor
/// `DOGS_OUT_DIR` names one.
const DEFAULT_OUT: &str = "dogs-out";

/// A bad invocation or configuration; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(
    name = "dogs",
    version,
    about = "Optimize finite-time averages of noisy or chaotic processes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one optimization and write its records, points and state.
    Run {
        #[command(flatten)]
        common: Common,
        /// Continue from a `state.json` written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run independently seeded members and aggregate their records.
    Ensemble {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Run alpha-DOGS and Delta-DOGS on the Lorenz problem and compare the
    /// averaging time each needs.
    CompareLorenz {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the uncertainty model from an ensemble of finite averages.
    FitUq {
        #[command(flatten)]
        common: Common,
        /// Ensemble size.
        #[arg(long)]
        runs: Option<usize>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML configuration; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: $DOGS_OUT_DIR, then dogs-out].
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stop after this many samples.
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    max_iterations: Option<u64>,
    /// Stop once a point is within VALUE of the known minimum with
    /// uncertainty at most SIGMA.
    #[arg(long, value_name = "VALUE,SIGMA", value_parser = parse_tolerance)]
    tolerance: Option<Tolerance>,
    #[arg(long, value_enum)]
    problem: Option<ProblemName>,
    /// Dimension of the synthetic problems.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long, value_enum)]
    algorithm: Option<AlgorithmName>,
    /// Worker threads [default: all cores].
    #[arg(long)]
    jobs: Option<usize>,
}

impl Common {
    fn apply_stopping(&self, cfg: &mut RunConfig) {
        cfg.budget = self.budget.or(cfg.budget);
        cfg.max_iterations = self.max_iterations.or(cfg.max_iterations);
        cfg.tolerance = self.tolerance.or(cfg.tolerance);
    }

    fn config(&self) -> Result<RunConfig, UsageError> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        cfg.seed = self.seed.unwrap_or(cfg.seed);
        cfg.problem = self.problem.unwrap_or(cfg.problem);
        cfg.dim = self.dim.unwrap_or(cfg.dim);
        cfg.algorithm = self.algorithm.unwrap_or(cfg.algorithm);
        self.apply_stopping(&mut cfg);
        Ok(cfg)
    }

    fn out(&self, cfg: &RunConfig) -> PathBuf {
        self.out
            .clone()
            .or_else(|| cfg.out.clone())
            .or_else(|| std::env::var_os("DOGS_OUT_DIR").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
    }

    fn check_jobs(&self) -> Result<(), UsageError> {
        if self.jobs == Some(0) {
            return Err(UsageError("--jobs must be at least 1".into()));
        }
        Ok(())
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Run { common, resume } => {
            common.check_jobs()?;
            let (cfg, state) = match resume {
                Some(path) => {
                    if common.config.is_some()
                        || common.problem.is_some()
                        || common.dim.is_some()
                        || common.algorithm.is_some()
                        || common.seed.is_some()
                    {
                        return Err(UsageError(
                            "--resume only accepts the stopping rule, --out and --jobs".into(),
                        )
                        .into());
                    }
                    let (mut cfg, state) = commands::load_snapshot(&path)?;
                    common.apply_stopping(&mut cfg);
                    (cfg, Some(state))
                }
                None => (common.config()?, None),
            };
            cfg.validate()?;
            let out = common.out(&cfg);
            commands::pool_install(common.jobs, || commands::run(&cfg, &out, state))
        }
        Command::Ensemble { common, runs } => {
            common.check_jobs()?;
            let mut cfg = common.config()?;
            cfg.runs = runs.unwrap_or(cfg.runs);
            cfg.validate()?;
            commands::ensemble(&cfg, &common.out(&cfg), common.jobs)
        }
        Command::CompareLorenz { common } => {
            common.check_jobs()?;
            let mut cfg = common.config()?;
            cfg.problem = ProblemName::Lorenz;
            cfg.validate()?;
            commands::compare_lorenz(&cfg, &common.out(&cfg), common.jobs)
        }
        Command::FitUq { common, runs } => {
            common.check_jobs()?;
            let mut cfg = common.config()?;
            cfg.uq.ensemble = runs.unwrap_or(cfg.uq.ensemble);
            cfg.validate()?;
            let out = common.out(&cfg);
            commands::pool_install(common.jobs, || commands::fit_uq(&cfg, &out))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
