//! Command-line driver: configuration, staged runs and file formats.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod records;
pub mod report;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};

#[derive(Debug, Parser)]
#[command(name = "qwork", version, about = "Quantum work statistics: simulate, reconstruct and verify")]
pub struct Cli {
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true, env = "QWORK_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML or JSON experiment configuration; built-in defaults when omitted.
    #[arg(long, env = "QWORK_CONFIG")]
    pub config: Option<PathBuf>,
    /// Run directory.
    #[arg(long, env = "QWORK_OUT")]
    pub out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Series CSV to fit.
    #[arg(long, requires = "out", conflicts_with = "run")]
    pub series: Option<PathBuf>,
    /// Output JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fit every series of a run directory.
    #[arg(long, required_unless_present = "series")]
    pub run: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Forward fit JSON.
    #[arg(long, requires_all = ["backward", "out"], conflicts_with = "run")]
    pub forward: Option<PathBuf>,
    /// Backward fit JSON.
    #[arg(long, requires = "forward")]
    pub backward: Option<PathBuf>,
    /// Output JSON; `crooks_points.csv` is written beside it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Verify every temperature of a run directory.
    #[arg(long, required_unless_present = "forward")]
    pub run: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub mc_trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample the interferometer for every direction and temperature.
    Simulate(RunArgs),
    /// Fit damped four-tone models to series.
    Fit(FitArgs),
    /// Crooks fit and Jarzynski comparison.
    Verify(VerifyArgs),
    /// Process tomography of both quench directions.
    Qpt(RunArgs),
    /// Summarize a completed run.
    Report {
        #[arg(long, env = "QWORK_RUN")]
        run: PathBuf,
    },
    /// simulate, fit, verify, qpt and report in one go.
    Pipeline(RunArgs),
}

fn load(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(args.config.as_deref(), std::env::vars())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<String> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match cli.command {
        Command::Simulate(a) => {
            let written = commands::simulate(&load(&a)?, &a.out)?;
            Ok(format!("wrote {} files to {}", written.len(), a.out.display()))
        }
        Command::Fit(a) => match (a.series, a.out, a.run) {
            (Some(series), Some(out), None) => {
                let rec = commands::fit_file(&series, &out)?;
                Ok(format!("residual rms {:.3e}, wrote {}", rec.residual_rms, out.display()))
            }
            (None, _, Some(run)) => {
                let written = commands::fit_run(&run)?;
                Ok(format!("wrote {} fits to {}", written.len(), run.display()))
            }
            _ => Err(CliError::Usage("use either --series with --out, or --run".into())),
        },
        Command::Verify(a) => match (a.forward, a.backward, a.out, a.run) {
            (Some(f), Some(b), Some(out), None) => {
                let rec = commands::verify_files(&f, &b, &out, a.mc_trials, a.seed)?;
                let beta = rec.crooks.map(|c| format!("{:.6}", c.beta_per_khz)).unwrap_or_else(|| "n/a".into());
                Ok(format!("crooks beta {beta} 1/kHz, wrote {}", out.display()))
            }
            (None, None, _, Some(run)) => {
                let written = commands::verify_run(&run)?;
                Ok(format!("wrote {} files to {}", written.len(), run.display()))
            }
            _ => Err(CliError::Usage("use either --forward, --backward and --out, or --run".into())),
        },
        Command::Qpt(a) => {
            let rec = commands::qpt(&load(&a)?, &a.out)?;
            Ok(format!(
                "worst-case distance {:.3e} / {:.3e}, wrote {}",
                rec.forward.worst_case_distance,
                rec.backward.worst_case_distance,
                a.out.join("qpt.json").display()
            ))
        }
        Command::Report { run } => Ok(report::render(&commands::report_run(&run)?)),
        Command::Pipeline(a) => Ok(report::render(&commands::pipeline(&load(&a)?, &a.out)?)),
    }
}
