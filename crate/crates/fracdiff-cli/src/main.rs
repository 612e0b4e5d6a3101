use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fracdiff_cli::config::ExperimentConfig;
use fracdiff_cli::files::RecoveryStatus;
use fracdiff_cli::{run_recover, run_report, run_simulate, run_wavecheck, CliError};

/// Fractional diffusion experiments: simulate, recover, wave-check, report.
#[derive(Parser)]
#[command(name = "fracdiff", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Worker threads for the solver and recovery (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Treat diagnostic warnings as failures.
    #[arg(long, global = true)]
    strict: bool,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the forward problem for the configured source and store the record.
    Simulate(Common),
    /// Recover eigenvalues and restricted projections.
    Recover {
        #[command(flatten)]
        common: Common,
        /// Record files whose provenance must match the config.
        #[arg(long = "record", required = true)]
        records: Vec<PathBuf>,
    },
    /// Compare the wave operator built from spectral data with a modal stepper.
    Wavecheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, required_unless_present = "exact")]
        spectral: Option<PathBuf>,
        /// Use the exact spectrum instead of a spectral data file.
        #[arg(long, conflicts_with = "spectral")]
        exact: bool,
    },
    /// Render CSV tables for the artifacts in a directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(common: &Common) -> Result<(fracdiff_cli::config::Setup, PathBuf), CliError> {
    let mut config = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    let out = common.out.clone().or_else(|| config.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
    Ok((config.setup()?, out))
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Validation(format!("--workers: {e}")))?;
    }
    match cli.command {
        Command::Simulate(common) => {
            let (setup, out) = load(&common)?;
            let path = run_simulate(&setup, &common.config, &out)?;
            println!("wrote {}", path.display());
        }
        Command::Recover { common, records } => {
            let (setup, out) = load(&common)?;
            let outcome = run_recover(&setup, &common.config, &records, &out, cli.strict)?;
            match outcome.file.status {
                RecoveryStatus::Empty => println!("no poles found: the records carry no signal"),
                RecoveryStatus::Ok => {
                    for e in &outcome.file.entries {
                        println!("lambda {:.9}  rank {}", e.lambda, e.rank);
                    }
                }
            }
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::Wavecheck { common, spectral, exact: _ } => {
            let (setup, out) = load(&common)?;
            let file = run_wavecheck(&setup, &common.config, spectral.as_deref(), &out)?;
            println!("relative L2 error {:.3e} (gate {:.1e}): PASS", file.relative_l2, file.gate);
        }
        Command::Report { out } => {
            for path in run_report(&out)? {
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
