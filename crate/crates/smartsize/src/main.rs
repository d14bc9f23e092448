use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use smartsize::commands::{self, exit};
use smartsize::config::{load_run_config, load_simulate_config};
use smartsize::exec::Parallel;
use smartsize::{CliError, Result};

/// Sample sizes for two-stage sequential multiple assignment randomized trials.
#[derive(Parser)]
#[command(name = "smartsize", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Run configuration (TOML, or JSON such as a report's `config`).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to one per core).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Compute a sample size and write a JSON report.
    Size {
        #[command(flatten)]
        common: Common,
        /// Report path; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a Monte Carlo experiment and write report.csv and report.json.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Bootstrap power on a grid with the fitted curve, as CSV plus a JSON sidecar.
    PowerCurve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
}

fn seed_or_entropy(cli: Option<u64>, config: Option<u64>) -> u64 {
    cli.or(config).unwrap_or_else(|| {
        let s = rand::random::<u64>();
        eprintln!("seed: {s}");
        s
    })
}

fn executor(threads: Option<usize>) -> Result<Parallel> {
    if threads == Some(0) {
        return Err(CliError::config("--threads", "must be at least 1"));
    }
    Parallel::new(threads).map_err(|e| CliError::Output(e.to_string()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => commands::write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Size { common, out } => {
            let config = load_run_config(&common.config)?;
            let exec = executor(common.threads)?;
            let seed = seed_or_entropy(common.seed, config.seed);
            let result = commands::size(&config, seed, &exec)?;
            emit(out.as_deref(), &commands::to_json(&commands::size_report(&config, seed, &result))?)?;
            let code = commands::exit_code(&result);
            if code == exit::SENTINEL {
                let reason = result
                    .diagnostics
                    .get("sentinel")
                    .map(|d| serde_json::to_string(d).unwrap_or_default())
                    .unwrap_or_default();
                eprintln!("n = infinite: {}", reason.trim_matches('"'));
            }
            Ok(code)
        }
        Command::Simulate { common, out_dir } => {
            let config = load_simulate_config(&common.config)?;
            let exec = executor(common.threads)?;
            let seed = seed_or_entropy(common.seed, config.seed);
            let report = commands::simulate(&config, seed, &exec)?;
            let paths = commands::write_simulation(&out_dir, &config, seed, &report)?;
            eprintln!("smartsize {} seed {seed}: wrote {} and {}", commands::VERSION, paths[0].display(), paths[1].display());
            Ok(exit::SUCCESS)
        }
        Command::PowerCurve { common, out } => {
            let config = load_run_config(&common.config)?;
            let exec = executor(common.threads)?;
            let seed = seed_or_entropy(common.seed, config.seed);
            let curve = commands::curve(&config, seed, &exec)?;
            commands::write_text(&out, &commands::curve_csv(&curve)?)?;
            let sidecar = out.with_extension("json");
            commands::write_text(&sidecar, &commands::to_json(&commands::curve_report(&config, seed, &curve))?)?;
            Ok(exit::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit::ERROR)
        }
    }
}
