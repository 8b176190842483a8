//! `dronebar`: run scenarios, compare controllers and run the numerical audits.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 simulation fault,
//! 3 verification failure.

mod commands;
mod manifest;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dronebar::verify::{PerturbationGrid, Suite, SuiteOptions};
use dronebar::ControllerKind;

use commands::{CliError, Format, RunRequest};

#[derive(Parser)]
#[command(
    name = "dronebar",
    version,
    about = "Two drones carrying a bar: simulation, comparison and audits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its trajectory, metrics and plots.
    Simulate {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Run a scenario under the proposed and PD controllers and tabulate
    /// settling times.
    Compare {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Run a verification suite.
    Verify(VerifyArgs),
    /// List the shipped scenarios, or write them as JSON into `--out`.
    Scenarios {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Scenario JSON file or shipped scenario name.
    #[arg(long)]
    config: String,
    /// Output directory (default `out/<scenario>`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    controller: Option<ControllerKind>,
    #[arg(long)]
    dt: Option<f64>,
    /// Truncate the run; disturbances are clipped to the new horizon.
    #[arg(long)]
    duration: Option<f64>,
    /// Log every N-th integration step.
    #[arg(long, default_value_t = 1)]
    stride: usize,
    /// Settling band as a fraction of each channel's initial error.
    #[arg(long, default_value_t = 0.02)]
    band: f64,
}

impl RunArgs {
    fn request(&self) -> RunRequest {
        RunRequest {
            config: self.config.clone(),
            controller: self.controller,
            dt: self.dt,
            duration: self.duration,
            stride: self.stride,
            band: self.band,
        }
    }
}

#[derive(Args)]
struct VerifyArgs {
    /// all, lemma1, lemma2, dynamics, closed_loop or basin.
    suite: Suite,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed of the random state sampling.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Random samples per sampled check.
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    /// Grid points of the equilibrium uniqueness scan.
    #[arg(long, default_value_t = 10_001)]
    grid: usize,
    /// Simulated horizon of each basin run (s).
    #[arg(long, default_value_t = 120.0)]
    basin_horizon: f64,
    /// Levels per coordinate of the basin grid.
    #[arg(long, default_value_t = 3)]
    basin_levels: usize,
    /// Negative control: audit a model with a corrupted inertia matrix.
    #[arg(long, hide = true)]
    corrupt_inertia: bool,
}

fn print_lines(lines: &[String]) {
    for line in lines {
        println!("{line}");
    }
}

fn run(cli: Cli) -> Result<ExitCode, CliError> {
    match cli.command {
        Command::Simulate { run, format } => {
            let manifest = commands::cmd_simulate(&run.request(), run.out.clone(), format)?;
            print_lines(&manifest.summary);
        }
        Command::Compare { run, format } => {
            let manifest = commands::cmd_compare(&run.request(), run.out.clone(), format)?;
            print_lines(&manifest.summary);
        }
        Command::Verify(args) => {
            let options = SuiteOptions {
                seed: args.seed,
                samples: args.samples,
                lemma2_grid: args.grid,
                basin: PerturbationGrid {
                    levels: args.basin_levels,
                    ..PerturbationGrid::default()
                },
                basin_horizon: args.basin_horizon,
                corrupt_inertia: args.corrupt_inertia,
            };
            let (manifest, reports) = commands::cmd_verify(args.suite, &options, args.out)?;
            for r in &reports {
                print!("{}", r.summary());
            }
            if !manifest.passed {
                return Ok(ExitCode::from(3));
            }
        }
        Command::Scenarios { out } => {
            let written = commands::cmd_scenarios(out)?;
            if written.is_empty() {
                for name in dronebar::scenarios::NAMES {
                    println!("{name}");
                }
            }
            for path in written {
                println!("{}", path.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            if let CliError::Fault(manifest) = &e {
                print_lines(&manifest.summary);
            }
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
