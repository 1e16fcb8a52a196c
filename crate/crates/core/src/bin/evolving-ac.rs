use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use evolving_ac::experiment::{self, load_config, run_experiment};
use evolving_ac::verify::{verify_suite, Level, VerifyOptions};
use evolving_ac::Error;

/// Single-timescale actor-critic with an evolving reward on finite MDPs.
#[derive(Parser)]
#[command(version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (T, seed) pair of a config and write traces, summaries,
    /// checkpoints and a report.
    Run {
        config: PathBuf,
        /// Config overrides such as `--T=4096` or `--schedule.c_omega=2`.
        #[arg(
            trailing_var_arg = true,
            allow_hyphen_values = true,
            value_name = "--KEY=VALUE"
        )]
        overrides: Vec<String>,
    },
    /// Run the property checks, and with `full` the rate sweeps.
    Verify {
        #[arg(long, default_value = "fast")]
        level: String,
        /// Write the results JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the exact oracle quantities at a checkpoint.
    Probe { checkpoint: PathBuf },
    /// Generate an MDP from a generator spec and print its JSON.
    GenMdp {
        spec: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

const EXIT_ABORT: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn fail(code: u8, e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(code)
}

fn print_json<T: serde::Serialize>(value: &T, out: Option<&PathBuf>) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config, overrides } => {
            let config = match load_config(&config, &overrides) {
                Ok(c) => c,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            for warning in config.warnings() {
                eprintln!("warning: {warning}");
            }
            let outcome = match run_experiment(&config) {
                Ok(o) => o,
                Err(e @ Error::Config { .. }) => return fail(EXIT_CONFIG, e),
                Err(e) => return fail(EXIT_ABORT, e),
            };
            if let Some(report) = &outcome.report {
                print!("{}", report.to_table());
            }
            for abort in &outcome.aborts {
                eprintln!(
                    "aborted: T = {} seed = {}: {}",
                    abort.horizon, abort.seed, abort.error
                );
            }
            println!("wrote {}", outcome.output_dir.display());
            ExitCode::from(outcome.exit_code() as u8)
        }
        Command::Verify { level, out } => {
            let level: Level = match level.parse() {
                Ok(l) => l,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            let threads = match experiment::worker_count() {
                Ok(n) => n,
                Err(e) => return fail(EXIT_CONFIG, e),
            };
            let options = VerifyOptions {
                threads,
                projection_radius_override: None,
            };
            let report = verify_suite(level, &options);
            for result in &report.results {
                println!("{}", result.line());
            }
            if let Some(path) = out {
                if let Err(e) = print_json(&report, Some(&path)) {
                    return fail(EXIT_ABORT, e);
                }
            }
            if report.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_ABORT)
            }
        }
        Command::Probe { checkpoint } => match experiment::probe(&checkpoint) {
            Ok(report) => match print_json(&report, None) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(EXIT_ABORT, e),
            },
            Err(e) => fail(EXIT_CONFIG, e),
        },
        Command::GenMdp { spec, out } => match experiment::gen_mdp(&spec) {
            Ok(mdp) => match print_json(&mdp, out.as_ref()) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(EXIT_ABORT, e),
            },
            Err(e) => fail(EXIT_CONFIG, e),
        },
    }
}
