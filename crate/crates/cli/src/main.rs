use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use basestation_cli::commands::{
    cmd_expect, cmd_place, cmd_simulate, parse_location, write_place_tables, PlaceDim, PlaceOptions, SimulateOptions,
};
use basestation_cli::scenario::{builtin, builtins, BUILTIN};
use basestation_cli::verify::{load_dir, verify_all, Status};
use basestation_cli::{parse_scenario, CliError, NamedScenario};
use clap::{Parser, Subcommand};

/// Expected-covariance analysis and base-station placement for sensors with
/// distance-dependent packet loss.
#[derive(Parser)]
#[command(name = "basestation", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Expected next covariance at one or more base locations.
    Expect {
        /// Scenario file, or `builtin:NAME`.
        scenario: String,
        /// Base location, `x` or `x,y`; repeatable.
        #[arg(long = "location", required = true)]
        locations: Vec<String>,
        /// Current covariance as a nested JSON array (inline or a file);
        /// defaults to the scenario's P0.
        #[arg(long)]
        pk: Option<String>,
    },
    /// Grid search for the base location with the smallest expected trace.
    Place {
        scenario: String,
        /// Grid points on a line.
        #[arg(long, default_value_t = 101)]
        grid: usize,
        /// Grid spacing in the plane.
        #[arg(long, default_value_t = 0.01)]
        resolution: f64,
        #[arg(long, value_enum)]
        dim: Option<PlaceDim>,
        #[arg(long)]
        pk: Option<String>,
        /// Write cost_curve.csv, summary.csv and concavity.csv or
        /// local_minima.csv here instead of printing.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Monte Carlo mean and standard error of trace(P_k).
    Simulate {
        scenario: String,
        #[arg(long)]
        location: String,
        #[arg(long, default_value_t = 100)]
        horizon: usize,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Worker threads; the output does not depend on this.
        #[arg(long)]
        threads: Option<usize>,
        /// Also print the iterated one-step expectation.
        #[arg(long)]
        surrogate: bool,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the concavity and placement checks on a directory of scenarios or
    /// on the shipped ones.
    Verify {
        dir: Option<PathBuf>,
        #[arg(long, conflicts_with = "dir")]
        builtin: bool,
    },
}

fn load(arg: &str) -> Result<NamedScenario, CliError> {
    match arg.strip_prefix("builtin:") {
        Some(name) => builtin(name).ok_or_else(|| {
            let known: Vec<&str> = BUILTIN.iter().map(|(n, _)| *n).collect();
            CliError::Usage(format!(
                "unknown builtin scenario {name:?}; known: {}",
                known.join(", ")
            ))
        }),
        None => parse_scenario(arg.as_ref()),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let stdout = io::stdout();
    match cli.command {
        Command::Expect {
            scenario,
            locations,
            pk,
        } => {
            let sc = load(&scenario)?;
            let locs = locations
                .iter()
                .map(|s| parse_location(s))
                .collect::<Result<Vec<_>, _>>()?;
            cmd_expect(&sc.scenario, &locs, pk.as_deref(), stdout.lock())
        }
        Command::Place {
            scenario,
            grid,
            resolution,
            dim,
            pk,
            out_dir,
        } => {
            let sc = load(&scenario)?;
            let opts = PlaceOptions {
                dim,
                grid,
                resolution,
                pk: pk.as_deref(),
            };
            let tables = cmd_place(&sc.scenario, &opts)?;
            match out_dir {
                Some(dir) => write_place_tables(&tables, &dir),
                None => {
                    stdout.lock().write_all(&tables.cost_curve)?;
                    let mut err = io::stderr().lock();
                    err.write_all(&tables.summary)?;
                    if let Some(c) = &tables.concavity {
                        // per-interval verdicts only; the pointwise table goes to --out-dir
                        let mut seen = std::collections::BTreeSet::new();
                        let mut lines = std::str::from_utf8(c).unwrap_or("").lines();
                        lines.next();
                        for l in lines {
                            let cells: Vec<&str> = l.split(',').collect();
                            seen.insert((cells[0].to_string(), cells[1].to_string(), cells[2].to_string()));
                        }
                        for (k, lo, hi) in seen {
                            writeln!(err, "interval {k} [{lo}, {hi}]")?;
                        }
                    }
                    Ok(())
                }
            }
        }
        Command::Simulate {
            scenario,
            location,
            horizon,
            trials,
            seed,
            threads,
            surrogate,
            out,
        } => {
            let sc = load(&scenario)?;
            let opts = SimulateOptions {
                location: parse_location(&location)?,
                horizon,
                trials,
                seed,
                threads,
                surrogate,
            };
            match out {
                Some(path) => cmd_simulate(&sc.scenario, &opts, std::fs::File::create(path)?),
                None => cmd_simulate(&sc.scenario, &opts, stdout.lock()),
            }
        }
        Command::Verify { dir, builtin } => {
            let scenarios = match (dir, builtin) {
                (_, true) => builtins(),
                (Some(d), false) => load_dir(&d)?,
                (None, false) => return Err(CliError::Usage("give a scenario directory or --builtin".into())),
            };
            let outcomes = verify_all(&scenarios);
            let mut out = stdout.lock();
            for o in &outcomes {
                writeln!(out, "{o}")?;
            }
            let failed = outcomes.iter().filter(|o| o.status == Status::Fail).count();
            let skipped = outcomes.iter().filter(|o| o.status == Status::Skip).count();
            writeln!(
                out,
                "{} checks: {} passed, {failed} failed, {skipped} skipped",
                outcomes.len(),
                outcomes.len() - failed - skipped
            )?;
            if failed > 0 {
                return Err(CliError::VerificationFailed(format!("{failed} check(s) failed")));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
