use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stab::harness::commands::{run_command, CommandAction};

/// Sample-and-hold feedback stabilization for measure-driven particle
/// dynamics: simulate scenarios, verify the property suites, dump shell
/// tables, and sweep parameters.
#[derive(Parser)]
#[command(name = "stab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write trajectory, report, and verdicts.
    Simulate {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Accepted for interface symmetry; a single simulation runs in one
        /// process.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Run randomized property suites: transport, proximal, lemmas, or all.
    Verify {
        config: PathBuf,
        #[arg(long, default_value = "all")]
        suite: String,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Build and dump the global-stabilization shell table.
    Shells {
        config: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run one simulation per axis value and aggregate the results. An
    /// empty value list is a no-op that writes an empty aggregate.
    Sweep {
        config: PathBuf,
        /// One of: N, kappa, eps, delta.
        #[arg(long)]
        axis: String,
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter("STAB_LOG")).init();
    let cli = Cli::parse();
    let (config, seed, action) = match cli.command {
        Command::Simulate { config, out, seed, jobs: _ } => {
            (config, seed, CommandAction::Simulate { out })
        }
        Command::Verify { config, suite, out, seed } => {
            (config, seed, CommandAction::Verify { suite, out })
        }
        Command::Shells { config, out } => (config, None, CommandAction::Shells { out }),
        Command::Sweep { config, axis, values, out, jobs } => (
            config,
            None,
            CommandAction::Sweep { axis, values, out, jobs },
        ),
    };
    match run_command(&config, seed, action) {
        Ok(outcome) => {
            for check in &outcome.report.checks {
                println!(
                    "check {:<28} {} (trials={}, worst_margin={:.3e})",
                    check.name,
                    if check.pass { "PASS" } else { "FAIL" },
                    check.trials,
                    check.worst_margin,
                );
            }
            if let Some(v) = &outcome.report.verdicts {
                println!("verdict reach:          {:?} ({})", v.reach.status, v.reach.note);
                println!("verdict bounded:        {:?} ({})", v.bounded.status, v.bounded.note);
                println!("verdict shrinking:      {:?} ({})", v.shrinking.status, v.shrinking.note);
                println!(
                    "verdict shell_monotone: {:?} ({})",
                    v.shell_monotone.status, v.shell_monotone.note
                );
            }
            println!(
                "overall: {}",
                if outcome.report.all_pass { "PASS" } else { "FAIL" }
            );
            ExitCode::from(outcome.exit_code as u8)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
