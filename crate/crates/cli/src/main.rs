//! `devsgen`: run reference scenarios, score simulators, check traces and
//! generate simulators from a specification.
//!
//! Exit codes: 0 success, 1 check or run failure, 2 usage or configuration
//! error. During `simulate` and `run`, stdout carries trace records only.

mod check;
mod evaluate;
mod generate;
mod simulate;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(
    name = "devsgen",
    version,
    about = "Parallel DEVS scenarios, trace conformance and simulator generation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a reference scenario and write its JSONL trace to stdout.
    Simulate {
        /// Scenario name (see `devsgen scenarios`).
        scenario: String,
        /// Scenario flags, e.g. `--total_packets 5`.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        flags: Vec<String>,
    },
    /// List scenarios and their flags.
    Scenarios,
    /// Score a simulator command against one or more test suites.
    Evaluate(evaluate::EvaluateArgs),
    /// Check a JSONL trace file against a scenario's rules.
    CheckTrace(check::CheckArgs),
    /// Generate a simulator artifact directory from a spec and contract.
    Generate(generate::GenerateArgs),
    /// Execute a generated artifact directory and write its trace to stdout.
    Run {
        /// Directory written by `generate`.
        dir: PathBuf,
        /// Flags declared by the artifact's controller.
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        flags: Vec<String>,
    },
}

/// A reason to exit nonzero. The message, if any, goes to stderr.
#[derive(Debug)]
pub enum Failure {
    /// Bad arguments, unreadable inputs or invalid configuration.
    Usage(String),
    /// The command ran but the checked artifact failed.
    Failed(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Failed(_) => 1,
            Failure::Usage(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Failed(m) => m,
        }
    }
}

pub type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate { scenario, flags } => simulate::simulate(&scenario, &flags),
        Command::Scenarios => simulate::list(),
        Command::Evaluate(args) => evaluate::run(args),
        Command::CheckTrace(args) => check::run(args),
        Command::Generate(args) => generate::run(args),
        Command::Run { dir, flags } => simulate::run_artifact(&dir, &flags),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            if !failure.message().is_empty() {
                eprintln!("devsgen: {}", failure.message().trim_end());
            }
            ExitCode::from(failure.code())
        }
    }
}

#[cfg(test)]
mod tests {
    use clap::CommandFactory;

    use super::*;

    #[test]
    fn command_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn trailing_flags_reach_the_scenario() {
        let cli = Cli::try_parse_from(["devsgen", "simulate", "abp", "--timeout", "-5"]).unwrap();
        match cli.command {
            Command::Simulate { scenario, flags } => {
                assert_eq!(scenario, "abp");
                assert_eq!(flags, ["--timeout", "-5"]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn evaluate_takes_the_simulator_after_a_separator() {
        let cli = Cli::try_parse_from([
            "devsgen",
            "evaluate",
            "--scenario",
            "abp",
            "--jobs",
            "2",
            "--",
            "python3",
            "sim.py",
            "--x",
        ])
        .unwrap();
        match cli.command {
            Command::Evaluate(args) => {
                assert_eq!(args.simulator, ["python3", "sim.py", "--x"]);
                assert_eq!(args.jobs, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn exit_codes_follow_the_discipline() {
        assert_eq!(Failure::Failed(String::new()).code(), 1);
        assert_eq!(Failure::Usage(String::new()).code(), 2);
    }
}
