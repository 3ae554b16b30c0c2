use std::io::{self, Write};
use std::path::PathBuf;

use clap::Args;
use devsgen_core::conformance::{bundled_suite, evaluate_suite, Report, Suite};
use devsgen_core::ScenarioKind;

use crate::simulate::parse_scenario;
use crate::{Failure, Outcome};

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Suite file; repeatable. Without one, the bundled suite of --scenario is used.
    #[arg(long = "suite", value_name = "PATH")]
    pub suites: Vec<PathBuf>,
    /// Rules scenario; must match each suite's own scenario.
    #[arg(long)]
    pub scenario: Option<String>,
    /// Where to write the JSON report; stdout when omitted.
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
    /// Cases run concurrently.
    #[arg(long, default_value_t = default_jobs())]
    pub jobs: usize,
    /// Simulator command; defaults to this binary's reference `simulate`.
    #[arg(last = true, value_name = "COMMAND")]
    pub simulator: Vec<String>,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn reference_command(kind: ScenarioKind) -> Result<Vec<String>, Failure> {
    let exe = std::env::current_exe().map_err(|e| Failure::Usage(format!("cannot locate own binary: {e}")))?;
    Ok(vec![exe.display().to_string(), "simulate".into(), kind.name().into()])
}

fn load_suites(args: &EvaluateArgs, wanted: Option<ScenarioKind>) -> Result<Vec<(ScenarioKind, Suite)>, Failure> {
    if args.suites.is_empty() {
        let kind = wanted.ok_or_else(|| Failure::Usage("give --suite or --scenario".into()))?;
        return Ok(vec![(kind, bundled_suite(kind))]);
    }
    args.suites
        .iter()
        .map(|path| {
            let suite = Suite::load(path).map_err(|e| Failure::Usage(e.to_string()))?;
            let kind = suite
                .kind()
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            match wanted {
                Some(w) if w != kind => Err(Failure::Usage(format!(
                    "{} is a {} suite, not {}",
                    path.display(),
                    kind.name(),
                    w.name()
                ))),
                _ => Ok((kind, suite)),
            }
        })
        .collect()
}

pub fn run(args: EvaluateArgs) -> Outcome {
    let wanted = args.scenario.as_deref().map(parse_scenario).transpose()?;
    let suites = load_suites(&args, wanted)?;
    let mut reports = Vec::new();
    for (kind, suite) in &suites {
        let simulator = if args.simulator.is_empty() {
            reference_command(*kind)?
        } else {
            args.simulator.clone()
        };
        let report = evaluate_suite(&simulator, suite, *kind, args.jobs).map_err(|e| Failure::Usage(e.to_string()))?;
        reports.push(report);
    }
    let report = Report::new(reports);
    let mut json = report.to_json();
    json.push('\n');
    match &args.report {
        Some(path) => {
            std::fs::write(path, json).map_err(|e| Failure::Failed(format!("cannot write {}: {e}", path.display())))?
        }
        None => io::stdout()
            .lock()
            .write_all(json.as_bytes())
            .map_err(|e| Failure::Failed(e.to_string()))?,
    }
    eprint!("{}", report.summary());
    Ok(())
}
