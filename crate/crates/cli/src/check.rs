use std::fmt::Write as _;
use std::io::{self, Read, Write};
use std::path::PathBuf;

use clap::Args;
use devsgen_core::conformance::{check_trace, rule_catalog, CaseResult};
use devsgen_core::TraceValidationReport;

use crate::simulate::{parse_scenario, usage};
use crate::{Failure, Outcome};

#[derive(Debug, Args)]
pub struct CheckArgs {
    /// Trace file, or `-` for stdin.
    pub trace: PathBuf,
    /// Scenario whose rules apply.
    #[arg(long)]
    pub scenario: String,
    /// Print the result as JSON instead of text.
    #[arg(long)]
    pub json: bool,
    /// Scenario flags the trace was produced with; rules depend on them.
    #[arg(last = true, value_name = "FLAGS")]
    pub flags: Vec<String>,
}

fn read_trace(path: &PathBuf) -> Result<Vec<u8>, Failure> {
    let mut bytes = Vec::new();
    let result = if path.as_os_str() == "-" {
        io::stdin().read_to_end(&mut bytes).map(|_| ())
    } else {
        std::fs::read(path).map(|b| bytes = b)
    };
    result.map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(bytes)
}

/// One line per rule, then diagnostics.
pub fn render(validation: &TraceValidationReport, result: &CaseResult) -> String {
    let mut out = String::new();
    let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
    let _ = writeln!(
        out,
        "{} valid-log ({} records, {} malformed lines)",
        verdict(validation.valid),
        validation.record_count,
        validation.line_errors.len()
    );
    for (level, outcomes) in [("component", &result.component), ("system", &result.system)] {
        for o in outcomes {
            let _ = writeln!(out, "{} {level} {}", verdict(o.passed), o.rule);
        }
    }
    for d in &result.diagnostics {
        let _ = writeln!(out, "  {d}");
    }
    let _ = writeln!(out, "v = {}  c = {:.4}", result.v, result.c);
    out
}

pub fn run(args: CheckArgs) -> Outcome {
    let kind = parse_scenario(&args.scenario)?;
    let scenario_args = kind
        .parse_args(&args.flags)
        .map_err(|e| Failure::Usage(format!("{e}\n\n{}", usage(kind))))?;
    let bytes = read_trace(&args.trace)?;
    let (validation, result) =
        check_trace(&bytes, &rule_catalog(kind, &scenario_args)).map_err(|e| Failure::Usage(e.to_string()))?;
    let text = if args.json {
        let value = serde_json::json!({
            "valid_log": validation.valid,
            "record_count": validation.record_count,
            "result": result,
        });
        format!("{}\n", serde_json::to_string_pretty(&value).expect("results serialize"))
    } else {
        render(&validation, &result)
    };
    io::stdout()
        .lock()
        .write_all(text.as_bytes())
        .map_err(|e| Failure::Failed(e.to_string()))?;
    let all_pass = result.component.iter().chain(&result.system).all(|o| o.passed);
    if validation.valid && all_pass {
        Ok(())
    } else {
        Err(Failure::Failed(String::new()))
    }
}
