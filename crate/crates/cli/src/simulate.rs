use std::io::{self, BufWriter, Read, Write};
use std::path::Path;

use devsgen_core::genpipe::{Program, RuntimeError};
use devsgen_core::scenarios::{run_into, ConfigError};
use devsgen_core::trace::JsonlSink;
use devsgen_core::ScenarioKind;

use crate::{Failure, Outcome};

pub fn parse_scenario(name: &str) -> Result<ScenarioKind, Failure> {
    name.parse().map_err(|_| {
        let known: Vec<&str> = ScenarioKind::ALL.iter().map(|k| k.name()).collect();
        Failure::Usage(format!("unknown scenario {name:?} (known: {})", known.join(", ")))
    })
}

/// Flag table for one scenario.
pub fn usage(kind: ScenarioKind) -> String {
    let mut out = format!("{}: {}\n", kind.name(), kind.about());
    for flag in kind.flags() {
        out.push_str(&format!(
            "  --{:<18} <{}>  {} [default: {}]\n",
            flag.name, flag.kind, flag.help, flag.default
        ));
    }
    out
}

fn config_failure(kind: ScenarioKind, error: ConfigError) -> Failure {
    match error {
        ConfigError::Usage(message) => Failure::Usage(format!("{message}\n\n{}", usage(kind))),
        other => Failure::Usage(other.to_string()),
    }
}

fn stdout_sink() -> JsonlSink<BufWriter<io::StdoutLock<'static>>> {
    JsonlSink::new(BufWriter::new(io::stdout().lock()))
}

pub fn simulate(scenario: &str, flags: &[String]) -> Outcome {
    let kind = parse_scenario(scenario)?;
    let args = kind.parse_args(flags).map_err(|e| config_failure(kind, e))?;
    let stdin = if kind.reads_stdin(&args) {
        let mut text = String::new();
        io::stdin()
            .read_to_string(&mut text)
            .map_err(|e| Failure::Usage(format!("cannot read stdin: {e}")))?;
        Some(text)
    } else {
        None
    };
    let built = kind
        .build(&args, stdin.as_deref())
        .map_err(|e| config_failure(kind, e))?;
    let sink = run_into(built, stdout_sink()).map_err(|e| Failure::Failed(format!("simulation failed: {e}")))?;
    finish(sink)
}

fn finish(sink: JsonlSink<BufWriter<io::StdoutLock<'static>>>) -> Outcome {
    sink.into_inner()
        .flush()
        .map_err(|e| Failure::Failed(format!("cannot write trace: {e}")))
}

pub fn run_artifact(dir: &Path, flags: &[String]) -> Outcome {
    let program = Program::load(dir).map_err(|e| Failure::Usage(e.to_string()))?;
    match program.run_into(flags, stdout_sink()) {
        Ok(sink) => finish(sink),
        Err(RuntimeError::Usage(message)) => {
            let mut text = message;
            if let Ok(flags) = program.flags() {
                text.push_str("\n\nflags:\n");
                for flag in flags {
                    text.push_str(&format!("  --{} [default: {}]\n", flag.name, flag.default));
                }
            }
            Err(Failure::Usage(text))
        }
        Err(e @ RuntimeError::Load(_)) => Err(Failure::Usage(e.to_string())),
        Err(e) => Err(Failure::Failed(format!("simulation failed: {e}"))),
    }
}

pub fn list() -> Outcome {
    let mut out = io::stdout().lock();
    for kind in ScenarioKind::ALL {
        writeln!(out, "{}", usage(kind)).map_err(|e| Failure::Failed(e.to_string()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_scenario_is_a_usage_error() {
        match parse_scenario("pingpong") {
            Err(Failure::Usage(message)) => assert!(message.contains("abp"), "{message}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn usage_lists_every_flag_with_its_default() {
        let text = usage(ScenarioKind::Abp);
        for flag in ScenarioKind::Abp.flags() {
            assert!(text.contains(&format!("--{}", flag.name)));
            assert!(text.contains(&format!("[default: {}]", flag.default)));
        }
    }
}
