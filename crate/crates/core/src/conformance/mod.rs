//! Trace-based conformance evaluation.
//!
//! A simulator is run over a suite of test cases. Each case yields a validity
//! indicator `v` (clean exit, no timeout, schema-valid trace) and a
//! conformance score `c = v/2 * (component pass rate + system pass rate)`.
//! Suite scores are the means of `v` (OSS) and `c` (BCS).

mod report;
mod rules;
mod runner;
mod stats;
mod suite;

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;
use thiserror::Error;

pub use report::{Report, SuiteReport, Totals};
pub use rules::rule_catalog;
pub use runner::{run_case, Limits, RunOutcome, OUTPUT_LIMIT};
pub use stats::binomial_two_sided;
pub use suite::{bundled_suite, Suite, TestCase, SUITE_VERSION};

use crate::scenarios::{Args, ConfigError, ScenarioKind};
use crate::trace::{parse_trace_bytes, TraceRecord, TraceValidationReport};

#[derive(Debug, Error)]
pub enum ConformanceError {
    #[error("empty {0} rule set")]
    EmptyRuleSet(Level),
    #[error("empty test suite")]
    EmptySuite,
    #[error("case {case}: {source}")]
    CaseArgs {
        case: String,
        #[source]
        source: ConfigError,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("suite file: {0}")]
    Suite(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Component,
    System,
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::Component => "component",
            Level::System => "system",
        })
    }
}

/// Why a rule failed.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// First offending record, if the failure is local.
    pub index: Option<usize>,
    pub entities: BTreeSet<String>,
    pub message: String,
}

impl Violation {
    pub fn global(message: impl Into<String>) -> Self {
        Self {
            index: None,
            entities: BTreeSet::new(),
            message: message.into(),
        }
    }

    /// A violation located at `records[index]`, implicating its entity.
    pub fn at(records: &[TraceRecord], index: usize, message: impl Into<String>) -> Self {
        let mut entities = BTreeSet::new();
        if let Some(r) = records.get(index) {
            entities.insert(r.entity.clone());
        }
        Self {
            index: Some(index),
            entities,
            message: message.into(),
        }
    }

    pub fn with_entity(mut self, entity: &str) -> Self {
        self.entities.insert(entity.to_string());
        self
    }
}

type Check = Box<dyn Fn(&[TraceRecord]) -> Result<(), Violation> + Send + Sync>;

/// A predicate over a whole trace.
pub struct Rule {
    pub id: &'static str,
    pub level: Level,
    pub description: &'static str,
    check: Check,
}

impl Rule {
    pub fn new(
        id: &'static str,
        level: Level,
        description: &'static str,
        check: impl Fn(&[TraceRecord]) -> Result<(), Violation> + Send + Sync + 'static,
    ) -> Self {
        Self {
            id,
            level,
            description,
            check: Box::new(check),
        }
    }

    pub fn check(&self, records: &[TraceRecord]) -> Result<(), Violation> {
        (self.check)(records)
    }
}

impl fmt::Debug for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Rule")
            .field("id", &self.id)
            .field("level", &self.level)
            .finish_non_exhaustive()
    }
}

/// Component- and system-level rules for one scenario configuration.
#[derive(Debug)]
pub struct Catalog {
    pub component: Vec<Rule>,
    pub system: Vec<Rule>,
}

impl Catalog {
    pub fn rules(&self) -> impl Iterator<Item = &Rule> {
        self.component.iter().chain(&self.system)
    }

    pub fn get(&self, id: &str) -> Option<&Rule> {
        self.rules().find(|r| r.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub rule: String,
    pub index: Option<usize>,
    pub entities: Vec<String>,
    pub message: String,
}

impl Diagnostic {
    fn new(rule: &str, index: Option<usize>, message: impl Into<String>) -> Self {
        Self {
            rule: rule.to_string(),
            index,
            entities: Vec::new(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.rule)?;
        if let Some(i) = self.index {
            write!(f, " at record {i}")?;
        }
        if !self.entities.is_empty() {
            write!(f, " [{}]", self.entities.join(", "))?;
        }
        write!(f, ": {}", self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RuleOutcome {
    pub rule: String,
    pub passed: bool,
}

/// Result of checking one trace against a catalog.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseResult {
    pub v: u8,
    pub c: f64,
    pub component: Vec<RuleOutcome>,
    pub system: Vec<RuleOutcome>,
    pub diagnostics: Vec<Diagnostic>,
}

/// `c = v/2 * (comp_pass/comp_total + sys_pass/sys_total)`.
pub fn conformance_score(
    v: u8,
    comp_pass: usize,
    comp_total: usize,
    sys_pass: usize,
    sys_total: usize,
) -> Result<f64, ConformanceError> {
    if comp_total == 0 {
        return Err(ConformanceError::EmptyRuleSet(Level::Component));
    }
    if sys_total == 0 {
        return Err(ConformanceError::EmptyRuleSet(Level::System));
    }
    let rate = |pass: usize, total: usize| pass as f64 / total as f64;
    Ok(0.5 * f64::from(v) * (rate(comp_pass, comp_total) + rate(sys_pass, sys_total)))
}

/// Applies every rule in `catalog` to `records` and scores the case.
pub fn score_case(records: &[TraceRecord], catalog: &Catalog, v: u8) -> Result<CaseResult, ConformanceError> {
    let mut diagnostics = Vec::new();
    let mut evaluate = |rules: &[Rule]| -> Vec<RuleOutcome> {
        rules
            .iter()
            .map(|rule| {
                let result = rule.check(records);
                if let Err(violation) = &result {
                    diagnostics.push(Diagnostic {
                        rule: rule.id.to_string(),
                        index: violation.index,
                        entities: violation.entities.iter().cloned().collect(),
                        message: violation.message.clone(),
                    });
                }
                RuleOutcome {
                    rule: rule.id.to_string(),
                    passed: result.is_ok(),
                }
            })
            .collect()
    };
    let component = evaluate(&catalog.component);
    let system = evaluate(&catalog.system);
    let passed = |o: &[RuleOutcome]| o.iter().filter(|o| o.passed).count();
    let c = conformance_score(v, passed(&component), component.len(), passed(&system), system.len())?;
    Ok(CaseResult {
        v,
        c,
        component,
        system,
        diagnostics,
    })
}

/// Checks a standalone trace: validity plus every catalog rule.
pub fn check_trace(bytes: &[u8], catalog: &Catalog) -> Result<(TraceValidationReport, CaseResult), ConformanceError> {
    let (records, report) = parse_trace_bytes(bytes);
    let v = u8::from(report.valid);
    let mut result = score_case(&records, catalog, v)?;
    result.diagnostics.splice(0..0, validity_diagnostics(&report));
    Ok((report, result))
}

fn validity_diagnostics(report: &TraceValidationReport) -> Vec<Diagnostic> {
    report
        .line_errors
        .iter()
        .take(20)
        .map(|e| Diagnostic::new("valid-log", None, format!("line {}: {}: {}", e.line, e.kind, e.message)))
        .collect()
}

/// Outcome of one suite case: how the process ended plus its scores.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseReport {
    pub id: String,
    pub args: Vec<String>,
    pub exit_code: Option<i32>,
    pub timed_out: bool,
    pub output_truncated: bool,
    pub valid_log: bool,
    pub record_count: usize,
    #[serde(flatten)]
    pub result: CaseResult,
}

/// Scores a finished run of `case`.
pub fn assess(case: &TestCase, kind: ScenarioKind, outcome: &RunOutcome) -> Result<CaseReport, ConformanceError> {
    let args = Args::parse(kind.flags(), &case.tokens()).map_err(|source| ConformanceError::CaseArgs {
        case: case.id.clone(),
        source,
    })?;
    let catalog = rule_catalog(kind, &args);
    let (records, report) = parse_trace_bytes(&outcome.stdout);
    let clean_exit = outcome.exit_code == Some(0) && outcome.spawn_error.is_none();
    let v = u8::from(clean_exit && !outcome.timed_out && !outcome.truncated && report.valid);
    let mut result = score_case(&records, &catalog, v)?;

    let mut pre = Vec::new();
    if let Some(e) = &outcome.spawn_error {
        pre.push(Diagnostic::new("spawn-failure", None, e.clone()));
    }
    if outcome.timed_out {
        pre.push(Diagnostic::new(
            "timeout",
            None,
            format!("killed after {} s", case.timeout_secs),
        ));
    }
    if outcome.truncated {
        pre.push(Diagnostic::new("output-limit", None, "stdout exceeded the output cap"));
    }
    if outcome.spawn_error.is_none() && !outcome.timed_out && outcome.exit_code != Some(0) {
        let mut message = match outcome.exit_code {
            Some(code) => format!("exit status {code}"),
            None => "terminated by signal".to_string(),
        };
        let tail = String::from_utf8_lossy(&outcome.stderr_tail);
        if let Some(line) = tail.lines().rev().find(|l| !l.trim().is_empty()) {
            message.push_str(&format!("; stderr: {}", line.trim()));
        }
        pre.push(Diagnostic::new("nonzero-exit", None, message));
    }
    pre.extend(validity_diagnostics(&report));
    result.diagnostics.splice(0..0, pre);

    Ok(CaseReport {
        id: case.id.clone(),
        args: case.tokens(),
        exit_code: outcome.exit_code,
        timed_out: outcome.timed_out,
        output_truncated: outcome.truncated,
        valid_log: report.valid,
        record_count: records.len(),
        result,
    })
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}

/// Runs every case of `suite` against `simulator` (up to `jobs` at once)
/// and aggregates OSS and BCS. Results keep the suite's case order.
pub fn evaluate_suite(
    simulator: &[String],
    suite: &Suite,
    kind: ScenarioKind,
    jobs: usize,
) -> Result<SuiteReport, ConformanceError> {
    if suite.cases.is_empty() {
        return Err(ConformanceError::EmptySuite);
    }
    for case in &suite.cases {
        Args::parse(kind.flags(), &case.tokens()).map_err(|source| ConformanceError::CaseArgs {
            case: case.id.clone(),
            source,
        })?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| ConformanceError::Suite(e.to_string()))?;
    let reports: Vec<Result<CaseReport, ConformanceError>> = pool.install(|| {
        use rayon::prelude::*;
        suite
            .cases
            .par_iter()
            .map(|case| assess(case, kind, &run_case(simulator, case, &Limits::default())))
            .collect()
    });
    let cases = reports.into_iter().collect::<Result<Vec<_>, _>>()?;
    SuiteReport::new(kind, simulator, cases)
}
