use std::fmt::Write as _;

use serde::Serialize;

use super::{mean, CaseReport, ConformanceError};
use crate::scenarios::ScenarioKind;

pub const REPORT_VERSION: u32 = 1;

/// Scores of one suite run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub scenario: String,
    pub simulator: Vec<String>,
    pub oss: f64,
    pub bcs: f64,
    pub cases: Vec<CaseReport>,
}

impl SuiteReport {
    pub fn new(kind: ScenarioKind, simulator: &[String], cases: Vec<CaseReport>) -> Result<Self, ConformanceError> {
        let vs: Vec<f64> = cases.iter().map(|c| f64::from(c.result.v)).collect();
        let cs: Vec<f64> = cases.iter().map(|c| c.result.c).collect();
        Ok(Self {
            scenario: kind.name().to_string(),
            simulator: simulator.to_vec(),
            oss: mean(&vs).ok_or(ConformanceError::EmptySuite)?,
            bcs: mean(&cs).ok_or(ConformanceError::EmptySuite)?,
            cases,
        })
    }
}

/// Per-scenario scores summed across suites, for side-by-side display only.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Totals {
    pub scenarios: usize,
    pub oss_sum: f64,
    pub bcs_sum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub version: u32,
    pub suites: Vec<SuiteReport>,
    pub totals: Totals,
}

impl Report {
    pub fn new(suites: Vec<SuiteReport>) -> Self {
        let totals = Totals {
            scenarios: suites.len(),
            oss_sum: suites.iter().map(|s| s.oss).sum(),
            bcs_sum: suites.iter().map(|s| s.bcs).sum(),
        };
        Self {
            version: REPORT_VERSION,
            suites,
            totals,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    /// Human-readable rendering of this report.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for suite in &self.suites {
            let _ = writeln!(
                out,
                "{}: OSS {:.4}  BCS {:.4}  ({} cases)",
                suite.scenario,
                suite.oss,
                suite.bcs,
                suite.cases.len()
            );
            for case in &suite.cases {
                let _ = writeln!(
                    out,
                    "  {:<28} v={} c={:.4} records={}",
                    case.id, case.result.v, case.result.c, case.record_count
                );
                for d in &case.result.diagnostics {
                    let _ = writeln!(out, "    - {d}");
                }
            }
        }
        if self.suites.len() > 1 {
            let _ = writeln!(
                out,
                "total over {} scenarios: OSS {:.4}  BCS {:.4}",
                self.totals.scenarios, self.totals.oss_sum, self.totals.bcs_sum
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformance::{CaseResult, Diagnostic};

    fn case(id: &str, v: u8, c: f64) -> CaseReport {
        CaseReport {
            id: id.into(),
            args: vec![],
            exit_code: Some(if v == 1 { 0 } else { 1 }),
            timed_out: false,
            output_truncated: false,
            valid_log: true,
            record_count: 0,
            result: CaseResult {
                v,
                c,
                component: vec![],
                system: vec![],
                diagnostics: vec![Diagnostic::new("r", Some(3), "bad")],
            },
        }
    }

    #[test]
    fn suite_scores_are_means() {
        let s = SuiteReport::new(
            ScenarioKind::Abp,
            &["sim".into()],
            vec![case("a", 1, 1.0), case("b", 1, 0.5), case("c", 0, 0.0)],
        )
        .unwrap();
        assert_eq!(s.oss, 2.0 / 3.0);
        assert_eq!(s.bcs, 0.5);
        assert!(SuiteReport::new(ScenarioKind::Abp, &[], vec![]).is_err());
    }

    #[test]
    fn totals_sum_scenarios_and_summary_mentions_them() {
        let a = SuiteReport::new(ScenarioKind::Abp, &[], vec![case("a", 1, 1.0)]).unwrap();
        let b = SuiteReport::new(ScenarioKind::Iobs, &[], vec![case("b", 1, 0.5)]).unwrap();
        let report = Report::new(vec![a, b]);
        assert_eq!(report.totals.bcs_sum, 1.5);
        let text = report.summary();
        assert!(text.contains("abp: OSS 1.0000  BCS 1.0000"));
        assert!(text.contains("r at record 3: bad"));
        assert!(text.contains("total over 2 scenarios"));
        let json: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        assert_eq!(json["suites"][1]["cases"][0]["c"], 0.5);
    }
}
