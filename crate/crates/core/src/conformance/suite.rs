use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ConformanceError;
use crate::scenarios::ScenarioKind;

pub const SUITE_VERSION: u32 = 1;

fn default_timeout() -> f64 {
    60.0
}

/// One intervention (flags) plus an optional input stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestCase {
    pub id: String,
    /// Ordered `(flag, value)` pairs, flags spelled with their leading `--`.
    #[serde(default)]
    pub args: Vec<(String, String)>,
    #[serde(default)]
    pub stdin: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

impl TestCase {
    pub fn tokens(&self) -> Vec<String> {
        self.args
            .iter()
            .flat_map(|(flag, value)| [flag.clone(), value.clone()])
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Suite {
    pub version: u32,
    pub scenario: String,
    pub cases: Vec<TestCase>,
}

impl Suite {
    pub fn from_json(text: &str) -> Result<Self, ConformanceError> {
        let suite: Suite = serde_json::from_str(text).map_err(|e| ConformanceError::Suite(e.to_string()))?;
        suite.validate()?;
        Ok(suite)
    }

    pub fn load(path: &Path) -> Result<Self, ConformanceError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ConformanceError::Suite(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn kind(&self) -> Result<ScenarioKind, ConformanceError> {
        Ok(self.scenario.parse()?)
    }

    pub fn validate(&self) -> Result<(), ConformanceError> {
        let bad = |m: String| Err(ConformanceError::Suite(m));
        if self.version != SUITE_VERSION {
            return bad(format!("unsupported suite version {}", self.version));
        }
        if self.cases.is_empty() {
            return Err(ConformanceError::EmptySuite);
        }
        let mut ids = BTreeSet::new();
        for case in &self.cases {
            if !ids.insert(case.id.as_str()) {
                return bad(format!("duplicate case id {:?}", case.id));
            }
            if !(case.timeout_secs.is_finite() && case.timeout_secs > 0.0) {
                return bad(format!("case {}: timeout_secs must be > 0", case.id));
            }
            if case.args.iter().any(|(flag, _)| flag.is_empty()) {
                return bad(format!("case {}: empty flag", case.id));
            }
        }
        Ok(())
    }
}

/// The suite shipped for each reference scenario: smoke, nominal and heavy-load cases.
pub fn bundled_suite(kind: ScenarioKind) -> Suite {
    let text = match kind {
        ScenarioKind::Abp => include_str!("../../suites/abp.json"),
        ScenarioKind::Seird => include_str!("../../suites/seird.json"),
        ScenarioKind::Barbershop => include_str!("../../suites/barbershop.json"),
        ScenarioKind::Iobs => include_str!("../../suites/iobs.json"),
    };
    Suite::from_json(text).expect("bundled suites are valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_suites_parse_and_match_their_scenario() {
        for kind in ScenarioKind::ALL {
            let suite = bundled_suite(kind);
            assert_eq!(suite.kind().unwrap(), kind);
            let ids: Vec<&str> = suite.cases.iter().map(|c| c.id.as_str()).collect();
            assert!(ids.iter().any(|i| i.starts_with("smoke")), "{kind}");
            assert!(ids.iter().any(|i| i.starts_with("nominal")), "{kind}");
            assert!(ids.iter().any(|i| i.starts_with("heavy")), "{kind}");
            for case in &suite.cases {
                kind.parse_args(&case.tokens()).unwrap();
            }
        }
    }

    #[test]
    fn tokens_flatten_pairs() {
        let case: TestCase =
            serde_json::from_str(r#"{"id": "a", "args": [["--seed", "3"], ["--timeout", "9"]]}"#).unwrap();
        assert_eq!(case.tokens(), ["--seed", "3", "--timeout", "9"]);
        assert_eq!(case.timeout_secs, 60.0);
    }

    #[test]
    fn rejects_bad_suites() {
        let dup = r#"{"version": 1, "scenario": "abp", "cases": [{"id": "a"}, {"id": "a"}]}"#;
        assert!(Suite::from_json(dup).is_err());
        let empty = r#"{"version": 1, "scenario": "abp", "cases": []}"#;
        assert!(matches!(Suite::from_json(empty), Err(ConformanceError::EmptySuite)));
        let version = r#"{"version": 2, "scenario": "abp", "cases": [{"id": "a"}]}"#;
        assert!(Suite::from_json(version).is_err());
        let timeout = r#"{"version": 1, "scenario": "abp", "cases": [{"id": "a", "timeout_secs": 0}]}"#;
        assert!(Suite::from_json(timeout).is_err());
        let extra = r#"{"version": 1, "scenario": "abp", "cases": [{"id": "a", "nope": 1}]}"#;
        assert!(Suite::from_json(extra).is_err());
    }
}
