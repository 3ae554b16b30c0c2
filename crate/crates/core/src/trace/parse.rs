use std::fmt;

use serde::Serialize;
use serde_json::Value;

use super::TraceRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LineErrorKind {
    Encoding,
    BlankLine,
    InvalidJson,
    NotAnObject,
    MissingField,
    TypeMismatch,
    InvalidValue,
    UnexpectedField,
}

impl fmt::Display for LineErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LineErrorKind::Encoding => "encoding",
            LineErrorKind::BlankLine => "blank-line",
            LineErrorKind::InvalidJson => "invalid-json",
            LineErrorKind::NotAnObject => "not-an-object",
            LineErrorKind::MissingField => "missing-field",
            LineErrorKind::TypeMismatch => "type-mismatch",
            LineErrorKind::InvalidValue => "invalid-value",
            LineErrorKind::UnexpectedField => "unexpected-field",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LineError {
    /// 1-based line number.
    pub line: usize,
    pub kind: LineErrorKind,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceValidationReport {
    pub valid: bool,
    pub line_errors: Vec<LineError>,
    pub record_count: usize,
}

const FIELDS: [&str; 4] = ["time", "entity", "event", "payload"];

/// Parses JSONL trace lines. Malformed lines are reported and skipped;
/// blank lines are tolerated only at the end of the stream.
pub fn parse_trace<I, L>(lines: I) -> (Vec<TraceRecord>, TraceValidationReport)
where
    I: IntoIterator<Item = L>,
    L: AsRef<str>,
{
    let lines: Vec<L> = lines.into_iter().collect();
    let decoded: Vec<Result<&str, String>> = lines.iter().map(|l| Ok(l.as_ref())).collect();
    parse_decoded(&decoded)
}

/// Parses a whole text blob (e.g. captured stdout).
pub fn parse_trace_str(text: &str) -> (Vec<TraceRecord>, TraceValidationReport) {
    parse_trace(text.split('\n'))
}

/// Parses raw bytes; lines that are not valid UTF-8 become `encoding` errors.
pub fn parse_trace_bytes(bytes: &[u8]) -> (Vec<TraceRecord>, TraceValidationReport) {
    let decoded: Vec<Result<&str, String>> = bytes
        .split(|&b| b == b'\n')
        .map(|l| std::str::from_utf8(l).map_err(|e| e.to_string()))
        .collect();
    parse_decoded(&decoded)
}

fn parse_decoded(lines: &[Result<&str, String>]) -> (Vec<TraceRecord>, TraceValidationReport) {
    let is_blank = |l: &Result<&str, String>| matches!(l, Ok(s) if s.trim().is_empty());
    let end = lines.iter().rposition(|l| !is_blank(l)).map_or(0, |i| i + 1);

    let mut records = Vec::new();
    let mut errors = Vec::new();
    for (i, line) in lines[..end].iter().enumerate() {
        let number = i + 1;
        match line {
            Err(e) => errors.push(LineError {
                line: number,
                kind: LineErrorKind::Encoding,
                message: e.clone(),
            }),
            Ok(text) => match parse_line(text.trim_end_matches('\r')) {
                Ok(record) => records.push(record),
                Err(problems) => errors.extend(problems.into_iter().map(|(kind, message)| LineError {
                    line: number,
                    kind,
                    message,
                })),
            },
        }
    }
    let report = TraceValidationReport {
        valid: errors.is_empty(),
        record_count: records.len(),
        line_errors: errors,
    };
    (records, report)
}

/// Parses one line into a record, or returns every problem found on it.
pub fn parse_line(text: &str) -> Result<TraceRecord, Vec<(LineErrorKind, String)>> {
    if text.trim().is_empty() {
        return Err(vec![(LineErrorKind::BlankLine, "blank line inside trace".into())]);
    }
    let value: Value = serde_json::from_str(text).map_err(|e| vec![(LineErrorKind::InvalidJson, e.to_string())])?;
    let Value::Object(mut obj) = value else {
        return Err(vec![(LineErrorKind::NotAnObject, "record is not a JSON object".into())]);
    };

    let mut problems = Vec::new();
    for key in obj.keys() {
        if !FIELDS.contains(&key.as_str()) {
            problems.push((LineErrorKind::UnexpectedField, format!("unexpected field {key:?}")));
        }
    }
    for key in FIELDS {
        if !obj.contains_key(key) {
            problems.push((LineErrorKind::MissingField, format!("missing field {key:?}")));
        }
    }

    let time = match obj.get("time") {
        Some(Value::Number(n)) => match n.as_f64() {
            Some(t) if t.is_finite() && t >= 0.0 => Some(t),
            _ => {
                problems.push((
                    LineErrorKind::InvalidValue,
                    format!("time {n} is negative or not finite"),
                ));
                None
            }
        },
        Some(other) => {
            problems.push((
                LineErrorKind::TypeMismatch,
                format!("time must be a number, got {}", kind_of(other)),
            ));
            None
        }
        None => None,
    };
    let mut text_field = |key: &str| match obj.get(key) {
        Some(Value::String(s)) if !s.is_empty() => Some(s.clone()),
        Some(Value::String(_)) => {
            problems.push((LineErrorKind::InvalidValue, format!("{key} must not be empty")));
            None
        }
        Some(other) => {
            problems.push((
                LineErrorKind::TypeMismatch,
                format!("{key} must be a string, got {}", kind_of(other)),
            ));
            None
        }
        None => None,
    };
    let entity = text_field("entity");
    let event = text_field("event");
    let payload = match obj.remove("payload") {
        Some(Value::Object(map)) => Some(map),
        Some(other) => {
            problems.push((
                LineErrorKind::TypeMismatch,
                format!("payload must be an object, got {}", kind_of(&other)),
            ));
            None
        }
        None => None,
    };

    match (time, entity, event, payload) {
        (Some(time), Some(entity), Some(event), Some(payload)) if problems.is_empty() => Ok(TraceRecord {
            time,
            entity,
            event,
            payload,
        }),
        _ => Err(problems),
    }
}

fn kind_of(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

/// Indices `i` where `records[i].time < records[i - 1].time`.
pub fn check_monotonic(records: &[TraceRecord]) -> Vec<usize> {
    records
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1].time < w[0].time)
        .map(|(i, _)| i + 1)
        .collect()
}
