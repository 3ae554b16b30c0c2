use std::io;

use serde::ser::Serialize;
use serde_json::ser::Formatter;
use serde_json::{Map, Value};

use super::TraceError;

/// One observable event: `(time, entity, event, payload)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub time: f64,
    pub entity: String,
    pub event: String,
    pub payload: Map<String, Value>,
}

impl TraceRecord {
    pub fn new(time: f64, entity: &str, event: &str, payload: Map<String, Value>) -> Self {
        Self {
            time,
            entity: entity.to_string(),
            event: event.to_string(),
            payload,
        }
    }

    pub fn validate(&self) -> Result<(), TraceError> {
        if !self.time.is_finite() || self.time < 0.0 {
            return Err(TraceError::Serialize(format!(
                "time must be finite and non-negative, got {}",
                self.time
            )));
        }
        if self.entity.is_empty() {
            return Err(TraceError::Serialize("empty entity".into()));
        }
        if self.event.is_empty() {
            return Err(TraceError::Serialize("empty event".into()));
        }
        Ok(())
    }

    /// Looks up a payload field.
    pub fn get(&self, key: &str) -> Option<&Value> {
        self.payload.get(key)
    }

    pub fn get_i64(&self, key: &str) -> Option<i64> {
        self.payload.get(key).and_then(Value::as_i64)
    }

    pub fn get_f64(&self, key: &str) -> Option<f64> {
        self.payload.get(key).and_then(Value::as_f64)
    }

    pub fn get_bool(&self, key: &str) -> Option<bool> {
        self.payload.get(key).and_then(Value::as_bool)
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.payload.get(key).and_then(Value::as_str)
    }

    pub fn is(&self, entity: &str, event: &str) -> bool {
        self.entity == entity && self.event == event
    }
}

/// JSON formatter using `", "` and `": "` separators on a single line.
struct SpacedFormatter;

impl Formatter for SpacedFormatter {
    fn begin_array_value<W: ?Sized + io::Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        if first {
            Ok(())
        } else {
            writer.write_all(b", ")
        }
    }

    fn begin_object_key<W: ?Sized + io::Write>(&mut self, writer: &mut W, first: bool) -> io::Result<()> {
        if first {
            Ok(())
        } else {
            writer.write_all(b", ")
        }
    }

    fn begin_object_value<W: ?Sized + io::Write>(&mut self, writer: &mut W) -> io::Result<()> {
        writer.write_all(b": ")
    }
}

fn write_json<T: Serialize + ?Sized>(out: &mut Vec<u8>, value: &T) -> Result<(), TraceError> {
    let mut ser = serde_json::Serializer::with_formatter(out, SpacedFormatter);
    value
        .serialize(&mut ser)
        .map_err(|e| TraceError::Serialize(e.to_string()))
}

/// Renders a record as one JSONL line (without the trailing newline).
///
/// Keys appear in the order `time, entity, event, payload`; payload keys keep
/// their insertion order. Times always carry a fractional part (`3.0`).
pub fn serialize_record(record: &TraceRecord) -> Result<String, TraceError> {
    record.validate()?;
    let mut out = Vec::with_capacity(128);
    out.extend_from_slice(b"{\"time\": ");
    write_json(&mut out, &record.time)?;
    out.extend_from_slice(b", \"entity\": ");
    write_json(&mut out, &record.entity)?;
    out.extend_from_slice(b", \"event\": ");
    write_json(&mut out, &record.event)?;
    out.extend_from_slice(b", \"payload\": ");
    write_json(&mut out, &record.payload)?;
    out.push(b'}');
    Ok(String::from_utf8(out).expect("serde_json emits UTF-8"))
}
