//! JSONL event traces: one `{"time", "entity", "event", "payload"}` object per line.

mod parse;
mod record;

use std::io::{self, Write};

use thiserror::Error;

pub use parse::{
    check_monotonic, parse_line, parse_trace, parse_trace_bytes, parse_trace_str, LineError, LineErrorKind,
    TraceValidationReport,
};
pub use record::{serialize_record, TraceRecord};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("cannot serialize trace record: {0}")]
    Serialize(String),
    #[error("trace output failed: {0}")]
    Io(#[from] io::Error),
}

/// Destination for records emitted during a run.
pub trait TraceSink {
    fn write(&mut self, record: &TraceRecord) -> Result<(), TraceError>;

    fn flush(&mut self) -> Result<(), TraceError> {
        Ok(())
    }
}

/// Keeps records in memory.
#[derive(Debug, Default, Clone)]
pub struct MemorySink {
    pub records: Vec<TraceRecord>,
}

impl TraceSink for MemorySink {
    fn write(&mut self, record: &TraceRecord) -> Result<(), TraceError> {
        record.validate()?;
        self.records.push(record.clone());
        Ok(())
    }
}

/// Writes each record as a JSONL line.
pub struct JsonlSink<W: Write> {
    writer: W,
}

impl<W: Write> JsonlSink<W> {
    pub fn new(writer: W) -> Self {
        Self { writer }
    }

    pub fn into_inner(self) -> W {
        self.writer
    }
}

impl<W: Write> TraceSink for JsonlSink<W> {
    fn write(&mut self, record: &TraceRecord) -> Result<(), TraceError> {
        let line = serialize_record(record)?;
        self.writer.write_all(line.as_bytes())?;
        self.writer.write_all(b"\n")?;
        Ok(())
    }

    fn flush(&mut self) -> Result<(), TraceError> {
        self.writer.flush()?;
        Ok(())
    }
}

/// Serializes a whole trace, one line per record, each terminated by `\n`.
pub fn to_jsonl(records: &[TraceRecord]) -> Result<String, TraceError> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serialize_record(r)?);
        out.push('\n');
    }
    Ok(out)
}
