//! Trusted provenance journal.
//!
//! The bus — never a worker — appends one self-contained key/value record
//! per state transition, one JSON document per line, flushed per record.
//! Line order is the authoritative event order. Capability tokens are
//! redacted before they are written.

use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::{self, Write};
use std::sync::{Arc, Mutex};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordKind {
    Register,
    Accept,
    Submit,
    Forward,
    Child,
    Freeze,
    Complete,
    Unregister,
}

impl fmt::Display for RecordKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            RecordKind::Register => "register",
            RecordKind::Accept => "accept",
            RecordKind::Submit => "submit",
            RecordKind::Forward => "forward",
            RecordKind::Child => "child",
            RecordKind::Freeze => "freeze",
            RecordKind::Complete => "complete",
            RecordKind::Unregister => "unregister",
        };
        f.write_str(name)
    }
}

/// One provenance record. Absent fields are omitted from the line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub ts: f64,
    pub kind: RecordKind,
    pub actor: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub worker: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub job: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub carvpath: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mime: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ext: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub state: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub digest: Option<String>,
}

impl Record {
    /// The record with the timestamp zeroed; used when comparing journals
    /// for observational equivalence.
    pub fn without_ts(&self) -> Record {
        Record { ts: 0.0, ..self.clone() }
    }
}

/// Clock injected into the journal; seconds as a decimal number.
pub type Clock = Box<dyn FnMut() -> f64 + Send>;

fn system_clock() -> Clock {
    Box::new(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0)
    })
}

/// Append-only journal over any writer.
pub struct Journal {
    sink: Box<dyn Write + Send>,
    clock: Clock,
}

impl Journal {
    pub fn new(sink: Box<dyn Write + Send>) -> Journal {
        Journal { sink, clock: system_clock() }
    }

    pub fn with_clock(sink: Box<dyn Write + Send>, clock: Clock) -> Journal {
        Journal { sink, clock }
    }

    /// Journal appending to a file, creating it when missing.
    pub fn to_file(path: &std::path::Path) -> io::Result<Journal> {
        let file = std::fs::File::options().create(true).append(true).open(path)?;
        Ok(Journal::new(Box::new(file)))
    }

    /// Journal into a shared in-memory buffer.
    pub fn in_memory() -> (Journal, JournalBuffer) {
        let buffer = JournalBuffer::default();
        (Journal::new(Box::new(buffer.clone())), buffer)
    }

    pub(crate) fn append(&mut self, mut record: Record) -> io::Result<()> {
        record.ts = (self.clock)();
        let line = serde_json::to_string(&record).expect("record serializes");
        writeln!(self.sink, "{line}")?;
        self.sink.flush()
    }
}

/// Shared growable buffer usable as a journal sink.
#[derive(Clone, Default)]
pub struct JournalBuffer {
    inner: Arc<Mutex<Vec<u8>>>,
}

impl JournalBuffer {
    pub fn contents(&self) -> String {
        String::from_utf8(self.inner.lock().expect("journal buffer poisoned").clone())
            .expect("journal lines are utf-8")
    }

    /// Parse the buffered lines back into records.
    pub fn records(&self) -> Vec<Record> {
        parse_records(&self.contents()).expect("buffered journal parses")
    }
}

impl Write for JournalBuffer {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.inner.lock().expect("journal buffer poisoned").extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Parse journal text, one record per non-empty line.
pub fn parse_records(text: &str) -> Result<Vec<Record>, serde_json::Error> {
    text.lines()
        .filter(|line| !line.trim().is_empty())
        .map(serde_json::from_str)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_round_trip_as_json_lines() {
        let (mut journal, buffer) = Journal::in_memory();
        journal.clock = Box::new(|| 42.5);
        journal
            .append(Record {
                ts: 0.0,
                kind: RecordKind::Register,
                actor: "carver".into(),
                worker: Some("W-abc".into()),
                job: None,
                carvpath: None,
                mime: None,
                ext: None,
                state: None,
                digest: None,
            })
            .unwrap();
        let text = buffer.contents();
        assert_eq!(text.lines().count(), 1);
        assert!(text.contains("\"kind\":\"register\""));
        assert!(text.contains("\"ts\":42.5"));
        assert!(!text.contains("job"), "absent fields are omitted: {text}");
        let records = buffer.records();
        assert_eq!(records[0].actor, "carver");
        assert_eq!(records[0].kind, RecordKind::Register);
    }
}
