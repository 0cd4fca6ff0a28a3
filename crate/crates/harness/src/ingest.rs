//! Delimited-text event streams: one event per line, `relation,v1,v2,...`.

use std::fmt::Write as _;
use std::io::{self, BufRead, Write};
use std::path::Path;

use resjoin::{Interner, JoinQuery, RelationId, StreamEvent};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Parses a stream. Blank lines and lines starting with `#` are skipped.
/// Arrival indexes count events from 1.
pub fn parse_stream(
    reader: impl BufRead,
    query: &JoinQuery,
    interner: &mut Interner,
) -> Result<Vec<StreamEvent>, IngestError> {
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let mut fields = text.split(',').map(str::trim);
        let name = fields.next().unwrap_or_default();
        let err = |message: String| IngestError::Parse {
            line: i + 1,
            message,
        };
        let rel = query
            .base_id(name)
            .ok_or_else(|| err(format!("unknown relation `{name}`")))?;
        let arity = query.base[rel.index()].arity();
        let mut values = Vec::with_capacity(arity);
        for f in fields {
            if f.is_empty() {
                return Err(err("empty field".into()));
            }
            values.push(interner.parse_value(f));
        }
        if values.len() != arity {
            return Err(err(format!(
                "relation {name} expects {arity} values, got {}",
                values.len()
            )));
        }
        events.push(StreamEvent::new(rel, values, events.len() as u64 + 1));
    }
    Ok(events)
}

pub fn read_stream(
    path: &Path,
    query: &JoinQuery,
    interner: &mut Interner,
) -> Result<Vec<StreamEvent>, IngestError> {
    let file = std::fs::File::open(path)?;
    parse_stream(io::BufReader::new(file), query, interner)
}

pub fn format_event(event: &StreamEvent, query: &JoinQuery, interner: &Interner) -> String {
    let mut line = query.base[event.relation.index()].name.clone();
    for &v in &event.values {
        let _ = write!(line, ",{}", interner.display(v));
    }
    line
}

pub fn write_stream(
    mut out: impl Write,
    events: &[StreamEvent],
    query: &JoinQuery,
    interner: &Interner,
) -> io::Result<()> {
    for e in events {
        writeln!(out, "{}", format_event(e, query, interner))?;
    }
    out.flush()
}

/// Renumbers arrivals from 1 in stream order.
pub fn renumber(events: &mut [StreamEvent]) {
    for (i, e) in events.iter_mut().enumerate() {
        e.arrival = i as u64 + 1;
    }
}

pub fn event(rel: usize, values: Vec<resjoin::Value>) -> StreamEvent {
    StreamEvent::new(RelationId(rel as u32), values, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::queries;
    use resjoin::Value;

    #[test]
    fn parses_edge_event() {
        let q = queries::load("line3").unwrap();
        let mut interner = Interner::new();
        let ev = parse_stream("G1,1,2\n".as_bytes(), &q, &mut interner).unwrap();
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].relation, q.base_id("G1").unwrap());
        assert_eq!(ev[0].values, vec![Value::Int(1), Value::Int(2)]);
        assert_eq!(ev[0].arrival, 1);
    }

    #[test]
    fn empty_input_is_empty_stream() {
        let q = queries::load("line3").unwrap();
        let ev = parse_stream("".as_bytes(), &q, &mut Interner::new()).unwrap();
        assert!(ev.is_empty());
    }

    #[test]
    fn errors_carry_line_numbers() {
        let q = queries::load("line3").unwrap();
        let text = "G1,1,2\n\nG2,1\n";
        match parse_stream(text.as_bytes(), &q, &mut Interner::new()) {
            Err(IngestError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        match parse_stream("H,1,2\n".as_bytes(), &q, &mut Interner::new()) {
            Err(IngestError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn strings_round_trip() {
        let q = queries::load("two_table").unwrap();
        let mut interner = Interner::new();
        let ev = parse_stream("R1,alice,7\n".as_bytes(), &q, &mut interner).unwrap();
        assert_eq!(format_event(&ev[0], &q, &interner), "R1,alice,7");
    }
}
